#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "batchmine/binary_io.hpp"
#include "batchmine/corpus.hpp"
#include "batchmine/error.hpp"
#include "support.hpp"

namespace bm = batchmine;
namespace fs = std::filesystem;
using testsupport::scratch;

namespace {

bm::EmbeddingCorpus identity2() {
  bm::EmbeddingCorpus c;
  c.task_id = "id2";
  c.queries = bm::Matrix(2, 2, {1, 0, 0, 1});
  c.positives = bm::Matrix(2, 2, {1, 0, 0, 1});
  return c;
}

}  // namespace

TEST_CASE("identity corpus loads with its shape") {
  const auto path = scratch("id2.corpus");
  bm::save_corpus(identity2(), path);
  const auto c = bm::load_corpus(path);
  CHECK(c.n() == 2);
  CHECK(c.d() == 2);
  CHECK(c == identity2());
}

TEST_CASE("truncated corpus reports a short payload") {
  const auto path = scratch("trunc.corpus");
  bm::save_corpus(testsupport::random_corpus(8, 4, 1), path);
  const auto bytes = bm::read_file(path);
  std::uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 4);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 4 + header_len + 20);
  bm::write_file(path, cut);
  CHECK_THROWS_WITH_AS(bm::load_corpus(path), "payload shorter than n·d·4 bytes", bm::FormatError);
}

TEST_CASE("random corpus round-trips bitwise") {
  auto c = testsupport::random_corpus(100, 16, 7);
  c.prompt_metadata["instruction"] = "find the passage";
  const auto path = scratch("rt.corpus");
  const auto first = bm::save_corpus(c, path);
  std::uint64_t loaded_sum = 0;
  const auto back = bm::load_corpus(path, loaded_sum);
  CHECK(back == c);
  CHECK(std::memcmp(back.queries.data.data(), c.queries.data.data(), c.queries.data.size() * 4) == 0);
  CHECK(first == loaded_sum);
  CHECK(bm::save_corpus(c, scratch("rt2.corpus")) == first);
  // The returned checksum is the FNV-1a of every byte before the trailer.
  const auto bytes = bm::read_file(path);
  CHECK(bm::fnv1a64(std::span(bytes).first(bytes.size() - 8)) == first);
}

TEST_CASE("labeled corpus round-trips") {
  const auto c = testsupport::random_corpus(30, 3, 2, bm::TaskCategory::classification);
  const auto path = scratch("labels.corpus");
  bm::save_corpus(c, path);
  CHECK(bm::load_corpus(path) == c);
}

TEST_CASE("corrupt byte fails the checksum") {
  const auto path = scratch("corrupt.corpus");
  bm::save_corpus(testsupport::random_corpus(10, 4, 3), path);
  auto bytes = bm::read_file(path);
  bytes[bytes.size() - 20] ^= 0x40;
  bm::write_file(path, bytes);
  CHECK_THROWS_AS(bm::load_corpus(path), bm::FormatError);
}

TEST_CASE("malformed header is rejected") {
  const auto path = scratch("header.corpus");
  const std::vector<std::uint8_t> body(16, 0);
  bm::write_artifact(path, {{"kind", "corpus"}, {"format_version", 1}, {"task_id", "x"}}, body);
  CHECK_THROWS_AS(bm::load_corpus(path), bm::FormatError);
}

TEST_CASE("missing file is an I/O error") {
  CHECK_THROWS_AS(bm::load_corpus(scratch("does_not_exist.corpus")), bm::IoError);
}

TEST_CASE("saving to an unwritable path is an I/O error") {
  CHECK_THROWS_AS(bm::save_corpus(identity2(), "/proc/batchmine/none.corpus"), bm::IoError);
}

TEST_CASE("validation rejects zero rows and bad shapes") {
  auto c = identity2();
  c.positives.data = {1, 0, 0, 0};
  CHECK_THROWS_AS(bm::validate_corpus(c), bm::ValidationError);
  auto d = identity2();
  d.positives = bm::Matrix(2, 3, {1, 0, 0, 0, 1, 0});
  CHECK_THROWS_WITH_AS(bm::validate_corpus(d), "dimension mismatch between queries and positives",
                       bm::ValidationError);
  auto e = identity2();
  e.task_id = "bad id";
  CHECK_THROWS_AS(bm::validate_corpus(e), bm::ValidationError);
}

TEST_CASE("normalize_rows") {
  const auto a = bm::normalize_rows(bm::Matrix(1, 2, {3, 4}));
  CHECK(a.data[0] == doctest::Approx(0.6f).epsilon(1e-7));
  CHECK(a.data[1] == doctest::Approx(0.8f).epsilon(1e-7));
  const bm::Matrix eye(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(bm::normalize_rows(eye) == eye);
  const auto r = bm::normalize_rows(testsupport::random_corpus(50, 8, 11).queries);
  for (std::size_t i = 0; i < r.rows; ++i) {
    double sq = 0;
    for (std::size_t k = 0; k < r.cols; ++k) sq += double(r.data[i * r.cols + k]) * r.data[i * r.cols + k];
    CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-6);
  }
  CHECK_THROWS_AS(bm::normalize_rows(bm::Matrix(1, 2, {0, 0})), bm::ValidationError);
}

TEST_CASE("corpus manifest round-trip and verification") {
  const auto dir = scratch("manifest_dir");
  fs::create_directories(dir);
  auto c = testsupport::random_corpus(12, 4, 5);
  c.task_id = "alpha";
  const auto sum = bm::save_corpus(c, dir / "alpha.corpus");
  bm::CorpusManifest m;
  m.entries.push_back({"alpha", "alpha.corpus", 12, 4, sum});
  bm::write_corpus_manifest(m, dir / "corpora.tsv");
  const auto back = bm::read_corpus_manifest(dir / "corpora.tsv");
  CHECK(back == m);
  CHECK_NOTHROW(bm::verify_corpus_manifest(back, dir));
  m.entries[0].checksum ^= 1;
  CHECK_THROWS_AS(bm::verify_corpus_manifest(m, dir), bm::ValidationError);
}
