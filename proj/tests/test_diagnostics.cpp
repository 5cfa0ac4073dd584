#include <doctest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "batchmine/diagnostics.hpp"
#include "batchmine/error.hpp"
#include "support.hpp"

namespace bm = batchmine;
using Big = boost::multiprecision::cpp_bin_float_50;
using testsupport::scratch;

namespace {

std::vector<bm::Batch> chunks(std::uint32_t n, std::uint32_t size, std::uint64_t seed) {
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::mt19937_64 rng(seed);
  if (seed != 0) std::shuffle(order.begin(), order.end(), rng);
  std::vector<bm::Batch> epoch;
  for (std::uint32_t b = 0; b < n; b += size) {
    bm::Batch batch;
    batch.task_id = "t";
    batch.members.assign(order.begin() + b, order.begin() + std::min(n, b + size));
    epoch.push_back(batch);
  }
  return epoch;
}

// Cosine matrix in 50-digit arithmetic straight from the stored floats.
std::vector<std::vector<Big>> big_cosines(const bm::EmbeddingCorpus& c) {
  const std::size_t n = c.n(), d = c.d();
  auto norm = [&](const bm::Matrix& m, std::size_t i) {
    Big s = 0;
    for (std::size_t k = 0; k < d; ++k) s += Big(m.data[i * d + k]) * Big(m.data[i * d + k]);
    return sqrt(s);
  };
  std::vector<std::vector<Big>> s(n, std::vector<Big>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const Big qi = norm(c.queries, i);
    for (std::size_t j = 0; j < n; ++j) {
      Big dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += Big(c.queries.data[i * d + k]) * Big(c.positives.data[j * d + k]);
      s[i][j] = dot / (qi * norm(c.positives, j));
    }
  }
  return s;
}

// Direct evaluation of the loss with each query's denominator over `denom(i)`.
template <typename F>
Big big_loss(const std::vector<std::vector<Big>>& s, double tau, F denom) {
  Big total = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    Big sum = 0;
    for (std::uint32_t j : denom(i)) sum += exp(s[i][j] / tau);
    total += log(sum) - s[i][i] / tau;
  }
  return total;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

bm::EmbeddingCorpus identical_rows(std::uint32_t n) {
  bm::EmbeddingCorpus c;
  c.task_id = "same";
  c.queries = bm::Matrix(n, 3);
  c.positives = bm::Matrix(n, 3);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) c.queries.data[i * 3 + k] = c.positives.data[i * 3 + k] = float(k + 1);
  }
  return c;
}

bm::EmbeddingCorpus identity(std::uint32_t n) {
  bm::EmbeddingCorpus c;
  c.task_id = "eye";
  c.queries = bm::Matrix(n, n);
  c.positives = bm::Matrix(n, n);
  for (std::uint32_t i = 0; i < n; ++i) c.queries.data[i * n + i] = c.positives.data[i * n + i] = 1;
  return c;
}

}  // namespace

TEST_CASE("two orthonormal pairs at unit temperature") {
  const auto loss = bm::global_loss(identity(2), 1.0);
  CHECK(loss.mean == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
  CHECK(loss.mean == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK(loss.total == doctest::Approx(2 * loss.mean).epsilon(1e-12));
}

TEST_CASE("identical rows give a uniform softmax") {
  for (std::uint32_t n : {2u, 5u, 17u}) {
    CHECK(bm::global_loss(identical_rows(n), 1.0).mean == doctest::Approx(std::log(double(n))).epsilon(1e-12));
  }
}

TEST_CASE("global loss matches a 50-digit oracle at low temperature") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto c = testsupport::random_corpus(64, 16, seed);
    const auto s = big_cosines(c);
    std::vector<std::uint32_t> all(64);
    std::iota(all.begin(), all.end(), 0u);
    for (double tau : {0.02, 0.1, 1.0}) {
      const double oracle = big_loss(s, tau, [&](std::size_t) { return all; }).convert_to<double>();
      CHECK(rel(bm::global_loss(c, tau).total, oracle) <= 1e-9);
    }
  }
}

TEST_CASE("batch loss matches direct evaluation") {
  const auto c = testsupport::random_corpus(64, 16, 4);
  const auto s = big_cosines(c);
  auto epoch = chunks(64, 16, 3);
  epoch[0].hard_negatives = {epoch[1].members[0], epoch[2].members[5]};
  std::vector<std::uint32_t> batch_of(64);
  for (std::uint32_t b = 0; b < epoch.size(); ++b) {
    for (std::uint32_t i : epoch[b].members) batch_of[i] = b;
  }
  for (double tau : {0.02, 1.0}) {
    const double oracle = big_loss(s, tau, [&](std::size_t i) {
                            auto d = epoch[batch_of[i]].members;
                            d.insert(d.end(), epoch[batch_of[i]].hard_negatives.begin(),
                                     epoch[batch_of[i]].hard_negatives.end());
                            return d;
                          }).convert_to<double>();
    CHECK(rel(bm::batch_loss(c, epoch, tau).total, oracle) <= 1e-9);
  }
}

TEST_CASE("one batch holding everything has no gap") {
  const auto c = testsupport::random_corpus(40, 8, 2);
  const auto epoch = chunks(40, 40, 5);
  CHECK(bm::batch_loss(c, epoch, 0.02).total == bm::global_loss(c, 0.02).total);
  const auto bound = bm::bound_rhs(c, epoch, 40, 0.02);
  CHECK(std::abs(bound.value) <= 1e-9);
  const std::uint32_t Ks[] = {1, 40};
  const auto report = bm::loss_report(c, epoch, 0.02, Ks);
  CHECK(report.gap == 0.0);
}

TEST_CASE("batches of one have zero loss") {
  const auto c = testsupport::random_corpus(20, 8, 3);
  const auto loss = bm::batch_loss(c, chunks(20, 1, 0), 0.1);
  CHECK(loss.total == 0.0);
}

TEST_CASE("gap lies between zero and the bound") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto c = testsupport::random_corpus(64, seed % 2 ? 8 : 32, seed);
    const auto epoch = chunks(64, 16, seed + 1);
    for (double tau : {0.02, 0.1, 1.0}) {
      const std::uint32_t Ks[] = {1, 2, 4, 8, 16};
      const auto report = bm::loss_report(c, epoch, tau, Ks);
      CHECK(report.gap >= -1e-9);
      CHECK(report.gap == doctest::Approx(report.global_loss - report.batch_loss));
      for (double bound : report.bound_rhs) CHECK(report.gap <= bound + 1e-9);
    }
  }
}

TEST_CASE("bound at K=1 is the ratio of maxima") {
  const auto c = testsupport::random_corpus(48, 8, 7);
  const auto epoch = chunks(48, 12, 2);
  const double tau = 0.1;
  const bm::SimilarityRows rows(c);
  std::vector<std::uint32_t> batch_of(48);
  for (std::uint32_t b = 0; b < epoch.size(); ++b) {
    for (std::uint32_t i : epoch[b].members) batch_of[i] = b;
  }
  double expected = 0;
  for (std::uint32_t i = 0; i < 48; ++i) {
    double global_max = -1e300, batch_max = -1e300;
    for (std::uint32_t j = 0; j < 48; ++j) {
      global_max = std::max(global_max, rows.value(i, j));
      if (batch_of[j] == batch_of[i]) batch_max = std::max(batch_max, rows.value(i, j));
    }
    expected += std::log(48.0) + (global_max - batch_max) / tau;
  }
  CHECK(bm::bound_rhs(c, epoch, 1, tau).value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("head and tail add up to the denominators") {
  const auto c = testsupport::random_corpus(64, 16, 9);
  const auto epoch = chunks(64, 16, 4);
  const auto s = big_cosines(c);
  std::vector<std::uint32_t> batch_of(64);
  for (std::uint32_t b = 0; b < epoch.size(); ++b) {
    for (std::uint32_t i : epoch[b].members) batch_of[i] = b;
  }
  for (std::uint32_t K : {1u, 4u, 16u}) {
    const auto hl = bm::bound_rhs(c, epoch, K, 0.02).decomposition;
    CHECK(hl.K == K);
    for (std::uint32_t i = 0; i < 64; ++i) {
      Big global = 0, batch = 0;
      for (std::uint32_t j = 0; j < 64; ++j) {
        const Big e = exp(s[i][j] / 0.02);
        global += e;
        if (batch_of[j] == batch_of[i]) batch += e;
      }
      const double g = (log(global)).convert_to<double>();
      const double b = (log(batch)).convert_to<double>();
      CHECK(hl.global_H[i] > 0);
      CHECK(hl.batch_H[i] > 0);
      CHECK(hl.global_L[i] > 0);
      if (K < 16) CHECK(hl.batch_L[i] > 0);
      CHECK(rel(std::log(hl.global_H[i] + hl.global_L[i]) + hl.global_shift[i], g) <= 1e-9);
      CHECK(rel(std::log(hl.batch_H[i] + hl.batch_L[i]) + hl.batch_shift[i], b) <= 1e-9);
    }
  }
}

TEST_CASE("stronger batch head does not raise the query term") {
  const auto c = testsupport::random_corpus(32, 8, 11);
  auto epoch = chunks(32, 8, 0);
  const bm::SimilarityRows rows(c);
  const std::uint32_t i = 0, K = 2;
  // Swap the weakest member of query 0's batch for its best outside candidate.
  auto& members = epoch[0].members;
  std::uint32_t weakest = 1, best = 8;
  for (std::uint32_t j = 1; j < 8; ++j) {
    if (rows.value(i, j) < rows.value(i, weakest)) weakest = j;
  }
  for (std::uint32_t j = 8; j < 32; ++j) {
    if (rows.value(i, j) > rows.value(i, best)) best = j;
  }
  auto term = [&](const bm::HLDecomposition& hl) {
    return std::log(32.0 / K) + std::log(hl.global_H[i]) + hl.global_shift[i] - std::log(hl.batch_H[i]) -
           hl.batch_shift[i];
  };
  const double before = term(bm::bound_rhs(c, epoch, K, 0.1).decomposition);
  const std::uint32_t partner_batch = best / 8;
  std::replace(members.begin(), members.end(), weakest, best);
  std::replace(epoch[partner_batch].members.begin(), epoch[partner_batch].members.end(), best, weakest);
  const double after = term(bm::bound_rhs(c, epoch, K, 0.1).decomposition);
  CHECK(after <= before + 1e-12);
}

TEST_CASE("loss and bound errors") {
  const auto c = testsupport::random_corpus(16, 4, 1);
  const auto epoch = chunks(16, 4, 0);
  CHECK_THROWS_AS(bm::global_loss(c, 0.0), bm::ValidationError);
  CHECK_THROWS_AS(bm::global_loss(c, -1.0), bm::ValidationError);
  CHECK_THROWS_AS(bm::bound_rhs(c, epoch, 5, 0.1), bm::ValidationError);
  CHECK_THROWS_AS(bm::bound_rhs(c, epoch, 0, 0.1), bm::ValidationError);
  auto broken = epoch;
  broken[0].members.pop_back();
  CHECK_THROWS_AS(bm::batch_loss(c, broken, 0.1), bm::ValidationError);
  broken[0].members.push_back(broken[1].members[0]);
  CHECK_THROWS_AS(bm::batch_loss(c, broken, 0.1), bm::ValidationError);
}

TEST_CASE("peakedness profiles") {
  const std::uint32_t Ks[] = {1};
  const auto eye = bm::peakedness(identity(6), 1.0, 4, Ks);
  CHECK(eye.profile == std::vector<double>{1, 0, 0, 0});
  const auto flat = bm::peakedness(identical_rows(6), 1.0, 6, Ks);
  for (double v : flat.profile) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(flat.tail_to_head[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK_THROWS_AS(bm::peakedness(identity(6), 1.0, 7, Ks), bm::ValidationError);
}

TEST_CASE("planted tail-to-head ratio collapses at the cluster size") {
  const auto planted = bm::make_planted_corpus(8, 8, 32, 0.8, 0.3, 5);
  const std::uint32_t Ks[] = {1, 8};
  const auto r = bm::peakedness(planted.corpus, 0.1, 8, Ks);
  CHECK(r.tail_to_head[1] < 0.1 * r.tail_to_head[0]);
}

TEST_CASE("planted corpus construction") {
  const auto clean = bm::make_planted_corpus(2, 5, 16, 0.7, 0.0, 3);
  CHECK_NOTHROW(bm::validate_corpus(clean.corpus));
  REQUIRE(clean.cluster_of.size() == 10);
  const bm::SimilarityRows rows(clean.corpus);
  for (std::uint32_t i = 0; i < 10; ++i) {
    for (std::uint32_t j = 0; j < 10; ++j) {
      if (clean.cluster_of[i] != clean.cluster_of[j]) CHECK(std::abs(rows.value(i, j)) <= 1e-6);
    }
  }
  for (double noise : {0.0, 0.5, 2.0}) {
    const auto p = bm::make_planted_corpus(3, 7, 8, 0.5, noise, 9);
    CHECK_NOTHROW(bm::validate_corpus(p.corpus));
    CHECK(p.corpus.n() == 21);
  }
  // Same-group similarity follows intra_similarity at zero noise.
  const auto many = bm::make_planted_corpus(4, 50, 256, 0.6, 0.0, 1);
  const bm::SimilarityRows r2(many.corpus);
  double sum = 0;
  int count = 0;
  for (std::uint32_t i = 0; i < 200; ++i) {
    for (std::uint32_t j = 0; j < 200; ++j) {
      if (i != j && many.cluster_of[i] == many.cluster_of[j]) {
        sum += r2.value(i, j);
        ++count;
      }
    }
  }
  CHECK(sum / count == doctest::Approx(0.6).epsilon(0.1));
}

TEST_CASE("comparing a plan with itself") {
  const auto c = testsupport::random_corpus(64, 16, 3);
  const auto slice = testsupport::random_slice(64, 10, 2);
  const auto epoch = chunks(64, 16, 1);
  const auto r = bm::compare_plans(c, slice, epoch, epoch, {});
  CHECK(r.gap_difference == 0.0);
  CHECK(r.colocation_difference == 0.0);
  CHECK(r.retained_difference == 0.0);
  for (double d : r.bound_difference) CHECK(d == 0.0);
  CHECK(r.quality_a.colocation >= 0.0);
  CHECK(r.quality_a.colocation <= 10.0);

  const auto whole = chunks(64, 64, 2);
  const auto w = bm::compare_plans(c, slice, whole, whole, {});
  CHECK(w.a.gap == 0.0);
  CHECK(w.b.gap == 0.0);
  CHECK(w.quality_a.colocation == 10.0);
}

TEST_CASE("co-location counts slice rows inside the batch") {
  const auto c = testsupport::random_corpus(32, 8, 3);
  const auto slice = testsupport::random_slice(32, 5, 4);
  const auto epoch = chunks(32, 8, 6);
  bm::CompareOptions options;
  options.Ks = {1};
  const auto r = bm::compare_plans(c, slice, epoch, chunks(32, 8, 7), options);
  std::vector<std::uint32_t> batch_of(32);
  for (std::uint32_t b = 0; b < epoch.size(); ++b) {
    for (std::uint32_t i : epoch[b].members) batch_of[i] = b;
  }
  double hits = 0;
  for (std::uint32_t i = 0; i < 32; ++i) {
    for (std::uint32_t j : slice.row(i)) hits += batch_of[j] == batch_of[i];
  }
  CHECK(r.quality_a.colocation == doctest::Approx(hits / 32).epsilon(1e-12));
}

TEST_CASE("per-query baseline negatives only enlarge denominators") {
  const auto c = testsupport::random_corpus(64, 16, 8);
  const auto slice = testsupport::random_slice(64, 10, 8);
  const auto epoch = chunks(64, 16, 2);
  bm::CompareOptions options;
  options.tau = 0.1;
  options.baseline_hn = 5;
  const auto r = bm::compare_plans(c, slice, epoch, epoch, options);
  CHECK(r.b.batch_loss >= r.a.batch_loss);
  CHECK(r.gap_difference >= 0.0);
}

TEST_CASE("report files") {
  const auto c = testsupport::random_corpus(32, 8, 2);
  const auto slice = testsupport::random_slice(32, 5, 2);
  const auto r = bm::compare_plans(c, slice, chunks(32, 8, 1), chunks(32, 8, 2), {.Ks = {1, 2}});
  const auto text = scratch("report.txt"), jsonl = scratch("report.jsonl"), plot = scratch("plot.tsv");
  bm::write_comparison_text(r, text);
  bm::write_comparison_jsonl(r, jsonl);
  const std::vector<std::vector<double>> rows{{1, 0.5}, {2, 0.25}};
  bm::write_plot_data(plot, "k value", rows);

  std::ifstream tin(text);
  std::string line;
  bool saw_gap = false;
  while (std::getline(tin, line)) saw_gap = saw_gap || line.rfind("diff.gap=", 0) == 0;
  CHECK(saw_gap);

  std::ifstream jin(jsonl);
  std::vector<nlohmann::json> records;
  while (std::getline(jin, line)) records.push_back(nlohmann::json::parse(line));
  REQUIRE(records.size() == 3);
  CHECK(records[2]["plan"] == "a-b");
  CHECK(records[2]["gap"].get<double>() == doctest::Approx(r.gap_difference));

  std::ifstream pin(plot);
  std::getline(pin, line);
  CHECK(line == "# k value");
  std::getline(pin, line);
  CHECK(line == "1 0.5");
}

TEST_CASE("gap sweep covers each batch size") {
  const auto planted = bm::make_planted_corpus(16, 8, 32, 0.8, 0.3, 2);
  const auto slice = bm::build_rank_slice(planted.corpus, {0, 10});
  const auto g = bm::build_graph(slice);
  bm::PartitionConfig pc;
  pc.K = 8;
  const auto a = bm::partition(g, pc);
  const std::uint32_t sizes[] = {16, 32, 64};
  const auto sweep = bm::gap_sweep(planted.corpus, a, sizes, 0.02, 3);
  REQUIRE(sweep.size() == 3);
  for (const auto& p : sweep) {
    CHECK(p.gap_mined >= -1e-9);
    CHECK(p.gap_random >= -1e-9);
  }
  CHECK(sweep[0].gap_mined < sweep[0].gap_random);
}

TEST_CASE("pairwise summation") {
  std::vector<double> v(1000, 0.1);
  CHECK(bm::pairwise_sum(v) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(bm::pairwise_sum(std::vector<double>{}) == 0.0);
}
