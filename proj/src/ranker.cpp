#include "batchmine/ranker.hpp"

#include <algorithm>
#include <cstring>

#include "batchmine/binary_io.hpp"
#include "batchmine/error.hpp"
#include "batchmine/parallel.hpp"

namespace batchmine {

std::string_view to_string(Similarity similarity) {
  return similarity == Similarity::cosine ? "cosine" : "dot";
}

Similarity parse_similarity(std::string_view text) {
  if (text == "cosine") return Similarity::cosine;
  if (text == "dot") return Similarity::dot;
  throw ValidationError("unknown similarity '" + std::string(text) + "'");
}

RankConfig default_rank_config(TaskCategory category) {
  RankConfig c;
  c.m = 100;
  switch (category) {
    case TaskCategory::vqa: c.p = 70; break;
    case TaskCategory::classification: c.p = 0; break;
    case TaskCategory::retrieval:
    case TaskCategory::grounding:
    case TaskCategory::other: c.p = 30; break;
  }
  return c;
}

void validate_rank_config(const RankConfig& config, std::size_t n) {
  if (config.m < 1) throw ValidationError("rank config: m must be >= 1");
  if (config.block_rows < 1) throw ValidationError("rank config: block_rows must be >= 1");
  if (n < 2 || static_cast<std::size_t>(config.p) + config.m > n - 1) {
    throw ValidationError("rank config: p + m = " + std::to_string(config.p + config.m) +
                          " exceeds n - 1 = " + std::to_string(n == 0 ? 0 : n - 1));
  }
}

namespace {

constexpr std::size_t kLanes = 16;  // candidates per tile
constexpr std::size_t kGroup = 8;   // queries per micro-kernel call
typedef float Lanes __attribute__((vector_size(kLanes * sizeof(float))));
constexpr std::size_t kPanelTiles = 32;

}  // namespace

Scorer::Scorer(const EmbeddingCorpus& corpus, Similarity similarity)
    : n_(corpus.n()), d_(corpus.d()) {
  const Matrix q = similarity == Similarity::cosine ? normalize_rows(corpus.queries) : corpus.queries;
  const Matrix y = similarity == Similarity::cosine ? normalize_rows(corpus.positives) : corpus.positives;
  queries_ = q.data;
  n_padded_ = (n_ + kLanes - 1) / kLanes * kLanes;
  // tile-major: tile t holds d rows of kLanes consecutive candidates
  positives_t_.assign(n_padded_ * d_, 0.0f);
  for (std::size_t j = 0; j < n_; ++j) {
    const std::size_t tile = j / kLanes;
    const std::size_t lane = j % kLanes;
    const auto row = y.row(j);
    float* dst = positives_t_.data() + tile * d_ * kLanes + lane;
    for (std::size_t k = 0; k < d_; ++k) dst[k * kLanes] = row[k];
  }
}

void Scorer::score(std::size_t begin, std::size_t end, std::span<float> out) const {
  const std::size_t rows = end - begin;
  if (end > n_ || begin > end || out.size() < rows * n_) {
    throw ValidationError("score: bad query range or output buffer");
  }
  const std::size_t d = d_;
  const std::size_t tiles = n_padded_ / kLanes;
  const std::size_t groups = (rows + kGroup - 1) / kGroup;

  std::vector<float> qbuf(groups * kGroup * d, 0.0f);
  std::copy(queries_.begin() + static_cast<std::ptrdiff_t>(begin * d),
            queries_.begin() + static_cast<std::ptrdiff_t>(end * d), qbuf.begin());

  for (std::size_t t0 = 0; t0 < tiles; t0 += kPanelTiles) {
    const std::size_t t1 = std::min(tiles, t0 + kPanelTiles);
    for (std::size_t g = 0; g < groups; ++g) {
      const float* q = qbuf.data() + g * kGroup * d;
      for (std::size_t t = t0; t < t1; ++t) {
        const float* tile = positives_t_.data() + t * d * kLanes;
        Lanes acc[kGroup] = {};
        for (std::size_t k = 0; k < d; ++k) {
          Lanes pk;
          std::memcpy(&pk, tile + k * kLanes, sizeof pk);
          for (std::size_t r = 0; r < kGroup; ++r) acc[r] += q[r * d + k] * pk;
        }
        const std::size_t j0 = t * kLanes;
        const std::size_t width = std::min(kLanes, n_ - j0);
        for (std::size_t r = 0; r < kGroup; ++r) {
          const std::size_t row = g * kGroup + r;
          if (row >= rows) break;
          std::memcpy(out.data() + row * n_ + j0, &acc[r], width * sizeof(float));
        }
      }
    }
  }
}

Matrix score_block(const EmbeddingCorpus& corpus, std::size_t begin, std::size_t end,
                   const RankConfig& config) {
  validate_corpus(corpus);
  if (begin > end || end > corpus.n()) throw ValidationError("score_block: query range out of bounds");
  Scorer scorer(corpus, config.similarity);
  Matrix out(end - begin, corpus.n());
  scorer.score(begin, end, out.data);
  return out;
}

namespace {

// Strict total order: higher score first, then lower index.
struct Better {
  std::span<const float> scores;
  bool operator()(std::uint32_t a, std::uint32_t b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  }
};

template <typename Skip>
std::vector<std::uint32_t> select_top(std::span<const float> scores, std::size_t k, Skip skip) {
  const Better better{scores};
  std::vector<std::uint32_t> picked;
  if (k == 0) return picked;
  if (k * 8 >= scores.size()) {
    picked.reserve(scores.size());
    for (std::uint32_t j = 0; j < scores.size(); ++j) {
      if (!skip(j)) picked.push_back(j);
    }
    if (picked.size() > k) {
      std::nth_element(picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(k), picked.end(), better);
      picked.resize(k);
    }
  } else {
    // Bounded heap whose front is the worst retained candidate. Indices are
    // visited in ascending order, so an equal score never displaces the front.
    picked.reserve(k + 1);
    std::uint32_t j = 0;
    for (; j < scores.size() && picked.size() < k; ++j) {
      if (skip(j)) continue;
      picked.push_back(j);
      std::push_heap(picked.begin(), picked.end(), better);
    }
    auto offer = [&](std::uint32_t c) {
      if (scores[c] <= scores[picked.front()] || skip(c)) return;
      std::pop_heap(picked.begin(), picked.end(), better);
      picked.back() = c;
      std::push_heap(picked.begin(), picked.end(), better);
    };
    for (; j < scores.size() && j % 16 != 0; ++j) offer(j);
    // Most chunks hold nothing above the current threshold; test them with
    // one vectorizable pass before looking at individual entries.
    for (; j + 16 <= scores.size(); j += 16) {
      const float threshold = scores[picked.front()];
      bool any = false;
      for (std::uint32_t l = 0; l < 16; ++l) any |= scores[j + l] > threshold;
      if (!any) continue;
      for (std::uint32_t l = 0; l < 16; ++l) offer(j + l);
    }
    for (; j < scores.size(); ++j) offer(j);
  }
  std::sort(picked.begin(), picked.end(), better);
  return picked;
}

}  // namespace

std::vector<std::uint32_t> top_select(std::span<const float> scores, std::size_t k) {
  if (k > scores.size()) {
    throw ValidationError("top_select: k = " + std::to_string(k) + " exceeds row length " +
                          std::to_string(scores.size()));
  }
  return select_top(scores, k, [](std::uint32_t) { return false; });
}

std::vector<std::uint32_t> label_classes(const std::vector<std::string>& labels) {
  std::vector<std::string> distinct(labels);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<std::uint32_t> ids(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ids[i] = static_cast<std::uint32_t>(
        std::lower_bound(distinct.begin(), distinct.end(), labels[i]) - distinct.begin());
  }
  return ids;
}

RankSlice build_rank_slice(const EmbeddingCorpus& corpus, const RankConfig& config) {
  validate_corpus(corpus);
  const std::size_t n = corpus.n();
  validate_rank_config(config, n);

  RankSlice s;
  s.task_id = corpus.task_id;
  s.n = static_cast<std::uint32_t>(n);
  s.m = config.m;
  s.p = config.p;
  s.similarity = config.similarity;
  s.candidates.resize(n * s.m);
  s.false_negatives.resize(n * s.p);
  s.excluded_counts.assign(n, 1);
  const bool filter_labels = corpus.task_category == TaskCategory::classification;
  if (filter_labels) s.label_class = label_classes(corpus.labels);

  if (filter_labels) {
    std::vector<std::uint32_t> class_size;
    for (std::uint32_t c : s.label_class) {
      if (c >= class_size.size()) class_size.resize(c + 1, 0);
      ++class_size[c];
    }
    for (std::size_t i = 0; i < n; ++i) s.excluded_counts[i] = class_size[s.label_class[i]];
  }
  const std::size_t need = static_cast<std::size_t>(s.p) + s.m;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t survivors = n - s.excluded_counts[i];
    if (survivors < need) {
      throw ValidationError("row " + std::to_string(i) + " keeps only " + std::to_string(survivors) +
                            " candidates after filtering; p + m = " + std::to_string(need));
    }
  }

  const Scorer scorer(corpus, config.similarity);
  const std::size_t block = config.block_rows;
  const std::size_t blocks = (n + block - 1) / block;
  const unsigned workers = config.workers == 0 ? default_workers() : config.workers;

  parallel_for(blocks, workers, [&](std::size_t b) {
    thread_local std::vector<float> scores;
    const std::size_t begin = b * block;
    const std::size_t end = std::min(n, begin + block);
    scores.resize((end - begin) * n);
    scorer.score(begin, end, scores);
    for (std::size_t i = begin; i < end; ++i) {
      const std::span<const float> row(scores.data() + (i - begin) * n, n);
      std::vector<std::uint32_t> top;
      if (filter_labels) {
        const std::uint32_t own = s.label_class[i];
        top = select_top(row, need, [&](std::uint32_t j) { return s.label_class[j] == own; });
      } else {
        top = select_top(row, need, [i](std::uint32_t j) { return j == i; });
      }
      std::copy(top.begin(), top.begin() + s.p, s.false_negatives.begin() + static_cast<std::ptrdiff_t>(i * s.p));
      std::copy(top.begin() + s.p, top.end(), s.candidates.begin() + static_cast<std::ptrdiff_t>(i * s.m));
    }
  });
  return s;
}

void validate_rank_slice(const RankSlice& s) {
  const std::size_t n = s.n;
  if (s.m < 1) throw ValidationError("rank slice: m must be >= 1");
  if (s.candidates.size() != n * s.m || s.false_negatives.size() != n * s.p ||
      s.excluded_counts.size() != n || (!s.label_class.empty() && s.label_class.size() != n)) {
    throw ValidationError("rank slice: array sizes do not match n, m, p");
  }
  std::vector<std::uint32_t> seen(n, UINT32_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    auto check = [&](std::uint32_t j) {
      if (j >= n) throw ValidationError("rank slice row " + std::to_string(i) + ": index out of range");
      if (j == i) throw ValidationError("rank slice row " + std::to_string(i) + " contains itself");
      if (seen[j] == i) throw ValidationError("rank slice row " + std::to_string(i) + " repeats index " + std::to_string(j));
      if (s.has_labels() && s.label_class[j] == s.label_class[i]) {
        throw ValidationError("rank slice row " + std::to_string(i) + " contains same-label index " + std::to_string(j));
      }
      seen[j] = static_cast<std::uint32_t>(i);
    };
    for (std::uint32_t j : s.false_negative_row(i)) check(j);
    for (std::uint32_t j : s.row(i)) check(j);
  }
}

std::uint64_t save_rank_slice(const RankSlice& s, const std::filesystem::path& path,
                              const nlohmann::json& provenance) {
  validate_rank_slice(s);
  nlohmann::json h;
  h["kind"] = "rank_slice";
  h["format_version"] = 1;
  h["task_id"] = s.task_id;
  h["n"] = s.n;
  h["m"] = s.m;
  h["p"] = s.p;
  h["similarity"] = std::string(to_string(s.similarity));
  h["has_labels"] = s.has_labels();
  ByteWriter body;
  body.put_u32s(s.candidates);
  body.put_u32s(s.false_negatives);
  body.put_u32s(s.excluded_counts);
  body.put_u32s(s.label_class);
  if (!provenance.is_null()) h["provenance"] = provenance;
  return write_artifact(path, h, body.bytes());
}

RankSlice load_rank_slice(const std::filesystem::path& path) {
  const ArtifactBytes a = read_artifact(path, "rank_slice");
  RankSlice s;
  bool has_labels = false;
  try {
    s.task_id = a.header.at("task_id").get<std::string>();
    s.n = a.header.at("n").get<std::uint32_t>();
    s.m = a.header.at("m").get<std::uint32_t>();
    s.p = a.header.at("p").get<std::uint32_t>();
    s.similarity = parse_similarity(a.header.at("similarity").get<std::string>());
    has_labels = a.header.at("has_labels").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed rank slice header: ") + e.what());
  }
  const std::size_t n = s.n;
  const std::size_t words = n * s.m + n * s.p + n + (has_labels ? n : 0);
  if (a.body().size() < words * 4) throw FormatError("rank slice payload shorter than its header declares");
  ByteReader r(a.body());
  s.candidates.resize(n * s.m);
  s.false_negatives.resize(n * s.p);
  s.excluded_counts.resize(n);
  s.label_class.resize(has_labels ? n : 0);
  r.get_u32s(s.candidates);
  r.get_u32s(s.false_negatives);
  r.get_u32s(s.excluded_counts);
  r.get_u32s(s.label_class);
  verify_artifact_checksum(a, r.position());
  validate_rank_slice(s);
  return s;
}

}  // namespace batchmine
