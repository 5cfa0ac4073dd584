#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "batchmine/corpus.hpp"
#include "batchmine/matrix.hpp"

namespace batchmine {

enum class Similarity { cosine, dot };

std::string_view to_string(Similarity similarity);
Similarity parse_similarity(std::string_view text);

struct RankConfig {
  std::uint32_t p = 30;   // top ranks dropped as likely false negatives
  std::uint32_t m = 100;  // ranks kept after the offset
  Similarity similarity = Similarity::cosine;
  std::size_t block_rows = 64;  // queries scored per work unit; no semantic effect
  unsigned workers = 0;         // 0 = default_workers()
};

/// Offsets used for each task family: p=30 for retrieval and grounding, 70 for
/// VQA, 0 for classification (where same-label candidates are filtered
/// instead). m=100 everywhere.
RankConfig default_rank_config(TaskCategory category);

/// Throws ValidationError unless m >= 1 and p + m <= n - 1.
void validate_rank_config(const RankConfig& config, std::size_t n);

/// Per-query ranked candidate window [p, p+m) after filtering, plus the
/// dropped top-p ranks kept for false-negative exclusion downstream.
struct RankSlice {
  std::string task_id;
  std::uint32_t n = 0;
  std::uint32_t m = 0;
  std::uint32_t p = 0;
  Similarity similarity = Similarity::cosine;
  std::vector<std::uint32_t> candidates;       // n*m, best first
  std::vector<std::uint32_t> false_negatives;  // n*p, ranks [0, p)
  std::vector<std::uint32_t> excluded_counts;  // self + golden-label filtered, per row
  std::vector<std::uint32_t> label_class;      // n dense label ids, empty when unlabeled

  std::span<const std::uint32_t> row(std::size_t i) const {
    return {candidates.data() + i * m, m};
  }
  std::span<const std::uint32_t> false_negative_row(std::size_t i) const {
    return {false_negatives.data() + i * p, p};
  }
  bool has_labels() const { return !label_class.empty(); }

  friend bool operator==(const RankSlice&, const RankSlice&) = default;
};

/// Precomputed scoring operands for one corpus. Positives are stored
/// transposed and zero-padded so every score goes through the same kernel;
/// a given (query, candidate) score is therefore bitwise reproducible no
/// matter how queries are blocked or distributed over threads.
class Scorer {
 public:
  Scorer(const EmbeddingCorpus& corpus, Similarity similarity);

  std::size_t n() const { return n_; }

  /// Writes sim(x_i, y_j) for i in [begin, end) and all j into `out`
  /// (row-major, (end-begin) x n).
  void score(std::size_t begin, std::size_t end, std::span<float> out) const;

 private:
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::size_t n_padded_ = 0;
  std::vector<float> queries_;             // n x d
  std::vector<float> positives_t_;         // d x n_padded
};

/// Similarity rows for queries in [begin, end) against every positive.
Matrix score_block(const EmbeddingCorpus& corpus, std::size_t begin, std::size_t end,
                   const RankConfig& config);

/// The k highest-scoring indices, best first, ties by ascending index.
std::vector<std::uint32_t> top_select(std::span<const float> scores, std::size_t k);

RankSlice build_rank_slice(const EmbeddingCorpus& corpus, const RankConfig& config);

/// Dense label ids (sorted order of the distinct label strings).
std::vector<std::uint32_t> label_classes(const std::vector<std::string>& labels);

/// `provenance`, when not null, is stored in the header as "provenance".
std::uint64_t save_rank_slice(const RankSlice& slice, const std::filesystem::path& path,
                    const nlohmann::json& provenance = nullptr);
RankSlice load_rank_slice(const std::filesystem::path& path);

/// Structural checks: shapes, index range, distinct rows, no self or
/// same-label entries. Throws ValidationError.
void validate_rank_slice(const RankSlice& slice);

}  // namespace batchmine
