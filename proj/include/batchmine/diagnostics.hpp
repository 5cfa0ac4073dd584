#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "batchmine/batch_planner.hpp"
#include "batchmine/corpus.hpp"
#include "batchmine/partitioner.hpp"
#include "batchmine/preference_graph.hpp"
#include "batchmine/ranker.hpp"

namespace batchmine {

inline constexpr double kDefaultTemperature = 0.02;

/// Cosine similarities in double precision, computed on demand from
/// double-normalized rows.
class SimilarityRows {
 public:
  explicit SimilarityRows(const EmbeddingCorpus& corpus);

  std::size_t n() const { return n_; }
  /// out[j] = cos(x_i, y_j) for every j.
  void row(std::size_t i, std::span<double> out) const;
  double value(std::size_t i, std::size_t j) const;

 private:
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<double> queries_;
  std::vector<double> positives_;
};

/// Deterministic pairwise (cascade) summation.
double pairwise_sum(std::span<const double> values);

struct LossValue {
  double total = 0.0;
  double mean = 0.0;
};

/// InfoNCE over the whole corpus: sum_i -log(e^{s_ii/tau} / sum_j e^{s_ij/tau}).
LossValue global_loss(const EmbeddingCorpus& corpus, double tau);

/// Same loss with query i's denominator restricted to its batch members
/// plus the batch's hard negatives. The epoch must cover every index once.
LossValue batch_loss(const EmbeddingCorpus& corpus, std::span<const Batch> epoch, double tau);

/// Per-query top-K / remainder split of the global and batch denominators.
/// Sums are stored relative to their shift: the true value of global_H[i]
/// is exp(global_shift[i]) * global_H[i], and likewise for the others.
struct HLDecomposition {
  std::uint32_t K = 0;
  std::vector<double> global_shift, global_H, global_L;
  std::vector<double> batch_shift, batch_H, batch_L;
};

struct BoundResult {
  double value = 0.0;  // sum_i log((N/K) * H^K_i / H^K_{B_i,i})
  HLDecomposition decomposition;
};

/// Requires 1 <= K <= smallest batch size.
BoundResult bound_rhs(const EmbeddingCorpus& corpus, std::span<const Batch> epoch, std::uint32_t K, double tau);

struct LossReport {
  double tau = kDefaultTemperature;
  double global_loss = 0.0;  // totals
  double batch_loss = 0.0;
  double gap = 0.0;
  std::vector<std::uint32_t> Ks;
  std::vector<double> bound_rhs;  // parallel to Ks
};

LossReport loss_report(const EmbeddingCorpus& corpus, std::span<const Batch> epoch, double tau,
                       std::span<const std::uint32_t> Ks);

struct PeakednessReport {
  std::vector<double> profile;  // mean of each query's similarities sorted descending
  std::vector<std::uint32_t> Ks;
  std::vector<double> tail_to_head;  // mean_i L^K_i / H^K_i, parallel to Ks
};

PeakednessReport peakedness(const EmbeddingCorpus& corpus, double tau, std::size_t top_k,
                            std::span<const std::uint32_t> Ks);

struct BatchQualityReport {
  double colocation = 0.0;              // mean_i |row(i) ∩ B_i|
  double retained_edge_fraction = 0.0;  // graph edges inside one batch / all edges
  std::vector<double> batch_profile;    // mean sorted in-batch similarity profile
};

struct CompareOptions {
  double tau = kDefaultTemperature;
  std::vector<std::uint32_t> Ks = {1, 2, 4, 8, 16};
  std::size_t top_k = 16;
  /// When > 0, each query of plan b also gets this many negatives drawn
  /// uniformly from its own slice row (a per-query baseline).
  std::uint32_t baseline_hn = 0;
  std::uint64_t seed = 0;
};

struct PlanComparison {
  LossReport a, b;
  BatchQualityReport quality_a, quality_b;
  double gap_difference = 0.0;  // a - b
  double colocation_difference = 0.0;
  double retained_difference = 0.0;
  std::vector<double> bound_difference;
};

PlanComparison compare_plans(const EmbeddingCorpus& corpus, const RankSlice& slice, std::span<const Batch> plan_a,
                             std::span<const Batch> plan_b, const CompareOptions& options,
                             const PreferenceGraph* graph = nullptr);

struct SweepPoint {
  std::uint32_t batch_size = 0;
  double gap_mined = 0.0;
  double gap_random = 0.0;
};

/// Loss gap of the first epoch of a cluster plan and of a random plan for
/// each batch size (each must be a multiple of assignment.K).
std::vector<SweepPoint> gap_sweep(const EmbeddingCorpus& corpus, const ClusterAssignment& assignment,
                                  std::span<const std::uint32_t> batch_sizes, double tau, std::uint64_t seed);

/// key=value text, one entry per line.
void write_comparison_text(const PlanComparison& report, const std::filesystem::path& path);
/// One JSON record per line: plan a, plan b, difference.
void write_comparison_jsonl(const PlanComparison& report, const std::filesystem::path& path);
/// Whitespace-separated columns with a leading '#' header line.
void write_plot_data(const std::filesystem::path& path, const std::string& header,
                     std::span<const std::vector<double>> rows);

struct PlantedCorpus {
  EmbeddingCorpus corpus;
  std::vector<std::uint32_t> cluster_of;
};

/// Synthetic corpus of `clusters` groups of `size` examples. Positives of one
/// group share a center with weight sqrt(intra_similarity); the rest of each
/// vector is a private random direction. When d >= clusters every group
/// lives in its own block of coordinates, so cross-group similarity is
/// exactly 0 at zero noise. Queries equal positives at zero noise; otherwise
/// both get independent Gaussian perturbations of scale noise/sqrt(d).
PlantedCorpus make_planted_corpus(std::uint32_t clusters, std::uint32_t size, std::uint32_t d,
                                  double intra_similarity, double noise, std::uint64_t seed);

}  // namespace batchmine
