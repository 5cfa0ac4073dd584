#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "batchmine/preference_graph.hpp"

namespace batchmine {

struct PartitionConfig {
  std::uint32_t K = 32;  // vertices per cluster
  std::uint64_t seed = 0;
  std::uint32_t coarsen_stop = 0;  // 0 = max(2K, 64)
  std::uint32_t refine_passes = 8;
  std::uint32_t exhaustive_threshold = 16;
  std::uint32_t initial_trials = 4;  // region-growing restarts per bisection
};

/// Throws ValidationError naming the violated constraint.
void validate_partition_config(const PartitionConfig& config, std::size_t n);

struct ClusterAssignment {
  std::uint32_t n = 0;
  std::uint32_t K = 0;
  std::uint32_t C = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> assignment;                 // vertex -> cluster
  std::vector<std::vector<std::uint32_t>> cluster_members;  // sorted
  std::uint64_t cut = 0;       // edges between clusters
  std::uint64_t retained = 0;  // edges inside clusters

  friend bool operator==(const ClusterAssignment&, const ClusterAssignment&) = default;
};

/// Graph with integer vertex sizes and edge weights, the working
/// representation of every multilevel stage.
struct WeightedGraph {
  std::uint32_t n = 0;
  std::vector<std::uint64_t> offsets;
  std::vector<std::uint32_t> adj;
  std::vector<std::int64_t> edge_weight;    // parallel to adj
  std::vector<std::int64_t> vertex_weight;  // original vertices represented

  std::span<const std::uint32_t> neighbors(std::uint32_t v) const {
    return {adj.data() + offsets[v], offsets[v + 1] - offsets[v]};
  }
  std::span<const std::int64_t> weights(std::uint32_t v) const {
    return {edge_weight.data() + offsets[v], offsets[v + 1] - offsets[v]};
  }
  std::int64_t total_vertex_weight() const;
};

/// Unit vertex sizes; edge weights are the graph's (rounded, at least 1)
/// when present, else 1.
WeightedGraph to_weighted(const PreferenceGraph& graph);

struct CoarseLevel {
  WeightedGraph graph;
  std::vector<std::uint32_t> fine_to_coarse;
};

struct CoarsenOptions {
  std::uint32_t stop = 2;
  std::int64_t max_vertex_weight = INT64_MAX;
  std::uint64_t seed = 0;
};

/// Heavy-edge matching levels. Vertices are visited in a seeded random order
/// and matched to the heaviest unmatched neighbor (ties: lowest index) whose
/// combined size stays within max_vertex_weight. Stops once the vertex count
/// is <= stop or a round shrinks the graph by less than 5% (that round is
/// discarded).
std::vector<CoarseLevel> coarsen(const WeightedGraph& graph, const CoarsenOptions& options);
std::vector<CoarseLevel> coarsen(const PreferenceGraph& graph, std::uint64_t seed,
                                 const PartitionConfig& config);

/// Per-cluster target sizes: K each, with a final remainder cluster of
/// n mod K when K does not divide n.
std::vector<std::int64_t> cluster_targets(std::size_t n, std::uint32_t K);

/// Recursive bisection of `graph` into targets.size() clusters. Each split
/// sends the first ceil(C/2) clusters' worth of weight to one side. A split
/// over at most exhaustive_threshold vertices is solved exactly by
/// enumeration; larger ones use seeded greedy region growing followed by FM.
std::vector<std::uint32_t> initial_partition(const WeightedGraph& graph,
                                             std::span<const std::int64_t> targets,
                                             const PartitionConfig& config, std::uint64_t seed);

struct RefineStats {
  std::int64_t cut_before = 0;
  std::int64_t cut_after = 0;
  std::uint32_t passes = 0;
};

/// Rebalances clusters to within `tolerance` of their targets, then runs
/// pairwise FM between adjacent clusters. Starting from a balanced
/// assignment the weighted cut never increases and cluster sizes stay
/// within tolerance (exact when tolerance is 0 and sizes are unit).
RefineStats refine(const WeightedGraph& graph, std::vector<std::uint32_t>& part,
                   std::span<const std::int64_t> targets, std::int64_t tolerance,
                   const PartitionConfig& config);

/// Weighted cut of a partition.
std::int64_t edge_cut(const WeightedGraph& graph, std::span<const std::uint32_t> part);

/// Balanced K-way partition maximizing retained edges.
ClusterAssignment partition(const PreferenceGraph& graph, const PartitionConfig& config);

/// Builds member lists and cut/retained counts for an explicit assignment.
ClusterAssignment make_assignment(const PreferenceGraph& graph, std::uint32_t K,
                                  std::vector<std::uint32_t> assignment, std::uint64_t seed);

/// Checks the exact-size invariant (all clusters K, at most one smaller
/// remainder cluster) and, given the graph, that cut and retained match it
/// and sum to |E|. Throws ValidationError.
void validate_assignment(const ClusterAssignment& assignment,
                         const PreferenceGraph* graph = nullptr);

/// `provenance`, when not null, is stored in the header as "provenance".
std::uint64_t save_assignment(const ClusterAssignment& assignment, const std::filesystem::path& path,
                    const nlohmann::json& provenance = nullptr);
ClusterAssignment load_assignment(const std::filesystem::path& path);

}  // namespace batchmine
