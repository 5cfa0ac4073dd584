#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "batchmine/ranker.hpp"

namespace batchmine {

/// Undirected mutual-preference graph in CSR form. Each undirected edge is
/// stored once per endpoint; neighbor lists are sorted ascending.
struct PreferenceGraph {
  std::uint32_t n = 0;
  std::vector<std::uint64_t> offsets;    // n + 1
  std::vector<std::uint32_t> neighbors;  // 2 * edge_count
  std::vector<float> weights;            // parallel to neighbors, empty when unweighted
  std::vector<std::uint32_t> isolated;   // degree-0 vertices, ascending

  std::size_t edge_count() const { return neighbors.size() / 2; }
  bool weighted() const { return !weights.empty(); }
  std::size_t degree(std::uint32_t v) const { return offsets[v + 1] - offsets[v]; }
  std::span<const std::uint32_t> adj(std::uint32_t v) const {
    return {neighbors.data() + offsets[v], degree(v)};
  }
  std::span<const float> adj_weights(std::uint32_t v) const {
    return {weights.data() + offsets[v], weighted() ? degree(v) : 0};
  }

  friend bool operator==(const PreferenceGraph&, const PreferenceGraph&) = default;
};

struct GraphBuildOptions {
  /// Weight mutual edges by w(i,j) = 2m - rank_i(j) - rank_j(i) (0-based
  /// ranks inside the slice window). Off by default.
  bool weighted = false;
  unsigned workers = 0;
};

/// Keeps exactly the pairs (i, j) with j in row(i) and i in row(j).
PreferenceGraph build_graph(const RankSlice& slice, const GraphBuildOptions& options = {});

/// CSR graph from an explicit undirected edge list (duplicates and self
/// loops rejected). Used by generators and tests.
PreferenceGraph graph_from_edges(std::uint32_t n,
                                 std::span<const std::pair<std::uint32_t, std::uint32_t>> edges);

struct GraphStats {
  std::size_t edges = 0;
  std::size_t isolated = 0;
  std::size_t components = 0;
  std::vector<std::size_t> degree_histogram;  // index = degree
};

GraphStats graph_stats(const PreferenceGraph& graph);

/// Connected component id per vertex, ids in order of lowest member.
std::vector<std::uint32_t> connected_components(const PreferenceGraph& graph);

/// Symmetry, sortedness, no self loops or duplicates. Throws ValidationError.
void validate_graph(const PreferenceGraph& graph);

/// `provenance`, when not null, is stored in the header as "provenance".
std::uint64_t save_graph(const PreferenceGraph& graph, const std::filesystem::path& path,
                    const nlohmann::json& provenance = nullptr);
PreferenceGraph load_graph(const std::filesystem::path& path);

}  // namespace batchmine
