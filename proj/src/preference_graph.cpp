#include "batchmine/preference_graph.hpp"

#include <algorithm>
#include <numeric>

#include "batchmine/binary_io.hpp"
#include "batchmine/error.hpp"
#include "batchmine/parallel.hpp"

namespace batchmine {

namespace {

void collect_isolated(PreferenceGraph& g) {
  g.isolated.clear();
  for (std::uint32_t v = 0; v < g.n; ++v) {
    if (g.degree(v) == 0) g.isolated.push_back(v);
  }
}

}  // namespace

PreferenceGraph build_graph(const RankSlice& slice, const GraphBuildOptions& options) {
  validate_rank_slice(slice);
  const std::uint32_t n = slice.n;
  const std::uint32_t m = slice.m;

  // Row copies sorted by index, remembering each entry's slice rank, so a
  // reciprocity probe is a binary search.
  struct Entry {
    std::uint32_t index;
    std::uint32_t rank;
  };
  std::vector<Entry> sorted(static_cast<std::size_t>(n) * m);
  const unsigned workers = options.workers == 0 ? default_workers() : options.workers;
  constexpr std::size_t kChunk = 1024;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t end = std::min<std::size_t>(n, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const auto row = slice.row(i);
      Entry* out = sorted.data() + i * m;
      for (std::uint32_t r = 0; r < m; ++r) out[r] = {row[r], r};
      std::sort(out, out + m, [](const Entry& a, const Entry& b) { return a.index < b.index; });
    }
  });
  auto rank_in = [&](std::uint32_t row, std::uint32_t target) -> std::int64_t {
    const Entry* first = sorted.data() + static_cast<std::size_t>(row) * m;
    const Entry* last = first + m;
    const Entry* it = std::lower_bound(first, last, target,
                                       [](const Entry& e, std::uint32_t t) { return e.index < t; });
    return (it != last && it->index == target) ? static_cast<std::int64_t>(it->rank) : -1;
  };

  // Every mutual pair is found from both endpoints, so each vertex's sorted
  // row directly yields its sorted neighbor list.
  std::vector<std::uint32_t> degree(n, 0);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t end = std::min<std::size_t>(n, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const Entry* row = sorted.data() + i * m;
      std::uint32_t deg = 0;
      for (std::uint32_t r = 0; r < m; ++r) {
        if (rank_in(row[r].index, static_cast<std::uint32_t>(i)) >= 0) ++deg;
      }
      degree[i] = deg;
    }
  });

  PreferenceGraph g;
  g.n = n;
  g.offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  for (std::uint32_t v = 0; v < n; ++v) g.offsets[v + 1] = g.offsets[v] + degree[v];
  g.neighbors.resize(g.offsets[n]);
  if (options.weighted) g.weights.resize(g.offsets[n]);

  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t end = std::min<std::size_t>(n, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const Entry* row = sorted.data() + i * m;
      std::size_t pos = g.offsets[i];
      for (std::uint32_t r = 0; r < m; ++r) {
        const std::int64_t back = rank_in(row[r].index, static_cast<std::uint32_t>(i));
        if (back < 0) continue;
        g.neighbors[pos] = row[r].index;
        if (options.weighted) {
          g.weights[pos] = static_cast<float>(2 * static_cast<std::int64_t>(m) - row[r].rank - back);
        }
        ++pos;
      }
    }
  });
  collect_isolated(g);
  return g;
}

PreferenceGraph graph_from_edges(std::uint32_t n,
                                 std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (auto [a, b] : edges) {
    if (a >= n || b >= n) throw ValidationError("edge endpoint out of range");
    if (a == b) throw ValidationError("self loop at vertex " + std::to_string(a));
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  PreferenceGraph g;
  g.n = n;
  g.offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  for (std::uint32_t v = 0; v < n; ++v) {
    auto& list = adj[v];
    std::sort(list.begin(), list.end());
    if (std::adjacent_find(list.begin(), list.end()) != list.end()) {
      throw ValidationError("duplicate edge at vertex " + std::to_string(v));
    }
    g.offsets[v + 1] = g.offsets[v] + list.size();
  }
  g.neighbors.reserve(g.offsets[n]);
  for (auto& list : adj) g.neighbors.insert(g.neighbors.end(), list.begin(), list.end());
  collect_isolated(g);
  return g;
}

std::vector<std::uint32_t> connected_components(const PreferenceGraph& g) {
  std::vector<std::uint32_t> comp(g.n, UINT32_MAX);
  std::vector<std::uint32_t> stack;
  std::uint32_t next = 0;
  for (std::uint32_t s = 0; s < g.n; ++s) {
    if (comp[s] != UINT32_MAX) continue;
    comp[s] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::uint32_t v = stack.back();
      stack.pop_back();
      for (std::uint32_t u : g.adj(v)) {
        if (comp[u] == UINT32_MAX) {
          comp[u] = next;
          stack.push_back(u);
        }
      }
    }
    ++next;
  }
  return comp;
}

GraphStats graph_stats(const PreferenceGraph& g) {
  GraphStats st;
  st.edges = g.edge_count();
  st.isolated = g.isolated.size();
  const auto comp = connected_components(g);
  st.components = comp.empty() ? 0 : *std::max_element(comp.begin(), comp.end()) + 1;
  for (std::uint32_t v = 0; v < g.n; ++v) {
    const std::size_t d = g.degree(v);
    if (d >= st.degree_histogram.size()) st.degree_histogram.resize(d + 1, 0);
    ++st.degree_histogram[d];
  }
  return st;
}

void validate_graph(const PreferenceGraph& g) {
  if (g.offsets.size() != static_cast<std::size_t>(g.n) + 1 || g.offsets.front() != 0 ||
      g.offsets.back() != g.neighbors.size()) {
    throw ValidationError("graph: offset array inconsistent with neighbor array");
  }
  if (g.weighted() && g.weights.size() != g.neighbors.size()) {
    throw ValidationError("graph: weight array length differs from neighbor array");
  }
  for (std::uint32_t v = 0; v < g.n; ++v) {
    if (g.offsets[v] > g.offsets[v + 1]) throw ValidationError("graph: offsets not monotone");
    const auto adj = g.adj(v);
    for (std::size_t k = 0; k < adj.size(); ++k) {
      const std::uint32_t u = adj[k];
      if (u >= g.n) throw ValidationError("graph: neighbor out of range at vertex " + std::to_string(v));
      if (u == v) throw ValidationError("graph: self loop at vertex " + std::to_string(v));
      if (k > 0 && adj[k - 1] >= u) throw ValidationError("graph: neighbors of " + std::to_string(v) + " not strictly ascending");
      const auto back = g.adj(u);
      const auto it = std::lower_bound(back.begin(), back.end(), v);
      if (it == back.end() || *it != v) {
        throw ValidationError("graph: edge (" + std::to_string(v) + "," + std::to_string(u) + ") not symmetric");
      }
      if (g.weighted()) {
        const float w = g.adj_weights(v)[k];
        if (!(w > 0.0f) || w != g.adj_weights(u)[static_cast<std::size_t>(it - back.begin())]) {
          throw ValidationError("graph: edge weights must be positive and symmetric");
        }
      }
    }
  }
  std::vector<std::uint32_t> iso;
  for (std::uint32_t v = 0; v < g.n; ++v) {
    if (g.degree(v) == 0) iso.push_back(v);
  }
  if (iso != g.isolated) throw ValidationError("graph: isolated list does not match degrees");
}

std::uint64_t save_graph(const PreferenceGraph& g, const std::filesystem::path& path,
                         const nlohmann::json& provenance) {
  validate_graph(g);
  nlohmann::json h;
  h["kind"] = "graph";
  h["format_version"] = 1;
  h["n"] = g.n;
  h["edge_count"] = g.edge_count();
  h["weighted"] = g.weighted();
  ByteWriter body;
  body.put_u64s(g.offsets);
  body.put_u32s(g.neighbors);
  body.put_f32s(g.weights);
  if (!provenance.is_null()) h["provenance"] = provenance;
  return write_artifact(path, h, body.bytes());
}

PreferenceGraph load_graph(const std::filesystem::path& path) {
  const ArtifactBytes a = read_artifact(path, "graph");
  PreferenceGraph g;
  std::uint64_t edges = 0;
  bool weighted = false;
  try {
    g.n = a.header.at("n").get<std::uint32_t>();
    edges = a.header.at("edge_count").get<std::uint64_t>();
    weighted = a.header.at("weighted").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed graph header: ") + e.what());
  }
  const std::size_t bytes = (static_cast<std::size_t>(g.n) + 1) * 8 + 2 * edges * 4 + (weighted ? 2 * edges * 4 : 0);
  if (a.body().size() < bytes) throw FormatError("graph payload shorter than its header declares");
  ByteReader r(a.body());
  g.offsets.resize(static_cast<std::size_t>(g.n) + 1);
  g.neighbors.resize(2 * edges);
  g.weights.resize(weighted ? 2 * edges : 0);
  r.get_u64s(g.offsets);
  r.get_u32s(g.neighbors);
  r.get_f32s(g.weights);
  verify_artifact_checksum(a, r.position());
  for (std::uint32_t v = 0; v < g.n; ++v) {
    if (g.offsets[v] > g.offsets[v + 1] || g.offsets[v + 1] > g.neighbors.size()) {
      throw FormatError("graph offsets out of range");
    }
  }
  g.isolated.clear();
  for (std::uint32_t v = 0; v < g.n; ++v) {
    if (g.offsets[v + 1] == g.offsets[v]) g.isolated.push_back(v);
  }
  validate_graph(g);
  return g;
}

}  // namespace batchmine
