#pragma once

// Generators and independent oracles shared by the unit and acceptance tests.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "batchmine/corpus.hpp"
#include "batchmine/partitioner.hpp"
#include "batchmine/preference_graph.hpp"
#include "batchmine/ranker.hpp"

namespace testsupport {

using batchmine::EmbeddingCorpus;
using batchmine::PreferenceGraph;
using batchmine::RankSlice;

inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "batchmine_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline EmbeddingCorpus random_corpus(std::size_t n, std::size_t d, std::uint64_t seed,
                                     batchmine::TaskCategory category = batchmine::TaskCategory::retrieval) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  EmbeddingCorpus c;
  c.task_id = "random";
  c.task_category = category;
  c.queries = batchmine::Matrix(n, d);
  c.positives = batchmine::Matrix(n, d);
  for (float& x : c.queries.data) x = normal(rng);
  for (float& x : c.positives.data) x = normal(rng);
  if (category == batchmine::TaskCategory::classification) {
    for (std::size_t i = 0; i < n; ++i) c.labels.push_back("class" + std::to_string(rng() % 7));
  }
  return c;
}

/// Slice whose rows are m distinct random indices (never the row itself).
/// With `pool` > 0 every row draws from the first `pool` indices plus its
/// neighbors, which makes reciprocal pairs common.
inline RankSlice random_slice(std::uint32_t n, std::uint32_t m, std::uint64_t seed, std::uint32_t pool = 0) {
  std::mt19937_64 rng(seed);
  RankSlice s;
  s.task_id = "random";
  s.n = n;
  s.m = m;
  s.p = 0;
  s.excluded_counts.assign(n, 1);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::set<std::uint32_t> seen;
    std::vector<std::uint32_t> row;
    while (row.size() < m) {
      std::uint32_t j;
      if (pool > 0 && rng() % 2 == 0) j = static_cast<std::uint32_t>((i / pool * pool + rng() % pool) % n);
      else j = static_cast<std::uint32_t>(rng() % n);
      if (j == i || !seen.insert(j).second) continue;
      row.push_back(j);
    }
    s.candidates.insert(s.candidates.end(), row.begin(), row.end());
  }
  return s;
}

inline PreferenceGraph random_graph(std::uint32_t n, std::size_t edges, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t max_edges = static_cast<std::size_t>(n) * (n - 1) / 2;
  edges = std::min(edges, max_edges);
  std::set<std::pair<std::uint32_t, std::uint32_t>> chosen;
  while (chosen.size() < edges) {
    auto a = static_cast<std::uint32_t>(rng() % n);
    auto b = static_cast<std::uint32_t>(rng() % n);
    if (a == b) continue;
    chosen.insert({std::min(a, b), std::max(a, b)});
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> list(chosen.begin(), chosen.end());
  return batchmine::graph_from_edges(n, list);
}

/// Full-sort ranking oracle over the kernel's own scores: filter, stable sort
/// by descending score (ties by ascending index), keep ranks [p, p + m).
inline std::vector<std::vector<std::uint32_t>> rank_oracle(const EmbeddingCorpus& corpus,
                                                           const batchmine::RankConfig& config) {
  const std::size_t n = corpus.n();
  const auto scores = batchmine::score_block(corpus, 0, n, config);
  const bool labeled = corpus.task_category == batchmine::TaskCategory::classification;
  std::vector<std::vector<std::uint32_t>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = scores.data.data() + i * n;
    std::vector<std::uint32_t> order;
    for (std::uint32_t j = 0; j < n; ++j) {
      if (j == i || (labeled && corpus.labels[j] == corpus.labels[i])) continue;
      order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return row[a] > row[b]; });
    rows[i].assign(order.begin() + config.p, order.begin() + config.p + config.m);
  }
  return rows;
}

/// Random slice with p false negatives per row and optional labels.
inline RankSlice rich_slice(std::uint32_t n, std::uint32_t m, std::uint32_t p, bool labels, std::uint64_t seed) {
  auto s = random_slice(n, m + p, seed, 40);
  std::mt19937_64 rng(seed + 1);
  RankSlice out = s;
  out.m = m;
  out.p = p;
  out.candidates.clear();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto row = s.row(i);
    out.false_negatives.insert(out.false_negatives.end(), row.begin(), row.begin() + p);
    out.candidates.insert(out.candidates.end(), row.begin() + p, row.end());
  }
  if (labels) {
    for (std::uint32_t i = 0; i < n; ++i) out.label_class.push_back(static_cast<std::uint32_t>(rng() % 11));
  }
  return out;
}

/// O(|B|·m) tally with every exclusion checked directly.
inline std::map<std::uint32_t, std::uint64_t> tally(const RankSlice& s, const std::vector<std::uint32_t>& batch) {
  std::map<std::uint32_t, std::uint64_t> counts;
  for (std::uint32_t i : batch) {
    for (std::uint32_t j : s.row(i)) {
      bool excluded = false;
      for (std::uint32_t b : batch) {
        const auto fn = s.false_negative_row(b);
        if (j == b || std::find(fn.begin(), fn.end(), j) != fn.end()) excluded = true;
        if (s.has_labels() && s.label_class[j] == s.label_class[b]) excluded = true;
      }
      if (!excluded) ++counts[j];
    }
  }
  return counts;
}

/// Mutual pairs by direct pairwise membership tests.
inline std::set<std::pair<std::uint32_t, std::uint32_t>> reciprocity_oracle(const RankSlice& s) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::uint32_t i = 0; i < s.n; ++i) {
    for (std::uint32_t j : s.row(i)) {
      const auto rj = s.row(j);
      if (std::find(rj.begin(), rj.end(), i) != rj.end()) edges.insert({std::min(i, j), std::max(i, j)});
    }
  }
  return edges;
}

inline std::set<std::pair<std::uint32_t, std::uint32_t>> edge_set(const PreferenceGraph& g) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::uint32_t v = 0; v < g.n; ++v) {
    for (std::uint32_t u : g.adj(v)) edges.insert({std::min(u, v), std::max(u, v)});
  }
  return edges;
}

/// Minimum cut over every split of the vertices into sizes (K, n - K).
inline std::int64_t exhaustive_min_cut(const PreferenceGraph& g, std::uint32_t K) {
  const std::uint32_t n = g.n;
  std::int64_t best = INT64_MAX;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::uint32_t>(std::popcount(mask)) != K) continue;
    std::int64_t cut = 0;
    for (std::uint32_t v = 0; v < n; ++v) {
      for (std::uint32_t u : g.adj(v)) {
        if (u > v && ((mask >> u) & 1u) != ((mask >> v) & 1u)) ++cut;
      }
    }
    best = std::min(best, cut);
  }
  return best;
}

/// Cluster sizes: all K except at most one of n mod K.
inline bool balanced(const std::vector<std::uint32_t>& assignment, std::uint32_t K) {
  std::map<std::uint32_t, std::uint32_t> size;
  for (std::uint32_t c : assignment) ++size[c];
  const std::uint32_t n = static_cast<std::uint32_t>(assignment.size());
  std::uint32_t short_clusters = 0;
  for (const auto& [c, s] : size) {
    if (s == K) continue;
    if (s != n % K) return false;
    ++short_clusters;
  }
  return short_clusters <= 1 && size.size() == (n + K - 1) / K;
}

inline double adjusted_rand_index(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> joint;
  std::map<std::uint32_t, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++rows[a[i]];
    ++cols[b[i]];
  }
  auto pairs = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sum_rows = 0, sum_cols = 0;
  for (const auto& [k, v] : joint) index += pairs(v);
  for (const auto& [k, v] : rows) sum_rows += pairs(v);
  for (const auto& [k, v] : cols) sum_cols += pairs(v);
  const double expected = sum_rows * sum_cols / pairs(static_cast<double>(a.size()));
  const double max_index = (sum_rows + sum_cols) / 2;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace testsupport
