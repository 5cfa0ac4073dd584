#include "batchmine/partitioner.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <tuple>
#include <unordered_map>

#include "batchmine/binary_io.hpp"
#include "batchmine/error.hpp"
#include "batchmine/random.hpp"

namespace batchmine {

namespace {

constexpr std::uint32_t kNone = UINT32_MAX;

std::uint32_t effective_coarsen_stop(const PartitionConfig& c) {
  return c.coarsen_stop != 0 ? c.coarsen_stop : std::max<std::uint32_t>(2 * c.K, 64);
}

// Coarse vertices never exceed an eighth of a cluster, so every cluster
// still spans several supervertices at the coarsest level. Finer caps add a
// level on large graphs, which keeps per-level work closer to linear.
std::int64_t coarse_weight_cap(const PartitionConfig& c) {
  return std::max<std::int64_t>(2, c.K / 8);
}

std::int64_t max_vertex_weight(const WeightedGraph& g) {
  return g.vertex_weight.empty() ? 1 : *std::max_element(g.vertex_weight.begin(), g.vertex_weight.end());
}

// Induced subgraph on `vertices` (local id = position). `local` is a scratch
// map of size g.n that must hold kNone everywhere; it is restored on exit.
void induced(const WeightedGraph& g, std::span<const std::uint32_t> vertices, std::vector<std::uint32_t>& local,
             WeightedGraph& sub) {
  for (std::uint32_t i = 0; i < vertices.size(); ++i) local[vertices[i]] = i;
  sub.n = static_cast<std::uint32_t>(vertices.size());
  sub.offsets.clear();
  sub.adj.clear();
  sub.edge_weight.clear();
  sub.vertex_weight.clear();
  sub.offsets.push_back(0);
  for (std::uint32_t v : vertices) {
    const auto nb = g.neighbors(v);
    const auto wt = g.weights(v);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      const std::uint32_t lu = local[nb[k]];
      if (lu == kNone) continue;
      sub.adj.push_back(lu);
      sub.edge_weight.push_back(wt[k]);
    }
    sub.offsets.push_back(sub.adj.size());
    sub.vertex_weight.push_back(g.vertex_weight[v]);
  }
  for (std::uint32_t v : vertices) local[v] = kNone;
}

WeightedGraph induced(const WeightedGraph& g, std::span<const std::uint32_t> vertices,
                      std::vector<std::uint32_t>& local) {
  WeightedGraph sub;
  induced(g, vertices, local, sub);
  return sub;
}

// ---------------------------------------------------------------- bisection

// Balance key pieces for a two-sided split with per-side targets.
struct Balance {
  std::int64_t excess;   // weight outside [target - tol, target + tol], both sides
  std::int64_t spread;   // |dev0| + |dev1|
};

Balance balance_of(std::int64_t w0, std::int64_t w1, std::int64_t t0, std::int64_t t1, std::int64_t tol) {
  const std::int64_t d0 = std::abs(w0 - t0);
  const std::int64_t d1 = std::abs(w1 - t1);
  return {std::max<std::int64_t>(0, d0 - tol) + std::max<std::int64_t>(0, d1 - tol), d0 + d1};
}

using SplitKey = std::tuple<std::int64_t, std::int64_t, std::int64_t>;  // excess, cut, spread

std::int64_t bisection_cut(const WeightedGraph& g, const std::vector<std::uint8_t>& side) {
  std::int64_t cut = 0;
  for (std::uint32_t v = 0; v < g.n; ++v) {
    const auto nb = g.neighbors(v);
    const auto wt = g.weights(v);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (nb[k] > v && side[nb[k]] != side[v]) cut += wt[k];
    }
  }
  return cut;
}

std::pair<std::int64_t, std::int64_t> side_weights(const WeightedGraph& g, const std::vector<std::uint8_t>& side) {
  std::int64_t w0 = 0, w1 = 0;
  for (std::uint32_t v = 0; v < g.n; ++v) (side[v] == 0 ? w0 : w1) += g.vertex_weight[v];
  return {w0, w1};
}

SplitKey split_key(const WeightedGraph& g, const std::vector<std::uint8_t>& side, std::int64_t t0,
                   std::int64_t t1, std::int64_t tol) {
  const auto [w0, w1] = side_weights(g, side);
  const Balance b = balance_of(w0, w1, t0, t1, tol);
  return {b.excess, bisection_cut(g, side), b.spread};
}

struct GainEntry {
  std::int64_t gain;
  std::uint32_t v;
};

struct GainOrder {
  bool operator()(const GainEntry& a, const GainEntry& b) const {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.v > b.v;  // lower index on top
  }
};

using GainHeap = std::priority_queue<GainEntry, std::vector<GainEntry>, GainOrder>;

// Scratch buffers reused across many small FM runs.
struct FmWorkspace {
  std::vector<std::int64_t> gain;
  std::vector<std::uint8_t> locked;
  std::vector<std::uint32_t> moves;
  std::vector<GainEntry> heap[2];
};

// Fiduccia-Mattheyses passes on a two-way split. Each pass moves every
// vertex at most once, then rolls back to the best prefix under the
// lexicographic key (balance excess, cut, spread). The key never gets worse,
// so from a split within tolerance the cut is non-increasing.
void fm_bisection(const WeightedGraph& g, std::vector<std::uint8_t>& side, std::int64_t t0,
                  std::int64_t t1, std::int64_t tol, std::uint32_t passes, FmWorkspace& ws) {
  const std::uint32_t n = g.n;
  if (n < 2) return;
  const std::int64_t slack = tol + max_vertex_weight(g);
  const std::size_t stall_limit = std::max<std::size_t>(50, n / 20);
  auto& gain = ws.gain;
  auto& locked = ws.locked;
  auto& moves = ws.moves;
  auto* heap = ws.heap;
  gain.resize(n);
  locked.resize(n);
  const GainOrder order;
  auto push = [&](int s, GainEntry e) {
    heap[s].push_back(e);
    std::push_heap(heap[s].begin(), heap[s].end(), order);
  };
  auto pop = [&](int s) {
    std::pop_heap(heap[s].begin(), heap[s].end(), order);
    heap[s].pop_back();
  };

  for (std::uint32_t pass = 0; pass < passes; ++pass) {
    std::int64_t cut = 0;
    auto [w0, w1] = side_weights(g, side);
    heap[0].clear();
    heap[1].clear();
    for (std::uint32_t v = 0; v < n; ++v) {
      std::int64_t ext = 0, in = 0;
      const auto nb = g.neighbors(v);
      const auto wt = g.weights(v);
      for (std::size_t k = 0; k < nb.size(); ++k) (side[nb[k]] != side[v] ? ext : in) += wt[k];
      gain[v] = ext - in;
      cut += ext;
      locked[v] = 0;
      if (ext > 0 || nb.empty()) push(side[v], {gain[v], v});
    }
    cut /= 2;

    Balance bal = balance_of(w0, w1, t0, t1, tol);
    SplitKey best{bal.excess, cut, bal.spread};
    std::size_t best_moves = 0;
    moves.clear();

    for (;;) {
      int chosen = -1;
      std::int64_t chosen_gain = 0, chosen_spread = 0;
      for (int s = 0; s < 2; ++s) {
        auto& h = heap[s];
        while (!h.empty() && (locked[h.front().v] || side[h.front().v] != s || gain[h.front().v] != h.front().gain)) {
          pop(s);
        }
        if (h.empty()) continue;
        const std::uint32_t v = h.front().v;
        const std::int64_t vw = g.vertex_weight[v];
        const std::int64_t nw0 = s == 0 ? w0 - vw : w0 + vw;
        const std::int64_t nw1 = s == 0 ? w1 + vw : w1 - vw;
        const Balance nb = balance_of(nw0, nw1, t0, t1, tol);
        const bool legal = bal.excess > 0
                               ? nb.excess < bal.excess
                               : std::abs(nw0 - t0) <= slack && std::abs(nw1 - t1) <= slack;
        if (!legal) continue;
        if (chosen < 0 || gain[v] > chosen_gain || (gain[v] == chosen_gain && nb.spread < chosen_spread)) {
          chosen = s;
          chosen_gain = gain[v];
          chosen_spread = nb.spread;
        }
      }
      if (chosen < 0) break;

      const std::uint32_t v = heap[chosen].front().v;
      pop(chosen);
      const std::int64_t vw = g.vertex_weight[v];
      side[v] ^= 1;
      locked[v] = 1;
      cut -= gain[v];
      if (chosen == 0) {
        w0 -= vw;
        w1 += vw;
      } else {
        w0 += vw;
        w1 -= vw;
      }
      bal = balance_of(w0, w1, t0, t1, tol);
      const auto nb = g.neighbors(v);
      const auto wt = g.weights(v);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        const std::uint32_t u = nb[k];
        if (locked[u]) continue;
        gain[u] += side[u] == side[v] ? -2 * wt[k] : 2 * wt[k];
        push(side[u], {gain[u], u});
      }
      moves.push_back(v);
      const SplitKey key{bal.excess, cut, bal.spread};
      if (key < best) {
        best = key;
        best_moves = moves.size();
      } else if (moves.size() - best_moves > stall_limit) {
        break;
      }
    }
    for (std::size_t i = moves.size(); i > best_moves; --i) side[moves[i - 1]] ^= 1;
    if (best_moves == 0) break;
  }
}

void fm_bisection(const WeightedGraph& g, std::vector<std::uint8_t>& side, std::int64_t t0,
                  std::int64_t t1, std::int64_t tol, std::uint32_t passes) {
  FmWorkspace ws;
  fm_bisection(g, side, t0, t1, tol, passes, ws);
}

// Exact split by Gray-code enumeration of all 2^n side assignments.
std::vector<std::uint8_t> exhaustive_bisection(const WeightedGraph& g, std::int64_t t0, std::int64_t t1,
                                               std::int64_t tol) {
  const std::uint32_t n = g.n;
  const std::int64_t total = g.total_vertex_weight();
  std::vector<std::uint8_t> side(n, 1);  // bit set in mask = side 0
  std::int64_t w0 = 0, cut = 0;
  std::uint32_t mask = 0;
  auto key_now = [&] {
    const Balance b = balance_of(w0, total - w0, t0, t1, tol);
    return std::tuple{b.excess, cut, b.spread, mask};
  };
  auto best = key_now();
  const std::uint64_t count = 1ULL << n;
  for (std::uint64_t i = 1; i < count; ++i) {
    const auto v = static_cast<std::uint32_t>(std::countr_zero(i));
    const auto nb = g.neighbors(v);
    const auto wt = g.weights(v);
    for (std::size_t k = 0; k < nb.size(); ++k) cut += side[nb[k]] == side[v] ? wt[k] : -wt[k];
    side[v] ^= 1;
    w0 += side[v] == 0 ? g.vertex_weight[v] : -g.vertex_weight[v];
    mask ^= 1u << v;
    const auto key = key_now();
    if (key < best) best = key;
  }
  const std::uint32_t best_mask = std::get<3>(best);
  for (std::uint32_t v = 0; v < n; ++v) side[v] = (best_mask >> v) & 1u ? 0 : 1;
  return side;
}

// Greedy graph growing: side 0 grows from a random seed by repeatedly
// absorbing the frontier vertex with the best cut gain. Isolated vertices
// are placed last on whichever side is further below its target.
std::vector<std::uint8_t> grow_bisection(const WeightedGraph& g, std::int64_t t0, std::int64_t t1, Rng& rng) {
  const std::uint32_t n = g.n;
  std::vector<std::uint8_t> side(n, 1);
  std::vector<std::int64_t> degree_w(n, 0), conn0(n, 0);
  std::vector<std::uint32_t> pool, isolated;
  for (std::uint32_t v = 0; v < n; ++v) {
    for (std::int64_t w : g.weights(v)) degree_w[v] += w;
    (g.neighbors(v).empty() ? isolated : pool).push_back(v);
  }
  shuffle_span(std::span(pool), rng);
  std::size_t cursor = 0;
  std::int64_t w0 = 0;
  GainHeap frontier;
  auto absorb = [&](std::uint32_t v) {
    side[v] = 0;
    w0 += g.vertex_weight[v];
    const auto nb = g.neighbors(v);
    const auto wt = g.weights(v);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      const std::uint32_t u = nb[k];
      if (side[u] == 0) continue;
      conn0[u] += wt[k];
      frontier.push({2 * conn0[u] - degree_w[u], u});
    }
  };
  while (w0 < t0) {
    std::uint32_t v = kNone;
    while (!frontier.empty()) {
      const GainEntry e = frontier.top();
      frontier.pop();
      if (side[e.v] == 1 && e.gain == 2 * conn0[e.v] - degree_w[e.v]) {
        v = e.v;
        break;
      }
    }
    if (v == kNone) {
      while (cursor < pool.size() && side[pool[cursor]] == 0) ++cursor;
      if (cursor == pool.size()) break;
      v = pool[cursor];
    }
    if (w0 + g.vertex_weight[v] - t0 > t0 - w0) break;
    absorb(v);
  }
  std::int64_t w1 = g.total_vertex_weight() - w0;
  for (std::uint32_t v : isolated) w1 -= g.vertex_weight[v];
  for (std::uint32_t v : isolated) {
    const std::int64_t vw = g.vertex_weight[v];
    if (t0 - w0 >= t1 - w1) {
      side[v] = 0;
      w0 += vw;
    } else {
      side[v] = 1;
      w1 += vw;
    }
  }
  return side;
}

std::vector<std::uint8_t> bisect(const WeightedGraph& g, std::int64_t t0, std::int64_t t1,
                                 const PartitionConfig& config, Rng& rng) {
  const std::int64_t tol = max_vertex_weight(g) - 1;
  if (g.n <= config.exhaustive_threshold) return exhaustive_bisection(g, t0, t1, tol);
  std::vector<std::uint8_t> best;
  SplitKey best_key{};
  for (std::uint32_t t = 0; t < config.initial_trials; ++t) {
    auto side = grow_bisection(g, t0, t1, rng);
    fm_bisection(g, side, t0, t1, tol, config.refine_passes);
    const SplitKey key = split_key(g, side, t0, t1, tol);
    if (best.empty() || key < best_key) {
      best = std::move(side);
      best_key = key;
    }
  }
  return best;
}

void recursive_bisect(const WeightedGraph& g, std::vector<std::uint32_t> vertices, std::uint32_t lo,
                      std::uint32_t hi, std::span<const std::int64_t> targets, const PartitionConfig& config,
                      Rng& rng, std::vector<std::uint32_t>& part, std::vector<std::uint32_t>& local) {
  if (hi - lo == 1) {
    for (std::uint32_t v : vertices) part[v] = lo;
    return;
  }
  const std::uint32_t mid = lo + (hi - lo + 1) / 2;
  const std::int64_t t0 = std::accumulate(targets.begin() + lo, targets.begin() + mid, std::int64_t{0});
  const std::int64_t t1 = std::accumulate(targets.begin() + mid, targets.begin() + hi, std::int64_t{0});
  const WeightedGraph sub = induced(g, vertices, local);
  const auto side = bisect(sub, t0, t1, config, rng);
  std::vector<std::uint32_t> left, right;
  for (std::uint32_t i = 0; i < vertices.size(); ++i) (side[i] == 0 ? left : right).push_back(vertices[i]);
  vertices.clear();
  vertices.shrink_to_fit();
  recursive_bisect(g, std::move(left), lo, mid, targets, config, rng, part, local);
  recursive_bisect(g, std::move(right), mid, hi, targets, config, rng, part, local);
}

// ------------------------------------------------------------ k-way helpers

struct KwayState {
  std::vector<std::vector<std::uint32_t>> members;
  std::vector<std::int64_t> weight;
};

KwayState kway_state(const WeightedGraph& g, const std::vector<std::uint32_t>& part, std::size_t clusters) {
  KwayState s;
  s.members.resize(clusters);
  s.weight.assign(clusters, 0);
  for (std::uint32_t v = 0; v < g.n; ++v) {
    s.members[part[v]].push_back(v);
    s.weight[part[v]] += g.vertex_weight[v];
  }
  return s;
}

void move_vertex(KwayState& s, std::vector<std::uint32_t>& part, std::uint32_t v, std::uint32_t to,
                 std::int64_t vw) {
  const std::uint32_t from = part[v];
  auto& list = s.members[from];
  const auto it = std::find(list.begin(), list.end(), v);
  *it = list.back();
  list.pop_back();
  s.members[to].push_back(v);
  s.weight[from] -= vw;
  s.weight[to] += vw;
  part[v] = to;
}

// Moves vertices out of clusters heavier than target + tol, choosing the
// best-gain (vertex, destination) pair each time. Destinations are clusters
// with room; a vertex may jump to a non-adjacent cluster when none of its
// neighbors' clusters have room.
void rebalance(const WeightedGraph& g, std::vector<std::uint32_t>& part, KwayState& s,
               std::span<const std::int64_t> targets, std::int64_t tol) {
  const std::size_t clusters = targets.size();
  std::vector<std::int64_t> conn(clusters, 0);
  std::vector<std::uint32_t> touched;
  // Room only shrinks for destinations and an overfull cluster never gains
  // room, so overfull clusters can be visited in index order and the
  // roomiest cluster tracked with a lazily pruned heap.
  std::vector<std::uint32_t> overfull;
  std::vector<std::pair<std::int64_t, std::uint32_t>> rooms;
  for (std::uint32_t c = 0; c < clusters; ++c) {
    if (s.weight[c] > targets[c] + tol) overfull.push_back(c);
    else rooms.emplace_back(targets[c] + tol - s.weight[c], c);
  }
  const auto room_order = [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first < y.first : x.second > y.second;
  };
  std::make_heap(rooms.begin(), rooms.end(), room_order);
  std::size_t cursor = 0;
  for (;;) {
    while (cursor < overfull.size() && s.weight[overfull[cursor]] <= targets[overfull[cursor]] + tol) ++cursor;
    if (cursor == overfull.size()) return;
    const std::uint32_t a = overfull[cursor];
    while (!rooms.empty() && rooms.front().first != targets[rooms.front().second] + tol - s.weight[rooms.front().second]) {
      std::pop_heap(rooms.begin(), rooms.end(), room_order);
      const std::uint32_t c = rooms.back().second;
      rooms.back().first = targets[c] + tol - s.weight[c];
      std::push_heap(rooms.begin(), rooms.end(), room_order);
    }
    std::uint32_t roomiest = kNone;
    std::int64_t most_room = 0;
    if (!rooms.empty() && rooms.front().first > 0) {
      roomiest = rooms.front().second;
      most_room = rooms.front().first;
    }
    std::int64_t best_gain = 0;
    std::uint32_t best_v = kNone, best_to = kNone;
    auto consider = [&](std::int64_t gain, std::uint32_t v, std::uint32_t to) {
      if (best_v == kNone || gain > best_gain || (gain == best_gain && (v < best_v || (v == best_v && to < best_to)))) {
        best_gain = gain;
        best_v = v;
        best_to = to;
      }
    };
    for (std::uint32_t v : s.members[a]) {
      const std::int64_t vw = g.vertex_weight[v];
      const auto nb = g.neighbors(v);
      const auto wt = g.weights(v);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        const std::uint32_t c = part[nb[k]];
        if (conn[c] == 0) touched.push_back(c);
        conn[c] += wt[k];
      }
      const std::int64_t own = conn[a];
      for (std::uint32_t c : touched) {
        if (c != a && s.weight[c] + vw <= targets[c] + tol) consider(conn[c] - own, v, c);
      }
      if (roomiest != kNone && most_room >= vw) consider(conn[roomiest] - own, v, roomiest);
      for (std::uint32_t c : touched) conn[c] = 0;
      touched.clear();
    }
    if (best_v == kNone) {
      ++cursor;
      continue;
    }
    move_vertex(s, part, best_v, best_to, g.vertex_weight[best_v]);
  }
}

// Copy of g with vertex old[i] renamed to i.
WeightedGraph relabeled(const WeightedGraph& g, std::span<const std::uint32_t> old) {
  std::vector<std::uint32_t> renamed(g.n);
  for (std::uint32_t i = 0; i < g.n; ++i) renamed[old[i]] = i;
  WeightedGraph r;
  r.n = g.n;
  r.offsets.reserve(g.n + 1);
  r.offsets.push_back(0);
  r.adj.reserve(g.adj.size());
  r.edge_weight.reserve(g.edge_weight.size());
  r.vertex_weight.reserve(g.n);
  std::vector<std::pair<std::uint32_t, std::int64_t>> row;
  for (std::uint32_t i = 0; i < g.n; ++i) {
    const auto nb = g.neighbors(old[i]);
    const auto wt = g.weights(old[i]);
    row.clear();
    for (std::size_t k = 0; k < nb.size(); ++k) row.emplace_back(renamed[nb[k]], wt[k]);
    std::sort(row.begin(), row.end());
    for (const auto& [u, w] : row) {
      r.adj.push_back(u);
      r.edge_weight.push_back(w);
    }
    r.offsets.push_back(r.adj.size());
    r.vertex_weight.push_back(g.vertex_weight[old[i]]);
  }
  return r;
}

}  // namespace

std::int64_t WeightedGraph::total_vertex_weight() const {
  return std::accumulate(vertex_weight.begin(), vertex_weight.end(), std::int64_t{0});
}

void validate_partition_config(const PartitionConfig& c, std::size_t n) {
  if (c.K < 2) throw ValidationError("partition config: K must be >= 2");
  if (c.K > n) {
    throw ValidationError("partition config: K = " + std::to_string(c.K) + " exceeds n = " + std::to_string(n));
  }
  if (c.coarsen_stop != 0 && c.coarsen_stop < 2 * c.K) {
    throw ValidationError("partition config: coarsen_stop must be >= 2*K");
  }
  if (c.refine_passes < 1) throw ValidationError("partition config: refine_passes must be >= 1");
  if (c.exhaustive_threshold > 24) throw ValidationError("partition config: exhaustive_threshold must be <= 24");
  if (c.initial_trials < 1) throw ValidationError("partition config: initial_trials must be >= 1");
}

WeightedGraph to_weighted(const PreferenceGraph& graph) {
  WeightedGraph g;
  g.n = graph.n;
  g.offsets = graph.offsets;
  g.adj = graph.neighbors;
  g.edge_weight.resize(graph.neighbors.size(), 1);
  if (graph.weighted()) {
    for (std::size_t k = 0; k < graph.weights.size(); ++k) {
      g.edge_weight[k] = std::max<std::int64_t>(1, std::llround(graph.weights[k]));
    }
  }
  g.vertex_weight.assign(graph.n, 1);
  return g;
}

std::vector<CoarseLevel> coarsen(const WeightedGraph& graph, const CoarsenOptions& options) {
  std::vector<CoarseLevel> levels;
  Rng rng(options.seed);
  for (;;) {
    const WeightedGraph& cur = levels.empty() ? graph : levels.back().graph;
    if (cur.n <= options.stop) break;

    std::vector<std::uint32_t> order(cur.n);
    std::iota(order.begin(), order.end(), 0u);
    shuffle_span(std::span(order), rng);
    std::vector<std::uint32_t> match(cur.n, kNone);
    for (std::uint32_t v : order) {
      if (match[v] != kNone) continue;
      std::uint32_t best = kNone;
      std::int64_t best_w = 0;
      const auto nb = cur.neighbors(v);
      const auto wt = cur.weights(v);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        const std::uint32_t u = nb[k];
        if (match[u] != kNone || u == v) continue;
        if (cur.vertex_weight[v] + cur.vertex_weight[u] > options.max_vertex_weight) continue;
        if (best == kNone || wt[k] > best_w || (wt[k] == best_w && u < best)) {
          best = u;
          best_w = wt[k];
        }
      }
      if (best == kNone) {
        match[v] = v;
      } else {
        match[v] = best;
        match[best] = v;
      }
    }

    CoarseLevel level;
    level.fine_to_coarse.assign(cur.n, kNone);
    std::uint32_t next = 0;
    for (std::uint32_t v = 0; v < cur.n; ++v) {
      if (match[v] < v) continue;
      level.fine_to_coarse[v] = next;
      level.fine_to_coarse[match[v]] = next;
      ++next;
    }
    if (static_cast<std::uint64_t>(next) * 20 > static_cast<std::uint64_t>(cur.n) * 19) break;

    WeightedGraph& c = level.graph;
    c.n = next;
    c.offsets.reserve(next + 1);
    c.offsets.push_back(0);
    c.vertex_weight.reserve(next);
    std::vector<std::int64_t> acc(next, 0);
    std::vector<std::uint32_t> touched;
    for (std::uint32_t v = 0; v < cur.n; ++v) {
      if (match[v] < v) continue;
      const std::uint32_t self = level.fine_to_coarse[v];
      std::int64_t vw = 0;
      for (std::uint32_t x : {v, match[v]}) {
        vw += cur.vertex_weight[x];
        const auto nb = cur.neighbors(x);
        const auto wt = cur.weights(x);
        for (std::size_t k = 0; k < nb.size(); ++k) {
          const std::uint32_t cu = level.fine_to_coarse[nb[k]];
          if (cu == self) continue;
          if (acc[cu] == 0) touched.push_back(cu);
          acc[cu] += wt[k];
        }
        if (match[v] == v) break;
      }
      std::sort(touched.begin(), touched.end());
      for (std::uint32_t cu : touched) {
        c.adj.push_back(cu);
        c.edge_weight.push_back(acc[cu]);
        acc[cu] = 0;
      }
      touched.clear();
      c.offsets.push_back(c.adj.size());
      c.vertex_weight.push_back(vw);
    }
    levels.push_back(std::move(level));
  }
  return levels;
}

std::vector<CoarseLevel> coarsen(const PreferenceGraph& graph, std::uint64_t seed, const PartitionConfig& config) {
  return coarsen(to_weighted(graph), {effective_coarsen_stop(config), coarse_weight_cap(config), seed});
}

std::vector<std::int64_t> cluster_targets(std::size_t n, std::uint32_t K) {
  const std::size_t full = n / K;
  std::vector<std::int64_t> t(full, K);
  if (n % K != 0) t.push_back(static_cast<std::int64_t>(n % K));
  return t;
}

std::vector<std::uint32_t> initial_partition(const WeightedGraph& graph, std::span<const std::int64_t> targets,
                                             const PartitionConfig& config, std::uint64_t seed) {
  if (targets.empty()) throw ValidationError("initial_partition: no clusters requested");
  std::vector<std::uint32_t> part(graph.n, 0);
  std::vector<std::uint32_t> local(graph.n, kNone);
  std::vector<std::uint32_t> all(graph.n);
  std::iota(all.begin(), all.end(), 0u);
  Rng rng(seed);
  recursive_bisect(graph, std::move(all), 0, static_cast<std::uint32_t>(targets.size()), targets, config, rng,
                   part, local);
  return part;
}

std::int64_t edge_cut(const WeightedGraph& g, std::span<const std::uint32_t> part) {
  std::int64_t cut = 0;
  for (std::uint32_t v = 0; v < g.n; ++v) {
    const auto nb = g.neighbors(v);
    const auto wt = g.weights(v);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (nb[k] > v && part[nb[k]] != part[v]) cut += wt[k];
    }
  }
  return cut;
}

RefineStats refine(const WeightedGraph& g, std::vector<std::uint32_t>& part, std::span<const std::int64_t> targets,
                   std::int64_t tolerance, const PartitionConfig& config) {
  RefineStats stats;
  stats.cut_before = edge_cut(g, part);
  const std::size_t clusters = targets.size();
  KwayState s = kway_state(g, part, clusters);
  rebalance(g, part, s, targets, tolerance);

  // version[c] bumps whenever cluster c changes; a pair whose FM run found
  // nothing is skipped until one of its clusters changes.
  std::int64_t current_cut = edge_cut(g, part);
  std::vector<std::uint32_t> version(clusters, 0);
  std::unordered_map<std::uint64_t, std::pair<std::uint32_t, std::uint32_t>> settled;
  std::vector<std::uint32_t> local(g.n, kNone);
  std::vector<std::uint32_t> verts;
  WeightedGraph sub;
  std::vector<std::uint8_t> side;
  FmWorkspace workspace;
  std::vector<std::int64_t> conn(clusters, 0);
  std::vector<std::uint32_t> touched;
  for (std::uint32_t pass = 0; pass < config.refine_passes; ++pass) {
    ++stats.passes;
    // Per directed cluster pair, the best single-vertex move gain; per
    // cluster, the best gain of moving a vertex to a cluster it has no
    // edges to. Both bound what a swap between the pair can achieve.
    // Entries are grouped by source cluster, so each group is sorted on its
    // own; move_begin[a] marks the start of cluster a's group.
    std::vector<std::pair<std::uint32_t, std::int64_t>> moves;
    std::vector<std::size_t> move_begin(clusters + 1, 0);
    std::vector<std::int64_t> detached(clusters, std::numeric_limits<std::int64_t>::min());
    std::vector<std::pair<std::uint64_t, std::int64_t>> pairs;
    for (std::uint32_t a = 0; a < clusters; ++a) {
      move_begin[a] = moves.size();
      const std::size_t pair_start = pairs.size();
      for (std::uint32_t v : s.members[a]) {
        const auto nb = g.neighbors(v);
        const auto wt = g.weights(v);
        for (std::size_t k = 0; k < nb.size(); ++k) {
          const std::uint32_t c = part[nb[k]];
          if (conn[c] == 0) touched.push_back(c);
          conn[c] += wt[k];
        }
        const std::int64_t own = conn[a];
        detached[a] = std::max(detached[a], -own);
        for (std::uint32_t c : touched) {
          if (c != a) moves.emplace_back(c, conn[c] - own);
          if (c > a) pairs.emplace_back((static_cast<std::uint64_t>(a) << 32) | c, conn[c]);
          conn[c] = 0;
        }
        touched.clear();
      }
      const auto first = moves.begin() + static_cast<std::ptrdiff_t>(move_begin[a]);
      std::sort(first, moves.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first < y.first : x.second > y.second;
      });
      moves.erase(std::unique(first, moves.end(), [](const auto& x, const auto& y) { return x.first == y.first; }),
                  moves.end());
      // Candidate pairs (a < b) that share an edge, with their connection weight.
      const auto pfirst = pairs.begin() + static_cast<std::ptrdiff_t>(pair_start);
      std::sort(pfirst, pairs.end());
      std::size_t out = pair_start;
      for (std::size_t i = pair_start; i < pairs.size(); ++i) {
        if (out > pair_start && pairs[out - 1].first == pairs[i].first) pairs[out - 1].second += pairs[i].second;
        else pairs[out++] = pairs[i];
      }
      pairs.resize(out);
    }
    move_begin[clusters] = moves.size();
    auto best_move = [&](std::uint32_t from, std::uint32_t to) {
      const auto first = moves.begin() + static_cast<std::ptrdiff_t>(move_begin[from]);
      const auto last = moves.begin() + static_cast<std::ptrdiff_t>(move_begin[from + 1]);
      const auto it = std::lower_bound(first, last, to, [](const auto& x, std::uint32_t k) { return x.first < k; });
      const std::int64_t adjacent = it != last && it->first == to ? it->second
                                                                  : std::numeric_limits<std::int64_t>::min();
      return std::max(adjacent, detached[from]);
    };
    // Heaviest connection first.
    std::stable_sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) { return x.second > y.second; });

    std::int64_t improved = 0;
    for (const auto& [key, w] : pairs) {
      const auto a = static_cast<std::uint32_t>(key >> 32);
      const auto b = static_cast<std::uint32_t>(key & 0xffffffffu);
      const auto it = settled.find(key);
      if (it != settled.end() && it->second == std::pair{version[a], version[b]}) continue;
      const std::int64_t ab = best_move(a, b), ba = best_move(b, a);
      const bool promising = std::max(ab, ba) > 0;
      if (!promising) {
        settled[key] = {version[a], version[b]};
        continue;
      }
      verts.assign(s.members[a].begin(), s.members[a].end());
      const std::size_t in_a = verts.size();
      verts.insert(verts.end(), s.members[b].begin(), s.members[b].end());
      induced(g, verts, local, sub);
      side.assign(verts.size(), 1);
      std::fill(side.begin(), side.begin() + static_cast<std::ptrdiff_t>(in_a), 0);
      const std::int64_t before = bisection_cut(sub, side);
      fm_bisection(sub, side, targets[a], targets[b], tolerance, 2, workspace);
      bool changed = false;
      for (std::size_t i = 0; i < verts.size(); ++i) changed = changed || side[i] != (i < in_a ? 0 : 1);
      if (!changed) {
        settled[key] = {version[a], version[b]};
        continue;
      }
      improved += before - bisection_cut(sub, side);
      ++version[a];
      ++version[b];
      s.members[a].clear();
      s.members[b].clear();
      s.weight[a] = s.weight[b] = 0;
      for (std::size_t i = 0; i < verts.size(); ++i) {
        const std::uint32_t c = side[i] == 0 ? a : b;
        part[verts[i]] = c;
        s.members[c].push_back(verts[i]);
        s.weight[c] += g.vertex_weight[verts[i]];
      }
    }
    // Stop once a pass recovers less than 0.1% of the cut.
    current_cut -= improved;
    if (improved <= 0 || improved * 1000 < current_cut) break;
  }
  stats.cut_after = edge_cut(g, part);
  return stats;
}

ClusterAssignment make_assignment(const PreferenceGraph& graph, std::uint32_t K, std::vector<std::uint32_t> assignment,
                                  std::uint64_t seed) {
  if (assignment.size() != graph.n) throw ValidationError("assignment length differs from vertex count");
  ClusterAssignment a;
  a.n = graph.n;
  a.K = K;
  a.C = static_cast<std::uint32_t>((graph.n + K - 1) / K);
  a.seed = seed;
  a.assignment = std::move(assignment);
  a.cluster_members.assign(a.C, {});
  for (std::uint32_t v = 0; v < a.n; ++v) {
    if (a.assignment[v] >= a.C) throw ValidationError("cluster id out of range at vertex " + std::to_string(v));
    a.cluster_members[a.assignment[v]].push_back(v);
  }
  for (std::uint32_t v = 0; v < graph.n; ++v) {
    for (std::uint32_t u : graph.adj(v)) {
      if (u <= v) continue;
      (a.assignment[u] == a.assignment[v] ? a.retained : a.cut) += 1;
    }
  }
  return a;
}

void validate_assignment(const ClusterAssignment& a, const PreferenceGraph* graph) {
  if (a.K < 2 || a.n < a.K) throw ValidationError("assignment: need 2 <= K <= n");
  if (a.C != (a.n + a.K - 1) / a.K) throw ValidationError("assignment: C must equal ceil(n/K)");
  if (a.assignment.size() != a.n || a.cluster_members.size() != a.C) {
    throw ValidationError("assignment: array sizes inconsistent");
  }
  const std::uint32_t remainder = a.n % a.K;
  std::size_t short_clusters = 0;
  for (std::uint32_t c = 0; c < a.C; ++c) {
    const auto& mem = a.cluster_members[c];
    if (mem.size() != a.K) {
      if (remainder == 0 || mem.size() != remainder || ++short_clusters > 1) {
        throw ValidationError("assignment: cluster " + std::to_string(c) + " has " + std::to_string(mem.size()) +
                              " members; expected " + std::to_string(a.K));
      }
    }
    for (std::size_t k = 0; k < mem.size(); ++k) {
      if (mem[k] >= a.n || a.assignment[mem[k]] != c || (k > 0 && mem[k - 1] >= mem[k])) {
        throw ValidationError("assignment: member list of cluster " + std::to_string(c) + " inconsistent");
      }
    }
  }
  if (graph != nullptr) {
    if (graph->n != a.n) throw ValidationError("assignment: graph vertex count differs");
    const ClusterAssignment check = make_assignment(*graph, a.K, a.assignment, a.seed);
    if (check.cut != a.cut || check.retained != a.retained) {
      throw ValidationError("assignment: cut/retained do not match the graph");
    }
  }
}

ClusterAssignment partition(const PreferenceGraph& graph, const PartitionConfig& config) {
  validate_partition_config(config, graph.n);
  const auto targets = cluster_targets(graph.n, config.K);
  const WeightedGraph base = to_weighted(graph);

  std::vector<CoarseLevel> levels;
  if (graph.n > config.exhaustive_threshold) {
    levels = coarsen(base, {effective_coarsen_stop(config), coarse_weight_cap(config),
                            derive_seed(config.seed, "coarsen")});
  }
  auto level_graph = [&](std::size_t l) -> const WeightedGraph& { return l == 0 ? base : levels[l - 1].graph; };

  std::vector<std::uint32_t> part =
      initial_partition(level_graph(levels.size()), targets, config, derive_seed(config.seed, "initial"));
  // Coarse levels only need to hand a reasonable start to the next level;
  // most of the cut reduction happens on the input graph.
  PartitionConfig coarse_config = config;
  coarse_config.refine_passes = std::max<std::uint32_t>(1, config.refine_passes / 4);
  for (std::size_t l = levels.size() + 1; l-- > 0;) {
    // Refining on a copy numbered in cluster order keeps each cluster's
    // adjacency contiguous in memory. Ties inside a cluster still break by
    // original id, so the result does not depend on the numbering.
    const WeightedGraph& g = level_graph(l);
    std::vector<std::uint32_t> old(g.n);
    std::iota(old.begin(), old.end(), 0u);
    std::stable_sort(old.begin(), old.end(), [&](std::uint32_t x, std::uint32_t y) { return part[x] < part[y]; });
    const WeightedGraph ordered = relabeled(g, old);
    std::vector<std::uint32_t> ordered_part(g.n);
    for (std::uint32_t i = 0; i < g.n; ++i) ordered_part[i] = part[old[i]];
    if (l == 0) refine(ordered, ordered_part, targets, 0, config);
    else refine(ordered, ordered_part, targets, max_vertex_weight(ordered), coarse_config);
    for (std::uint32_t i = 0; i < g.n; ++i) part[old[i]] = ordered_part[i];
    if (l > 0) {
      const auto& map = levels[l - 1].fine_to_coarse;
      std::vector<std::uint32_t> finer(map.size());
      for (std::size_t v = 0; v < map.size(); ++v) finer[v] = part[map[v]];
      part = std::move(finer);
    }
  }
  ClusterAssignment result = make_assignment(graph, config.K, std::move(part), config.seed);
  validate_assignment(result);
  return result;
}

std::uint64_t save_assignment(const ClusterAssignment& a, const std::filesystem::path& path,
                              const nlohmann::json& provenance) {
  validate_assignment(a);
  nlohmann::json h;
  h["kind"] = "assignment";
  h["format_version"] = 1;
  h["n"] = a.n;
  h["K"] = a.K;
  h["C"] = a.C;
  h["cut"] = a.cut;
  h["retained"] = a.retained;
  h["seed"] = a.seed;
  ByteWriter body;
  body.put_u32s(a.assignment);
  if (!provenance.is_null()) h["provenance"] = provenance;
  return write_artifact(path, h, body.bytes());
}

ClusterAssignment load_assignment(const std::filesystem::path& path) {
  const ArtifactBytes art = read_artifact(path, "assignment");
  ClusterAssignment a;
  try {
    a.n = art.header.at("n").get<std::uint32_t>();
    a.K = art.header.at("K").get<std::uint32_t>();
    a.C = art.header.at("C").get<std::uint32_t>();
    a.cut = art.header.at("cut").get<std::uint64_t>();
    a.retained = art.header.at("retained").get<std::uint64_t>();
    a.seed = art.header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed assignment header: ") + e.what());
  }
  if (art.body().size() < static_cast<std::size_t>(a.n) * 4) {
    throw FormatError("assignment payload shorter than n u32 ids");
  }
  ByteReader r(art.body());
  a.assignment.resize(a.n);
  r.get_u32s(a.assignment);
  verify_artifact_checksum(art, r.position());
  if (a.K < 2 || a.n < a.K) throw FormatError("assignment header: need 2 <= K <= n");
  a.cluster_members.assign(a.C, {});
  for (std::uint32_t v = 0; v < a.n; ++v) {
    if (a.assignment[v] >= a.C) throw FormatError("assignment: cluster id out of range");
    a.cluster_members[a.assignment[v]].push_back(v);
  }
  validate_assignment(a);
  return a;
}

}  // namespace batchmine
