#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "batchmine/error.hpp"
#include "batchmine/partitioner.hpp"
#include "batchmine/random.hpp"
#include "support.hpp"

namespace bm = batchmine;
using testsupport::scratch;

namespace {

using Edges = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

// Cliques {0..K-1}, {K..2K-1}, ...
bm::PreferenceGraph cliques(std::uint32_t count, std::uint32_t K) {
  Edges e;
  for (std::uint32_t c = 0; c < count; ++c) {
    for (std::uint32_t a = 0; a < K; ++a) {
      for (std::uint32_t b = a + 1; b < K; ++b) e.push_back({c * K + a, c * K + b});
    }
  }
  return bm::graph_from_edges(count * K, e);
}

bm::PartitionConfig config(std::uint32_t K, std::uint64_t seed = 1) {
  bm::PartitionConfig c;
  c.K = K;
  c.seed = seed;
  return c;
}

bool same_cluster(const bm::ClusterAssignment& a, std::uint32_t u, std::uint32_t v) {
  return a.assignment[u] == a.assignment[v];
}

}  // namespace

TEST_CASE("two disjoint cliques separate cleanly") {
  const auto a = bm::partition(cliques(2, 4), config(4));
  CHECK(a.cut == 0);
  CHECK(a.retained == 12);
  for (std::uint32_t v = 1; v < 4; ++v) CHECK(same_cluster(a, 0, v));
  for (std::uint32_t v = 5; v < 8; ++v) CHECK(same_cluster(a, 4, v));
}

TEST_CASE("edgeless graph still splits evenly") {
  const auto a = bm::partition(bm::graph_from_edges(8, {}), config(4));
  CHECK(a.cut == 0);
  CHECK(a.cluster_members[0].size() == 4);
  CHECK(a.cluster_members[1].size() == 4);
}

TEST_CASE("small random graphs reach the enumerated optimum") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto g = testsupport::random_graph(8, 12, seed);
    const auto a = bm::partition(g, config(4, seed));
    CHECK(a.cut == testsupport::exhaustive_min_cut(g, 4));
  }
}

TEST_CASE("heavy-edge matching on a path") {
  Edges path{{0, 1}, {1, 2}, {2, 3}};
  const auto w = bm::to_weighted(bm::graph_from_edges(4, path));
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    // Reproduce the visit order by hand. The first visited vertex takes its
    // lowest-index neighbor on ties, so only starting at vertex 2 pairs the
    // middle of the path.
    bm::Rng rng(seed);
    std::vector<std::uint32_t> order(4);
    std::iota(order.begin(), order.end(), 0u);
    bm::shuffle_span(std::span(order), rng);
    const auto levels = bm::coarsen(w, {2, 2, seed});
    REQUIRE(!levels.empty());
    const auto& map = levels[0].fine_to_coarse;
    if (order[0] == 2) {
      CHECK(levels[0].graph.n == 3);
      CHECK(map[1] == map[2]);
    } else {
      REQUIRE(levels.size() == 1);
      CHECK(levels[0].graph.n == 2);
      CHECK(map[0] == map[1]);
      CHECK(map[2] == map[3]);
      CHECK(levels[0].graph.vertex_weight == std::vector<std::int64_t>{2, 2});
      CHECK(levels[0].graph.edge_weight == std::vector<std::int64_t>{1, 1});
    }
  }
}

TEST_CASE("coarsening an edgeless graph yields no levels") {
  CHECK(bm::coarsen(bm::to_weighted(bm::graph_from_edges(10, {})), {2, 100, 0}).empty());
}

TEST_CASE("coarsening conserves vertex and edge weight") {
  const auto g = testsupport::random_graph(500, 2500, 3);
  const auto w = bm::to_weighted(g);
  const auto levels = bm::coarsen(w, {20, 16, 9});
  CHECK(levels.size() >= 2);
  std::int64_t fine_internal = 0;
  const bm::WeightedGraph* fine = &w;
  for (const auto& level : levels) {
    CHECK(level.graph.total_vertex_weight() == 500);
    for (std::int64_t vw : level.graph.vertex_weight) CHECK(vw <= 16);
    // Fine edge weight = coarse edge weight + weight absorbed inside supervertices.
    std::int64_t fine_total = 0, absorbed = 0;
    for (std::uint32_t v = 0; v < fine->n; ++v) {
      const auto nb = fine->neighbors(v);
      const auto wt = fine->weights(v);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        fine_total += wt[k];
        if (level.fine_to_coarse[v] == level.fine_to_coarse[nb[k]]) absorbed += wt[k];
      }
    }
    const std::int64_t coarse_total =
        std::accumulate(level.graph.edge_weight.begin(), level.graph.edge_weight.end(), std::int64_t{0});
    CHECK(fine_total == coarse_total + absorbed);
    fine_internal += absorbed;
    fine = &level.graph;
  }
  CHECK(fine_internal > 0);
}

TEST_CASE("initial partition of size-2 supervertices") {
  bm::WeightedGraph g;
  g.n = 4;
  g.offsets = {0, 1, 2, 3, 4};
  g.adj = {1, 0, 3, 2};
  g.edge_weight = {5, 5, 5, 5};
  g.vertex_weight = {2, 2, 2, 2};
  const auto targets = bm::cluster_targets(8, 4);
  const auto part = bm::initial_partition(g, targets, config(4), 3);
  CHECK(part[0] == part[1]);
  CHECK(part[2] == part[3]);
  CHECK(part[0] != part[2]);
}

TEST_CASE("exact initial split does not depend on the seed") {
  const auto w = bm::to_weighted(testsupport::random_graph(14, 30, 4));
  const auto targets = bm::cluster_targets(14, 7);
  const auto a = bm::initial_partition(w, targets, config(7), 1);
  const auto b = bm::initial_partition(w, targets, config(7), 99);
  CHECK(bm::edge_cut(w, a) == bm::edge_cut(w, b));
  CHECK(bm::edge_cut(w, a) == testsupport::exhaustive_min_cut(testsupport::random_graph(14, 30, 4), 7));
}

TEST_CASE("initial partition recovers two disconnected blocks") {
  Edges e;
  std::mt19937_64 rng(6);
  for (std::uint32_t block = 0; block < 2; ++block) {
    for (std::uint32_t a = 0; a < 20; ++a) {
      for (std::uint32_t b = a + 1; b < 20; ++b) {
        if (rng() % 3 == 0 || b == a + 1) e.push_back({block * 20 + a, block * 20 + b});
      }
    }
  }
  const auto w = bm::to_weighted(bm::graph_from_edges(40, e));
  const auto part = bm::initial_partition(w, bm::cluster_targets(40, 20), config(20), 5);
  CHECK(bm::edge_cut(w, part) == 0);
  for (std::uint32_t v = 0; v < 40; ++v) CHECK(part[v] == part[v < 20 ? 0 : 20]);
}

TEST_CASE("refinement repairs a swapped pair") {
  const auto w = bm::to_weighted(cliques(2, 4));
  const auto targets = bm::cluster_targets(8, 4);
  std::vector<std::uint32_t> optimal{0, 0, 0, 0, 1, 1, 1, 1};
  auto part = optimal;
  auto stats = bm::refine(w, part, targets, 0, config(4));
  CHECK(part == optimal);
  CHECK(stats.cut_after == 0);

  std::swap(part[3], part[4]);
  CHECK(bm::edge_cut(w, part) == 6);
  stats = bm::refine(w, part, targets, 0, config(4));
  CHECK(stats.cut_before == 6);
  CHECK(stats.cut_after == 0);
  CHECK(part == optimal);
}

TEST_CASE("refinement never increases the cut and keeps sizes") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = testsupport::random_graph(300, 1200, seed);
    const auto w = bm::to_weighted(g);
    const auto targets = bm::cluster_targets(300, 16);
    std::vector<std::uint32_t> part(300);
    for (std::uint32_t v = 0; v < 300; ++v) part[v] = v / 16;
    std::mt19937_64 rng(seed);
    std::shuffle(part.begin(), part.end(), rng);
    const auto stats = bm::refine(w, part, targets, 0, config(16));
    CHECK(stats.cut_after <= stats.cut_before);
    CHECK(stats.cut_after == bm::edge_cut(w, part));
    CHECK(testsupport::balanced(part, 16));
  }
}

TEST_CASE("partition keeps exact sizes including a remainder") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::uint32_t n = 100 + static_cast<std::uint32_t>(seed * 37 % 300);
    const std::uint32_t K = 2 + static_cast<std::uint32_t>(seed % 9);
    const auto g = testsupport::random_graph(n, n * 3, seed);
    const auto a = bm::partition(g, config(K, seed));
    CHECK(testsupport::balanced(a.assignment, K));
    CHECK(a.C == (n + K - 1) / K);
    CHECK(a.cut + a.retained == g.edge_count());
    bm::validate_assignment(a, &g);
  }
}

TEST_CASE("partition is deterministic for a seed") {
  const auto g = testsupport::random_graph(700, 3000, 8);
  const auto a = bm::partition(g, config(10, 4));
  CHECK(bm::partition(g, config(10, 4)) == a);
}

TEST_CASE("partition retains more than random balanced splits") {
  const auto slice = testsupport::random_slice(1200, 15, 2, 30);
  const auto g = bm::build_graph(slice);
  const auto a = bm::partition(g, config(16, 2));
  std::mt19937_64 rng(1);
  double random_retained = 0;
  std::vector<std::uint32_t> ids(g.n);
  for (std::uint32_t v = 0; v < g.n; ++v) ids[v] = v / 16;
  for (int t = 0; t < 20; ++t) {
    std::shuffle(ids.begin(), ids.end(), rng);
    random_retained += static_cast<double>(bm::make_assignment(g, 16, ids, 0).retained) / 20;
  }
  CHECK(static_cast<double>(a.retained) > 3 * random_retained);
}

TEST_CASE("partition configuration errors") {
  const auto g = testsupport::random_graph(20, 40, 1);
  CHECK_THROWS_AS(bm::partition(g, config(21)), bm::ValidationError);
  CHECK_THROWS_AS(bm::partition(g, config(1)), bm::ValidationError);
  auto c = config(4);
  c.coarsen_stop = 5;
  CHECK_THROWS_AS(bm::partition(g, c), bm::ValidationError);
  c = config(4);
  c.refine_passes = 0;
  CHECK_THROWS_AS(bm::partition(g, c), bm::ValidationError);
}

TEST_CASE("assignment validation and file round-trip") {
  const auto g = testsupport::random_graph(90, 300, 2);
  const auto a = bm::partition(g, config(8, 6));
  const auto path = scratch("unit.assign");
  bm::save_assignment(a, path, {{"stage", "partition"}});
  CHECK(bm::load_assignment(path) == a);

  auto broken = a;
  broken.assignment[0] = broken.assignment[0] == 0 ? 1 : 0;
  CHECK_THROWS_AS(bm::validate_assignment(broken), bm::ValidationError);
}
