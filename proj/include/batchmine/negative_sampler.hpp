#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "batchmine/batch_planner.hpp"
#include "batchmine/random.hpp"
#include "batchmine/ranker.hpp"

namespace batchmine {

/// Batch-level hard-negative distribution: Pr(j) is proportional to the
/// number of batch members whose slice row contains j.
struct UnifiedDistribution {
  std::uint64_t batch_id = 0;
  std::vector<std::uint32_t> support;  // ascending
  std::vector<std::uint64_t> weights;  // parallel to support, all >= 1
  std::uint64_t total = 0;

  bool empty() const { return support.empty(); }

  friend bool operator==(const UnifiedDistribution&, const UnifiedDistribution&) = default;
};

/// Counts over the members' slice rows. The support excludes batch members,
/// every member's top-p false negatives and, for labeled slices, items
/// sharing a member's label. Throws ValidationError on an out-of-range or
/// repeated member index.
UnifiedDistribution build_distribution(const RankSlice& slice, std::span<const std::uint32_t> batch,
                                       std::uint64_t batch_id = 0);

struct NegativeSampleSet {
  std::uint64_t batch_id = 0;
  std::vector<std::uint32_t> negatives;  // in draw order
  bool shortfall = false;                // support held fewer than h items

  friend bool operator==(const NegativeSampleSet&, const NegativeSampleSet&) = default;
};

/// h draws without replacement; each draw picks j with probability
/// weight(j) / remaining total, then removes j.
NegativeSampleSet sample_negatives(const UnifiedDistribution& dist, std::uint32_t h, std::uint64_t seed);
NegativeSampleSet sample_negatives(const UnifiedDistribution& dist, std::uint32_t h, Rng& rng);

struct PlanNegatives {
  std::vector<std::vector<std::uint32_t>> lists;  // one per batch, plan order
  std::size_t shortfalls = 0;
};

/// Samples every batch of the plan. `slices` is indexed like plan.tasks.
/// Batch k (plan order) draws with derive_seed(seed, "negatives:<k>"), so
/// the result does not depend on the worker count.
PlanNegatives mine_plan_negatives(const BatchPlan& plan, std::span<const RankSlice* const> slices, std::uint32_t h,
                                  std::uint64_t seed, unsigned workers = 0);

}  // namespace batchmine
