#include "batchmine/negative_sampler.hpp"

#include <algorithm>

#include "batchmine/error.hpp"
#include "batchmine/parallel.hpp"

namespace batchmine {

UnifiedDistribution build_distribution(const RankSlice& slice, std::span<const std::uint32_t> batch,
                                       std::uint64_t batch_id) {
  std::vector<std::uint32_t> excluded(batch.begin(), batch.end());
  std::sort(excluded.begin(), excluded.end());
  for (std::size_t k = 0; k < excluded.size(); ++k) {
    if (excluded[k] >= slice.n) {
      throw ValidationError("build_distribution: batch index " + std::to_string(excluded[k]) + " out of range");
    }
    if (k > 0 && excluded[k] == excluded[k - 1]) {
      throw ValidationError("build_distribution: batch index " + std::to_string(excluded[k]) + " repeated");
    }
  }
  for (std::uint32_t i : batch) {
    const auto fn = slice.false_negative_row(i);
    excluded.insert(excluded.end(), fn.begin(), fn.end());
  }
  std::sort(excluded.begin(), excluded.end());
  excluded.erase(std::unique(excluded.begin(), excluded.end()), excluded.end());

  std::vector<std::uint32_t> member_labels;
  if (slice.has_labels()) {
    for (std::uint32_t i : batch) member_labels.push_back(slice.label_class[i]);
    std::sort(member_labels.begin(), member_labels.end());
  }

  std::vector<std::uint32_t> hits;
  hits.reserve(batch.size() * slice.m);
  for (std::uint32_t i : batch) {
    for (std::uint32_t j : slice.row(i)) {
      if (std::binary_search(excluded.begin(), excluded.end(), j)) continue;
      if (!member_labels.empty() &&
          std::binary_search(member_labels.begin(), member_labels.end(), slice.label_class[j])) {
        continue;
      }
      hits.push_back(j);
    }
  }
  std::sort(hits.begin(), hits.end());

  UnifiedDistribution dist;
  dist.batch_id = batch_id;
  for (std::size_t k = 0; k < hits.size();) {
    std::size_t run = k;
    while (run < hits.size() && hits[run] == hits[k]) ++run;
    dist.support.push_back(hits[k]);
    dist.weights.push_back(run - k);
    dist.total += run - k;
    k = run;
  }
  return dist;
}

NegativeSampleSet sample_negatives(const UnifiedDistribution& dist, std::uint32_t h, Rng& rng) {
  NegativeSampleSet out;
  out.batch_id = dist.batch_id;
  out.shortfall = dist.support.size() < h;
  std::vector<std::uint32_t> support = dist.support;
  std::vector<std::uint64_t> weights = dist.weights;
  std::uint64_t total = dist.total;
  const std::size_t draws = std::min<std::size_t>(h, support.size());
  for (std::size_t d = 0; d < draws; ++d) {
    std::uniform_int_distribution<std::uint64_t> pick(0, total - 1);
    std::uint64_t r = pick(rng);
    std::size_t k = 0;
    while (r >= weights[k]) r -= weights[k++];
    out.negatives.push_back(support[k]);
    total -= weights[k];
    support.erase(support.begin() + static_cast<std::ptrdiff_t>(k));
    weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

NegativeSampleSet sample_negatives(const UnifiedDistribution& dist, std::uint32_t h, std::uint64_t seed) {
  Rng rng(seed);
  return sample_negatives(dist, h, rng);
}

PlanNegatives mine_plan_negatives(const BatchPlan& plan, std::span<const RankSlice* const> slices, std::uint32_t h,
                                  std::uint64_t seed, unsigned workers) {
  if (slices.size() != plan.tasks.size()) {
    throw ValidationError("mine_plan_negatives: need one slice per plan task");
  }
  for (std::size_t t = 0; t < slices.size(); ++t) {
    if (slices[t] == nullptr || slices[t]->n != plan.tasks[t].n) {
      throw ValidationError("mine_plan_negatives: slice for task '" + plan.tasks[t].task_id +
                            "' is missing or has the wrong size");
    }
  }
  std::vector<const Batch*> batches;
  for (const auto& epoch : plan.epochs) {
    for (const auto& b : epoch) batches.push_back(&b);
  }
  PlanNegatives out;
  out.lists.resize(batches.size());
  std::vector<std::uint8_t> short_flags(batches.size(), 0);
  parallel_for(batches.size(), workers == 0 ? default_workers() : workers, [&](std::size_t k) {
    const Batch& b = *batches[k];
    std::size_t t = 0;
    while (t < plan.tasks.size() && plan.tasks[t].task_id != b.task_id) ++t;
    if (t == plan.tasks.size()) throw ValidationError("mine_plan_negatives: unknown task '" + b.task_id + "'");
    const auto dist = build_distribution(*slices[t], b.members, k);
    auto sample = sample_negatives(dist, h, derive_seed(seed, "negatives:" + std::to_string(k)));
    out.lists[k] = std::move(sample.negatives);
    short_flags[k] = sample.shortfall;
  });
  out.shortfalls = static_cast<std::size_t>(std::count(short_flags.begin(), short_flags.end(), 1));
  return out;
}

}  // namespace batchmine
