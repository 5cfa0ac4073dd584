#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "batchmine/partitioner.hpp"

namespace batchmine {

struct BatchPlanConfig {
  std::uint32_t batch_size = 1024;
  std::uint32_t K = 32;
  std::uint32_t epochs = 1;
  std::uint64_t seed = 0;
  bool shuffle_within_batch = true;
};

/// Throws ValidationError unless K divides batch_size and batch_size <= n.
void validate_batch_plan_config(const BatchPlanConfig& config, std::size_t n);

struct Batch {
  std::string task_id;
  std::vector<std::uint32_t> members;         // example indices within the task
  std::vector<std::uint32_t> hard_negatives;  // shared by every query of the batch

  friend bool operator==(const Batch&, const Batch&) = default;
};

struct PlanTask {
  std::string task_id;
  std::uint32_t n = 0;

  friend bool operator==(const PlanTask&, const PlanTask&) = default;
};

struct BatchPlan {
  std::uint32_t n = 0;  // summed over tasks
  std::uint32_t K = 0;
  std::uint32_t batch_size = 0;
  std::uint32_t h = 0;
  std::uint64_t seed = 0;
  std::vector<PlanTask> tasks;
  std::vector<std::vector<Batch>> epochs;

  std::size_t batch_count() const;

  friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

/// Each epoch shuffles the full clusters with its own derived seed and
/// groups them batch_size/K at a time. Leftover clusters and the remainder
/// cluster form one short final batch.
BatchPlan plan_epochs(const ClusterAssignment& assignment, const BatchPlanConfig& config,
                      const std::string& task_id);

/// Baseline: each epoch is a seeded uniform permutation cut into chunks of
/// batch_size (last chunk short).
BatchPlan plan_random_batches(std::uint32_t n, const BatchPlanConfig& config, const std::string& task_id);

/// Round-robin merge of per-task plans. All plans must agree on K,
/// batch_size and epoch count, and task ids must be distinct.
BatchPlan interleave_plans(std::span<const BatchPlan> plans, std::uint64_t seed);

/// `negatives` holds one list per batch in plan order (epoch-major). Lists
/// may be shorter than h when the sampler ran out of support.
BatchPlan attach_hard_negatives(BatchPlan plan, std::span<const std::vector<std::uint32_t>> negatives,
                                std::uint32_t h);

/// Every epoch holds each index of every task exactly once, and negatives
/// never collide with their batch. Throws ValidationError.
void validate_plan(const BatchPlan& plan);

/// Every full batch of `task_id` is a union of whole clusters.
void check_cluster_atomicity(const BatchPlan& plan, const std::string& task_id,
                             const ClusterAssignment& assignment);

/// Text manifest. The first line is a header
///   # batchmine-manifest format_version=1 n=.. K=.. batch_size=.. h=.. seed=.. epochs=.. tasks=id:n,.. checksum=..
/// followed by one record per batch
///   epoch=E batch=B task=T members=i,j,.. negatives=a,b,..
/// The header checksum is FNV-1a over the record lines. Returns FNV-1a of
/// the whole file.
std::uint64_t emit_manifest(const BatchPlan& plan, const std::filesystem::path& path);
std::string manifest_text(const BatchPlan& plan);
BatchPlan read_manifest(const std::filesystem::path& path);
BatchPlan parse_manifest(std::string_view text);

}  // namespace batchmine
