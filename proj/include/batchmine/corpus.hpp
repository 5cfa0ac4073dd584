#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "batchmine/matrix.hpp"

namespace batchmine {

enum class TaskCategory { retrieval, classification, vqa, grounding, other };

std::string_view to_string(TaskCategory category);
TaskCategory parse_task_category(std::string_view text);

/// Teacher embeddings for one task. Row i of `queries` and row i of
/// `positives` form example i; that index is stable for the whole run.
struct EmbeddingCorpus {
  std::string task_id;
  TaskCategory task_category = TaskCategory::retrieval;
  Matrix queries;
  Matrix positives;
  std::vector<std::string> labels;  // non-empty iff classification
  std::map<std::string, std::string> prompt_metadata;

  std::size_t n() const { return queries.rows; }
  std::size_t d() const { return queries.cols; }

  friend bool operator==(const EmbeddingCorpus&, const EmbeddingCorpus&) = default;
};

/// Throws ValidationError naming the first violated invariant.
void validate_corpus(const EmbeddingCorpus& corpus);

/// Task ids end up in manifest records, so they are restricted to
/// [A-Za-z0-9_.-].
bool is_valid_task_id(std::string_view task_id);

inline constexpr std::uint32_t kCorpusFormatVersion = 1;

std::uint64_t save_corpus(const EmbeddingCorpus& corpus, const std::filesystem::path& path);
EmbeddingCorpus load_corpus(const std::filesystem::path& path);
/// Loads and returns the verified trailing checksum as well.
EmbeddingCorpus load_corpus(const std::filesystem::path& path, std::uint64_t& checksum);

/// Scales every row to unit Euclidean norm. Norms are accumulated in double.
Matrix normalize_rows(const Matrix& matrix);

struct CorpusManifestEntry {
  std::string task_id;
  std::filesystem::path path;
  std::size_t n = 0;
  std::size_t d = 0;
  std::uint64_t checksum = 0;

  friend bool operator==(const CorpusManifestEntry&, const CorpusManifestEntry&) = default;
};

struct CorpusManifest {
  std::uint32_t format_version = kCorpusFormatVersion;
  std::vector<CorpusManifestEntry> entries;

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

/// Tab-separated text: a "#corpus-manifest" version line, then one
/// `task_id  path  n  d  checksum` record per task.
void write_corpus_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);
CorpusManifest read_corpus_manifest(const std::filesystem::path& path);

/// Re-reads every listed file (relative paths resolve against `base_dir`)
/// and checks shape and checksum.
void verify_corpus_manifest(const CorpusManifest& manifest, const std::filesystem::path& base_dir);

}  // namespace batchmine
