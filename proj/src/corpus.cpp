#include "batchmine/corpus.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "batchmine/binary_io.hpp"
#include "batchmine/error.hpp"

namespace batchmine {

std::string_view to_string(TaskCategory category) {
  switch (category) {
    case TaskCategory::retrieval: return "retrieval";
    case TaskCategory::classification: return "classification";
    case TaskCategory::vqa: return "vqa";
    case TaskCategory::grounding: return "grounding";
    case TaskCategory::other: return "other";
  }
  return "other";
}

TaskCategory parse_task_category(std::string_view text) {
  if (text == "retrieval") return TaskCategory::retrieval;
  if (text == "classification") return TaskCategory::classification;
  if (text == "vqa") return TaskCategory::vqa;
  if (text == "grounding") return TaskCategory::grounding;
  if (text == "other") return TaskCategory::other;
  throw ValidationError("unknown task_category '" + std::string(text) + "'");
}

bool is_valid_task_id(std::string_view task_id) {
  if (task_id.empty()) return false;
  for (char c : task_id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

namespace {

void check_rows(const Matrix& m, const char* name) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    bool nonzero = false;
    for (float v : m.row(i)) {
      if (!std::isfinite(v)) {
        throw ValidationError(std::string(name) + " row " + std::to_string(i) + " has a non-finite value");
      }
      nonzero = nonzero || v != 0.0f;
    }
    if (!nonzero) throw ValidationError(std::string(name) + " row " + std::to_string(i) + " is the zero vector");
  }
}

}  // namespace

void validate_corpus(const EmbeddingCorpus& c) {
  if (!is_valid_task_id(c.task_id)) {
    throw ValidationError("task_id '" + c.task_id + "' must be non-empty and use only [A-Za-z0-9_.-]");
  }
  if (c.queries.rows != c.positives.rows || c.queries.cols != c.positives.cols) {
    throw ValidationError("dimension mismatch between queries and positives");
  }
  if (c.queries.data.size() != c.queries.rows * c.queries.cols ||
      c.positives.data.size() != c.positives.rows * c.positives.cols) {
    throw ValidationError("dimension mismatch: matrix storage does not match its shape");
  }
  if (c.n() < 2) throw ValidationError("corpus needs n >= 2 examples");
  if (c.d() < 1) throw ValidationError("corpus needs d >= 1");
  const bool classification = c.task_category == TaskCategory::classification;
  if (classification && c.labels.size() != c.n()) {
    throw ValidationError("classification corpus needs one label per example");
  }
  if (!classification && !c.labels.empty()) {
    throw ValidationError("labels are only allowed for classification corpora");
  }
  check_rows(c.queries, "query");
  check_rows(c.positives, "positive");
}

namespace {

nlohmann::json corpus_header(const EmbeddingCorpus& c) {
  nlohmann::json h;
  h["kind"] = "corpus";
  h["format_version"] = kCorpusFormatVersion;
  h["task_id"] = c.task_id;
  h["n"] = c.n();
  h["d"] = c.d();
  h["task_category"] = std::string(to_string(c.task_category));
  h["has_labels"] = !c.labels.empty();
  h["prompt_metadata"] = c.prompt_metadata;
  return h;
}

template <typename T>
T header_field(const nlohmann::json& h, const char* key) {
  if (!h.contains(key)) throw FormatError(std::string("malformed header: missing '") + key + "'");
  try {
    return h.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("malformed header: bad type for '") + key + "'");
  }
}

}  // namespace

std::uint64_t save_corpus(const EmbeddingCorpus& corpus, const std::filesystem::path& path) {
  validate_corpus(corpus);
  ByteWriter body;
  body.put_f32s(corpus.queries.data);
  body.put_f32s(corpus.positives.data);
  for (const auto& label : corpus.labels) body.put_string(label);
  return write_artifact(path, corpus_header(corpus), body.bytes());
}

EmbeddingCorpus load_corpus(const std::filesystem::path& path) {
  std::uint64_t checksum = 0;
  return load_corpus(path, checksum);
}

EmbeddingCorpus load_corpus(const std::filesystem::path& path, std::uint64_t& checksum) {
  const ArtifactBytes a = read_artifact(path, "corpus");
  const auto& h = a.header;
  if (header_field<std::uint32_t>(h, "format_version") != kCorpusFormatVersion) {
    throw FormatError("malformed header: unsupported format_version");
  }
  EmbeddingCorpus c;
  c.task_id = header_field<std::string>(h, "task_id");
  const auto n = header_field<std::uint64_t>(h, "n");
  const auto d = header_field<std::uint64_t>(h, "d");
  c.task_category = parse_task_category(header_field<std::string>(h, "task_category"));
  const bool has_labels = header_field<bool>(h, "has_labels");
  if (h.contains("prompt_metadata")) {
    try {
      c.prompt_metadata = h.at("prompt_metadata").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception&) {
      throw FormatError("malformed header: prompt_metadata must map strings to strings");
    }
  }
  if (n == 0 || d == 0 || n > (1ULL << 32) || d > (1ULL << 24)) {
    throw FormatError("malformed header: implausible shape n=" + std::to_string(n) + " d=" + std::to_string(d));
  }

  const auto body = a.body();
  const std::size_t matrix_bytes = static_cast<std::size_t>(n * d * 4);
  if (body.size() < 2 * matrix_bytes) throw FormatError("payload shorter than n·d·4 bytes");

  ByteReader r(body);
  c.queries = Matrix(n, d);
  c.positives = Matrix(n, d);
  r.get_f32s(c.queries.data);
  r.get_f32s(c.positives.data);
  if (has_labels) {
    c.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      try {
        c.labels.push_back(r.get_string());
      } catch (const FormatError&) {
        throw FormatError("payload truncated inside label " + std::to_string(i));
      }
    }
  }
  checksum = verify_artifact_checksum(a, r.position());
  validate_corpus(c);
  return c;
}

Matrix normalize_rows(const Matrix& matrix) {
  Matrix out(matrix.rows, matrix.cols);
  for (std::size_t i = 0; i < matrix.rows; ++i) {
    const auto src = matrix.row(i);
    double sq = 0.0;
    for (float v : src) sq += static_cast<double>(v) * v;
    if (sq == 0.0) throw ValidationError("cannot normalize zero row " + std::to_string(i));
    const double norm = std::sqrt(sq);
    auto dst = out.row(i);
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<float>(src[k] / norm);
  }
  return out;
}

void write_corpus_manifest(const CorpusManifest& manifest, const std::filesystem::path& path) {
  std::set<std::string> seen;
  std::ostringstream out;
  out << "#corpus-manifest\tformat_version=" << manifest.format_version << '\n';
  for (const auto& e : manifest.entries) {
    if (!seen.insert(e.task_id).second) throw ValidationError("duplicate task_id '" + e.task_id + "' in manifest");
    if (!is_valid_task_id(e.task_id)) throw ValidationError("invalid task_id '" + e.task_id + "' in manifest");
    if (e.path.string().find_first_of("\t\n") != std::string::npos) {
      throw ValidationError("manifest path for '" + e.task_id + "' contains a tab or newline");
    }
    out << e.task_id << '\t' << e.path.string() << '\t' << e.n << '\t' << e.d << '\t' << to_hex(e.checksum) << '\n';
  }
  const std::string text = out.str();
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

CorpusManifest read_corpus_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  CorpusManifest m;
  std::string line;
  if (!std::getline(in, line) || line.rfind("#corpus-manifest\tformat_version=", 0) != 0) {
    throw FormatError("corpus manifest '" + path.string() + "' has no version line");
  }
  m.format_version = static_cast<std::uint32_t>(std::stoul(line.substr(line.find('=') + 1)));
  if (m.format_version != kCorpusFormatVersion) throw FormatError("unsupported corpus manifest version");
  std::set<std::string> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5) {
      throw FormatError("corpus manifest line " + std::to_string(lineno) + ": expected 5 tab-separated fields");
    }
    CorpusManifestEntry e;
    e.task_id = fields[0];
    e.path = fields[1];
    try {
      e.n = std::stoull(fields[2]);
      e.d = std::stoull(fields[3]);
    } catch (const std::exception&) {
      throw FormatError("corpus manifest line " + std::to_string(lineno) + ": bad n or d");
    }
    e.checksum = from_hex(fields[4]);
    if (!seen.insert(e.task_id).second) throw ValidationError("duplicate task_id '" + e.task_id + "' in manifest");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void verify_corpus_manifest(const CorpusManifest& manifest, const std::filesystem::path& base_dir) {
  for (const auto& e : manifest.entries) {
    const auto file = e.path.is_absolute() ? e.path : base_dir / e.path;
    std::uint64_t checksum = 0;
    const EmbeddingCorpus c = load_corpus(file, checksum);
    if (c.task_id != e.task_id) throw ValidationError("manifest task '" + e.task_id + "' points at corpus '" + c.task_id + "'");
    if (c.n() != e.n || c.d() != e.d) throw ValidationError("manifest shape mismatch for task '" + e.task_id + "'");
    if (checksum != e.checksum) throw ValidationError("manifest checksum mismatch for task '" + e.task_id + "'");
  }
}

}  // namespace batchmine
