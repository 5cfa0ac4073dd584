#include "batchmine/batch_planner.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>

#include "batchmine/binary_io.hpp"
#include "batchmine/corpus.hpp"
#include "batchmine/error.hpp"
#include "batchmine/random.hpp"

namespace batchmine {

namespace {

constexpr std::string_view kManifestTag = "# batchmine-manifest";
constexpr std::uint32_t kManifestVersion = 1;

std::string batch_name(std::size_t epoch, std::size_t batch) {
  return "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch);
}

void append_list(std::string& out, std::span<const std::uint32_t> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(values[i]);
  }
}

template <typename T>
T parse_number(std::string_view text, std::string_view field) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw FormatError("manifest: bad value '" + std::string(text) + "' for " + std::string(field));
  }
  return value;
}

std::vector<std::uint32_t> parse_list(std::string_view text, std::string_view field) {
  std::vector<std::uint32_t> out;
  while (!text.empty()) {
    const std::size_t comma = text.find(',');
    out.push_back(parse_number<std::uint32_t>(text.substr(0, comma), field));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
    if (text.empty()) throw FormatError("manifest: trailing comma in " + std::string(field));
  }
  return out;
}

// Splits "k1=v1 k2=v2 ..." and checks the keys appear exactly in `keys` order.
std::vector<std::string_view> split_fields(std::string_view line, std::span<const std::string_view> keys,
                                           std::size_t line_no) {
  std::vector<std::string_view> values;
  std::size_t pos = 0;
  for (std::string_view key : keys) {
    if (pos > line.size()) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": missing field '" + std::string(key) + "'");
    }
    const std::size_t end = std::min(line.find(' ', pos), line.size());
    const std::string_view token = line.substr(pos, end - pos);
    if (token.size() <= key.size() || token.substr(0, key.size()) != key || token[key.size()] != '=') {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected field '" + std::string(key) + "'");
    }
    values.push_back(token.substr(key.size() + 1));
    pos = end + 1;
  }
  if (pos < line.size()) {
    throw FormatError("manifest line " + std::to_string(line_no) + ": unexpected trailing fields");
  }
  return values;
}

std::size_t task_n(const BatchPlan& plan, const std::string& task_id) {
  for (const auto& t : plan.tasks) {
    if (t.task_id == task_id) return t.n;
  }
  throw ValidationError("plan: batch refers to unknown task '" + task_id + "'");
}

}  // namespace

std::size_t BatchPlan::batch_count() const {
  std::size_t count = 0;
  for (const auto& e : epochs) count += e.size();
  return count;
}

void validate_batch_plan_config(const BatchPlanConfig& c, std::size_t n) {
  if (c.K == 0) throw ValidationError("batch plan config: K must be >= 1");
  if (c.batch_size == 0 || c.batch_size % c.K != 0) {
    throw ValidationError("batch plan config: batch_size = " + std::to_string(c.batch_size) +
                          " is not a multiple of K = " + std::to_string(c.K));
  }
  if (c.batch_size > n) {
    throw ValidationError("batch plan config: batch_size = " + std::to_string(c.batch_size) + " exceeds n = " +
                          std::to_string(n));
  }
}

BatchPlan plan_epochs(const ClusterAssignment& assignment, const BatchPlanConfig& config,
                      const std::string& task_id) {
  if (config.K != assignment.K) {
    throw ValidationError("batch plan config: K = " + std::to_string(config.K) + " differs from assignment K = " +
                          std::to_string(assignment.K));
  }
  validate_batch_plan_config(config, assignment.n);
  if (!is_valid_task_id(task_id)) throw ValidationError("batch plan: invalid task id '" + task_id + "'");
  validate_assignment(assignment);

  std::vector<std::uint32_t> full;
  std::uint32_t remainder = UINT32_MAX;
  for (std::uint32_t c = 0; c < assignment.C; ++c) {
    if (assignment.cluster_members[c].size() == assignment.K) full.push_back(c);
    else remainder = c;
  }
  const std::size_t per_batch = config.batch_size / config.K;

  BatchPlan plan;
  plan.n = assignment.n;
  plan.K = config.K;
  plan.batch_size = config.batch_size;
  plan.seed = config.seed;
  plan.tasks = {{task_id, assignment.n}};
  for (std::uint32_t e = 0; e < config.epochs; ++e) {
    Rng rng(derive_seed(config.seed, "epoch:" + std::to_string(e)));
    std::vector<std::uint32_t> order = full;
    shuffle_span(std::span(order), rng);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += per_batch) {
      Batch b;
      b.task_id = task_id;
      for (std::size_t k = start; k < std::min(order.size(), start + per_batch); ++k) {
        const auto& mem = assignment.cluster_members[order[k]];
        b.members.insert(b.members.end(), mem.begin(), mem.end());
      }
      batches.push_back(std::move(b));
    }
    if (remainder != UINT32_MAX) {
      if (batches.empty() || batches.back().members.size() == config.batch_size) {
        batches.push_back(Batch{task_id, {}, {}});
      }
      const auto& mem = assignment.cluster_members[remainder];
      batches.back().members.insert(batches.back().members.end(), mem.begin(), mem.end());
    }
    if (config.shuffle_within_batch) {
      for (auto& b : batches) shuffle_span(std::span(b.members), rng);
    }
    plan.epochs.push_back(std::move(batches));
  }
  return plan;
}

BatchPlan plan_random_batches(std::uint32_t n, const BatchPlanConfig& config, const std::string& task_id) {
  validate_batch_plan_config(config, n);
  if (!is_valid_task_id(task_id)) throw ValidationError("batch plan: invalid task id '" + task_id + "'");
  BatchPlan plan;
  plan.n = n;
  plan.K = config.K;
  plan.batch_size = config.batch_size;
  plan.seed = config.seed;
  plan.tasks = {{task_id, n}};
  for (std::uint32_t e = 0; e < config.epochs; ++e) {
    Rng rng(derive_seed(config.seed, "random-epoch:" + std::to_string(e)));
    std::vector<std::uint32_t> order(n);
    for (std::uint32_t i = 0; i < n; ++i) order[i] = i;
    shuffle_span(std::span(order), rng);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const auto stop = std::min<std::size_t>(n, start + config.batch_size);
      batches.push_back(Batch{task_id, {order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(stop)},
                              {}});
    }
    plan.epochs.push_back(std::move(batches));
  }
  return plan;
}

BatchPlan interleave_plans(std::span<const BatchPlan> plans, std::uint64_t seed) {
  BatchPlan out;
  out.seed = seed;
  if (plans.empty()) return out;
  out.K = plans[0].K;
  out.batch_size = plans[0].batch_size;
  std::set<std::string> seen;
  for (const auto& p : plans) {
    if (p.K != out.K || p.batch_size != out.batch_size || p.epochs.size() != plans[0].epochs.size()) {
      throw ValidationError("interleave: plans disagree on K, batch_size or epoch count");
    }
    for (const auto& t : p.tasks) {
      if (!seen.insert(t.task_id).second) throw ValidationError("interleave: duplicate task '" + t.task_id + "'");
      out.tasks.push_back(t);
      out.n += t.n;
    }
    out.h = std::max(out.h, p.h);
  }
  for (std::size_t e = 0; e < plans[0].epochs.size(); ++e) {
    std::vector<Batch> merged;
    std::vector<std::size_t> cursor(plans.size(), 0);
    for (bool any = true; any;) {
      any = false;
      for (std::size_t t = 0; t < plans.size(); ++t) {
        const auto& src = plans[t].epochs[e];
        if (cursor[t] < src.size()) {
          merged.push_back(src[cursor[t]++]);
          any = true;
        }
      }
    }
    out.epochs.push_back(std::move(merged));
  }
  return out;
}

BatchPlan attach_hard_negatives(BatchPlan plan, std::span<const std::vector<std::uint32_t>> negatives,
                                std::uint32_t h) {
  if (negatives.size() != plan.batch_count()) {
    throw ValidationError("attach_hard_negatives: " + std::to_string(negatives.size()) + " lists for " +
                          std::to_string(plan.batch_count()) + " batches");
  }
  std::size_t k = 0;
  for (std::size_t e = 0; e < plan.epochs.size(); ++e) {
    for (std::size_t b = 0; b < plan.epochs[e].size(); ++b, ++k) {
      Batch& batch = plan.epochs[e][b];
      const auto& list = negatives[k];
      if (list.size() > h) {
        throw ValidationError("attach_hard_negatives: " + batch_name(e, b) + " has " + std::to_string(list.size()) +
                              " negatives; h = " + std::to_string(h));
      }
      const std::size_t limit = task_n(plan, batch.task_id);
      std::vector<std::uint32_t> members = batch.members;
      std::sort(members.begin(), members.end());
      std::vector<std::uint32_t> sorted = list;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ValidationError("attach_hard_negatives: " + batch_name(e, b) + " has a repeated negative");
      }
      for (std::uint32_t j : list) {
        if (j >= limit) {
          throw ValidationError("attach_hard_negatives: " + batch_name(e, b) + ": negative " + std::to_string(j) +
                                " out of range");
        }
        if (std::binary_search(members.begin(), members.end(), j)) {
          throw ValidationError("attach_hard_negatives: " + batch_name(e, b) + ": negative " + std::to_string(j) +
                                " is a member of the batch");
        }
      }
      batch.hard_negatives = list;
    }
  }
  plan.h = h;
  return plan;
}

void validate_plan(const BatchPlan& plan) {
  std::map<std::string, std::uint32_t> sizes;
  std::uint32_t total = 0;
  for (const auto& t : plan.tasks) {
    if (!sizes.emplace(t.task_id, t.n).second) throw ValidationError("plan: duplicate task '" + t.task_id + "'");
    total += t.n;
  }
  if (total != plan.n) throw ValidationError("plan: task sizes do not sum to n");
  for (std::size_t e = 0; e < plan.epochs.size(); ++e) {
    std::map<std::string, std::vector<std::uint8_t>> seen;
    for (const auto& [id, n] : sizes) seen[id].assign(n, 0);
    for (std::size_t b = 0; b < plan.epochs[e].size(); ++b) {
      const Batch& batch = plan.epochs[e][b];
      const auto it = seen.find(batch.task_id);
      if (it == seen.end()) throw ValidationError("plan: " + batch_name(e, b) + " has unknown task");
      if (batch.members.empty() || batch.members.size() > plan.batch_size) {
        throw ValidationError("plan: " + batch_name(e, b) + " has " + std::to_string(batch.members.size()) +
                              " members");
      }
      if (batch.hard_negatives.size() > plan.h) {
        throw ValidationError("plan: " + batch_name(e, b) + " has more than h negatives");
      }
      auto& marks = it->second;
      for (std::uint32_t i : batch.members) {
        if (i >= marks.size() || marks[i]) {
          throw ValidationError("plan: " + batch_name(e, b) + ": index " + std::to_string(i) +
                                " out of range or repeated in the epoch");
        }
        marks[i] = 1;
      }
      for (std::uint32_t j : batch.hard_negatives) {
        if (j >= marks.size() ||
            std::find(batch.members.begin(), batch.members.end(), j) != batch.members.end()) {
          throw ValidationError("plan: " + batch_name(e, b) + ": negative " + std::to_string(j) + " is invalid");
        }
      }
    }
    for (const auto& [id, marks] : seen) {
      if (std::find(marks.begin(), marks.end(), 0) != marks.end()) {
        throw ValidationError("plan: epoch " + std::to_string(e) + " does not cover task '" + id + "'");
      }
    }
  }
}

void check_cluster_atomicity(const BatchPlan& plan, const std::string& task_id, const ClusterAssignment& a) {
  for (std::size_t e = 0; e < plan.epochs.size(); ++e) {
    for (std::size_t b = 0; b < plan.epochs[e].size(); ++b) {
      const Batch& batch = plan.epochs[e][b];
      if (batch.task_id != task_id || batch.members.size() != plan.batch_size) continue;
      std::map<std::uint32_t, std::size_t> counts;
      for (std::uint32_t i : batch.members) ++counts[a.assignment.at(i)];
      for (const auto& [c, count] : counts) {
        if (count != a.cluster_members[c].size()) {
          throw ValidationError("plan: " + batch_name(e, b) + " splits cluster " + std::to_string(c));
        }
      }
    }
  }
}

std::string manifest_text(const BatchPlan& plan) {
  std::string body;
  for (std::size_t e = 0; e < plan.epochs.size(); ++e) {
    for (std::size_t b = 0; b < plan.epochs[e].size(); ++b) {
      const Batch& batch = plan.epochs[e][b];
      body += "epoch=" + std::to_string(e) + " batch=" + std::to_string(b) + " task=" + batch.task_id + " members=";
      append_list(body, batch.members);
      body += " negatives=";
      append_list(body, batch.hard_negatives);
      body += '\n';
    }
  }
  std::string header = std::string(kManifestTag) + " format_version=" + std::to_string(kManifestVersion) +
                       " n=" + std::to_string(plan.n) + " K=" + std::to_string(plan.K) +
                       " batch_size=" + std::to_string(plan.batch_size) + " h=" + std::to_string(plan.h) +
                       " seed=" + std::to_string(plan.seed) + " epochs=" + std::to_string(plan.epochs.size()) +
                       " tasks=";
  for (std::size_t t = 0; t < plan.tasks.size(); ++t) {
    if (t > 0) header += ',';
    header += plan.tasks[t].task_id + ":" + std::to_string(plan.tasks[t].n);
  }
  header += " checksum=" + to_hex(fnv1a64(body)) + "\n";
  return header + body;
}

std::uint64_t emit_manifest(const BatchPlan& plan, const std::filesystem::path& path) {
  validate_plan(plan);
  const std::string text = manifest_text(plan);
  const std::span bytes(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
  write_file(path, bytes);
  return fnv1a64(bytes);
}

BatchPlan parse_manifest(std::string_view text) {
  const std::size_t eol = text.find('\n');
  if (eol == std::string_view::npos) throw FormatError("manifest: missing header line");
  std::string_view header = text.substr(0, eol);
  const std::string_view body = text.substr(eol + 1);
  if (header.substr(0, kManifestTag.size()) != kManifestTag || header.size() <= kManifestTag.size() + 1) {
    throw FormatError("manifest: missing '" + std::string(kManifestTag) + "' header");
  }
  header.remove_prefix(kManifestTag.size() + 1);
  static constexpr std::string_view header_keys[] = {"format_version", "n",      "K",     "batch_size", "h",
                                                     "seed",           "epochs", "tasks", "checksum"};
  const auto hv = split_fields(header, header_keys, 1);
  if (parse_number<std::uint32_t>(hv[0], "format_version") != kManifestVersion) {
    throw FormatError("manifest: unsupported format_version " + std::string(hv[0]));
  }
  if (from_hex(hv[8]) != fnv1a64(body)) throw FormatError("manifest: checksum mismatch");

  BatchPlan plan;
  plan.n = parse_number<std::uint32_t>(hv[1], "n");
  plan.K = parse_number<std::uint32_t>(hv[2], "K");
  plan.batch_size = parse_number<std::uint32_t>(hv[3], "batch_size");
  plan.h = parse_number<std::uint32_t>(hv[4], "h");
  plan.seed = parse_number<std::uint64_t>(hv[5], "seed");
  plan.epochs.resize(parse_number<std::uint32_t>(hv[6], "epochs"));
  std::string_view tasks = hv[7];
  while (!tasks.empty()) {
    const std::size_t comma = tasks.find(',');
    const std::string_view item = tasks.substr(0, comma);
    const std::size_t colon = item.rfind(':');
    if (colon == std::string_view::npos) throw FormatError("manifest: bad task entry '" + std::string(item) + "'");
    plan.tasks.push_back({std::string(item.substr(0, colon)), parse_number<std::uint32_t>(item.substr(colon + 1), "tasks")});
    if (comma == std::string_view::npos) break;
    tasks.remove_prefix(comma + 1);
  }

  static constexpr std::string_view record_keys[] = {"epoch", "batch", "task", "members", "negatives"};
  std::size_t line_no = 1;
  std::string_view rest = body;
  while (!rest.empty()) {
    ++line_no;
    const std::size_t end = rest.find('\n');
    if (end == std::string_view::npos) throw FormatError("manifest: last record lacks a newline");
    const auto rv = split_fields(rest.substr(0, end), record_keys, line_no);
    rest.remove_prefix(end + 1);
    const auto e = parse_number<std::size_t>(rv[0], "epoch");
    const auto b = parse_number<std::size_t>(rv[1], "batch");
    if (e >= plan.epochs.size() || b != plan.epochs[e].size() ||
        (e + 1 < plan.epochs.size() && !plan.epochs[e + 1].empty())) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": records out of order");
    }
    plan.epochs[e].push_back(Batch{std::string(rv[2]), parse_list(rv[3], "members"), parse_list(rv[4], "negatives")});
  }
  try {
    validate_plan(plan);
  } catch (const ValidationError& err) {
    throw FormatError(std::string("manifest: ") + err.what());
  }
  return plan;
}

BatchPlan read_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace batchmine
