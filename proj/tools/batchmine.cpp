// Command-line driver: rank -> graph -> partition -> plan -> negatives ->
// diagnose, individually or chained by `pipeline`.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "batchmine/batch_planner.hpp"
#include "batchmine/binary_io.hpp"
#include "batchmine/corpus.hpp"
#include "batchmine/diagnostics.hpp"
#include "batchmine/error.hpp"
#include "batchmine/negative_sampler.hpp"
#include "batchmine/parallel.hpp"
#include "batchmine/partitioner.hpp"
#include "batchmine/preference_graph.hpp"
#include "batchmine/random.hpp"
#include "batchmine/ranker.hpp"

namespace bm = batchmine;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::uint64_t seed = 0;
  unsigned workers = 0;
  std::string summary;

  std::int64_t p = -1;  // -1: task-category default
  std::uint32_t m = 100;
  std::string similarity = "cosine";
  std::size_t block_rows = 64;

  bool weighted = false;

  std::uint32_t K = 32;
  std::uint32_t coarsen_stop = 0;
  std::uint32_t refine_passes = 8;

  std::uint32_t batch_size = 1024;
  std::uint32_t epochs = 1;
  bool no_shuffle = false;

  std::uint32_t h = 5;

  double tau = bm::kDefaultTemperature;
  std::vector<std::uint32_t> k_list = {1, 2, 4, 8, 16};
  std::string compare = "random";
  std::uint32_t baseline_hn = 0;
  std::size_t top_k = 16;
  std::vector<std::uint32_t> sweep;
  bool diagnose = false;

  std::uint32_t clusters = 64;
  std::uint32_t cluster_size = 8;
  std::uint32_t dim = 32;
  double intra = 0.5;
  double noise = 0.0;
  std::string task_id = "planted";

  std::vector<std::string> corpora;
  std::vector<std::string> slices;
  std::vector<std::string> assignments;
  std::vector<std::string> task_ids;
  std::string graph;
  std::string manifest;
  std::string out;
  std::string out_dir;
  std::string truth;
};

struct Summary {
  json timings = json::object();
  json artifacts = json::object();
  json extra = json::object();

  template <typename F>
  auto timed(const std::string& stage, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&] {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      timings[stage] = timings.value(stage, 0.0) + s;
    };
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      finish();
    } else {
      auto result = body();
      finish();
      return result;
    }
  }
  void artifact(const fs::path& path, std::uint64_t checksum) { artifacts[path.string()] = bm::to_hex(checksum); }
};

// ---------------------------------------------------------------- stages

bm::RankConfig rank_config(const Options& o, bm::TaskCategory category) {
  bm::RankConfig c = bm::default_rank_config(category);
  if (o.p >= 0) c.p = static_cast<std::uint32_t>(o.p);
  c.m = o.m;
  c.similarity = bm::parse_similarity(o.similarity);
  c.block_rows = o.block_rows;
  return c;
}

json rank_provenance(const bm::RankConfig& c, std::uint64_t seed) {
  return {{"stage", "rank"}, {"seed", seed}, {"p", c.p}, {"m", c.m}, {"similarity", bm::to_string(c.similarity)}};
}

bm::PartitionConfig partition_config(const Options& o, const std::string& task) {
  bm::PartitionConfig c;
  c.K = o.K;
  c.seed = bm::derive_seed(o.seed, "partition:" + task);
  c.coarsen_stop = o.coarsen_stop;
  c.refine_passes = o.refine_passes;
  return c;
}

json partition_provenance(const Options& o, const bm::PartitionConfig& c) {
  return {{"stage", "partition"},     {"seed", o.seed},
          {"K", c.K},                 {"coarsen_stop", c.coarsen_stop},
          {"refine_passes", c.refine_passes}, {"batch_size", o.batch_size}};
}

bm::BatchPlanConfig plan_config(const Options& o, const std::string& task) {
  return {o.batch_size, o.K, o.epochs, bm::derive_seed(o.seed, "plan:" + task), !o.no_shuffle};
}

void check_batch_divisible(const Options& o) {
  if (o.K == 0 || o.batch_size % o.K != 0) {
    throw bm::ValidationError("config: batch_size = " + std::to_string(o.batch_size) +
                              " is not a multiple of K = " + std::to_string(o.K));
  }
}

// Cross-field constraints checked before any stage runs.
void validate_pipeline(const Options& o, const std::vector<bm::EmbeddingCorpus>& corpora) {
  check_batch_divisible(o);
  if (o.epochs == 0) throw bm::ValidationError("config: epochs must be >= 1");
  for (const auto& c : corpora) {
    const auto rc = rank_config(o, c.task_category);
    try {
      bm::validate_rank_config(rc, c.n());
      bm::validate_partition_config(partition_config(o, c.task_id), c.n());
      bm::validate_batch_plan_config(plan_config(o, c.task_id), c.n());
    } catch (const bm::ValidationError& e) {
      throw bm::ValidationError("task '" + c.task_id + "': " + e.what());
    }
  }
}

bm::RankSlice run_rank(const Options& o, const bm::EmbeddingCorpus& corpus, const fs::path& out, Summary& sum) {
  const auto rc = rank_config(o, corpus.task_category);
  bm::validate_rank_config(rc, corpus.n());
  auto slice = sum.timed("rank", [&] { return bm::build_rank_slice(corpus, rc); });
  sum.artifact(out, bm::save_rank_slice(slice, out, rank_provenance(rc, o.seed)));
  return slice;
}

bm::PreferenceGraph run_graph(const Options& o, const bm::RankSlice& slice, const fs::path& out, Summary& sum) {
  auto graph = sum.timed("graph", [&] { return bm::build_graph(slice, {o.weighted, 0}); });
  sum.artifact(out, bm::save_graph(graph, out, {{"stage", "graph"}, {"weighted", o.weighted}}));
  return graph;
}

bm::ClusterAssignment run_partition(const Options& o, const bm::PreferenceGraph& graph, const std::string& task,
                                    const fs::path& out, Summary& sum) {
  check_batch_divisible(o);
  const auto pc = partition_config(o, task);
  auto a = sum.timed("partition", [&] { return bm::partition(graph, pc); });
  sum.artifact(out, bm::save_assignment(a, out, partition_provenance(o, pc)));
  sum.extra["cut:" + task] = a.cut;
  sum.extra["retained:" + task] = a.retained;
  return a;
}

bm::BatchPlan run_plan(const Options& o, const std::vector<std::pair<std::string, bm::ClusterAssignment>>& tasks,
                       Summary& sum) {
  return sum.timed("plan", [&] {
    std::vector<bm::BatchPlan> plans;
    for (const auto& [task, a] : tasks) plans.push_back(bm::plan_epochs(a, plan_config(o, task), task));
    if (plans.size() == 1) {
      plans[0].seed = o.seed;
      return plans[0];
    }
    return bm::interleave_plans(plans, o.seed);
  });
}

bm::BatchPlan run_negatives(const Options& o, bm::BatchPlan plan, const std::vector<bm::RankSlice>& slices,
                            Summary& sum) {
  return sum.timed("negatives", [&] {
    std::vector<const bm::RankSlice*> ordered;
    for (const auto& t : plan.tasks) {
      const bm::RankSlice* found = nullptr;
      for (const auto& s : slices) {
        if (s.task_id == t.task_id) found = &s;
      }
      if (found == nullptr) throw bm::ValidationError("negatives: no slice for task '" + t.task_id + "'");
      ordered.push_back(found);
    }
    const auto mined = bm::mine_plan_negatives(plan, ordered, o.h, bm::derive_seed(o.seed, "negatives"));
    sum.extra["negative_shortfalls"] = mined.shortfalls;
    return bm::attach_hard_negatives(std::move(plan), mined.lists, o.h);
  });
}

std::vector<bm::Batch> first_epoch_of(const bm::BatchPlan& plan, const std::string& task) {
  if (plan.epochs.empty()) throw bm::ValidationError("diagnose: manifest has no epochs");
  std::vector<bm::Batch> out;
  for (const auto& b : plan.epochs[0]) {
    if (b.task_id == task) out.push_back(b);
  }
  if (out.empty()) throw bm::ValidationError("diagnose: manifest has no batches for task '" + task + "'");
  return out;
}

void run_diagnose(const Options& o, const bm::EmbeddingCorpus& corpus, const bm::RankSlice& slice,
                  const bm::BatchPlan& plan, const bm::PreferenceGraph* graph, const bm::ClusterAssignment* assignment,
                  const fs::path& dir, Summary& sum) {
  sum.timed("diagnose", [&] {
    const std::string& task = corpus.task_id;
    const auto mined = first_epoch_of(plan, task);
    std::vector<bm::Batch> other = mined;
    if (o.compare == "random") {
      bm::BatchPlanConfig rc{plan.batch_size, plan.K, 1, bm::derive_seed(o.seed, "random-plan:" + task), false};
      other = bm::plan_random_batches(static_cast<std::uint32_t>(corpus.n()), rc, task).epochs[0];
    } else if (o.compare != "none") {
      throw bm::ValidationError("diagnose: --compare must be 'random' or 'none'");
    }
    bm::CompareOptions co;
    co.tau = o.tau;
    co.Ks = o.k_list;
    co.top_k = o.top_k;
    co.baseline_hn = o.baseline_hn;
    co.seed = bm::derive_seed(o.seed, "diagnose:" + task);
    const auto report = bm::compare_plans(corpus, slice, mined, other, co, graph);
    fs::create_directories(dir);
    const fs::path base = dir / task;
    bm::write_comparison_text(report, base.string() + ".report.txt");
    bm::write_comparison_jsonl(report, base.string() + ".report.jsonl");

    const auto peak = bm::peakedness(corpus, o.tau, std::min(o.top_k, corpus.n()), o.k_list);
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < peak.profile.size(); ++k) rows.push_back({static_cast<double>(k + 1), peak.profile[k]});
    bm::write_plot_data(base.string() + ".peakedness.tsv", "rank mean_similarity", rows);

    if (assignment != nullptr && !o.sweep.empty()) {
      const auto points = bm::gap_sweep(corpus, *assignment, o.sweep, o.tau, bm::derive_seed(o.seed, "sweep:" + task));
      std::vector<std::vector<double>> mined_rows, random_rows;
      for (const auto& pt : points) {
        mined_rows.push_back({static_cast<double>(pt.batch_size), pt.gap_mined});
        random_rows.push_back({static_cast<double>(pt.batch_size), pt.gap_random});
      }
      bm::write_plot_data(base.string() + ".sweep_mined.tsv", "batch_size gap", mined_rows);
      bm::write_plot_data(base.string() + ".sweep_random.tsv", "batch_size gap", random_rows);
    }
    sum.extra["gap_difference:" + task] = report.gap_difference;
    sum.extra["colocation_difference:" + task] = report.colocation_difference;
  });
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

std::vector<std::string> task_names(const Options& o, const std::vector<std::string>& files) {
  if (o.task_ids.empty()) {
    std::vector<std::string> names;
    for (const auto& f : files) names.push_back(stem_of(f));
    return names;
  }
  if (o.task_ids.size() != files.size()) throw bm::ValidationError("config: one --task-id per input file is required");
  return o.task_ids;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw bm::ValidationError(std::string("missing required option --") + flag);
}

// ---------------------------------------------------------------- commands

void cmd_synth(const Options& o, Summary& sum) {
  require(o.out, "out");
  auto planted = sum.timed("synth", [&] {
    return bm::make_planted_corpus(o.clusters, o.cluster_size, o.dim, o.intra, o.noise, o.seed);
  });
  planted.corpus.task_id = o.task_id;
  bm::validate_corpus(planted.corpus);
  sum.artifact(o.out, bm::save_corpus(planted.corpus, o.out));
  if (!o.truth.empty()) {
    std::ofstream t(o.truth, std::ios::trunc);
    if (!t) throw bm::IoError("cannot open '" + o.truth + "' for writing");
    for (std::size_t i = 0; i < planted.cluster_of.size(); ++i) t << i << '\t' << planted.cluster_of[i] << '\n';
    if (!t.flush()) throw bm::IoError("failed writing '" + o.truth + "'");
  }
}

void cmd_rank(const Options& o, Summary& sum) {
  if (o.corpora.size() != 1) throw bm::ValidationError("rank: exactly one --corpus is required");
  require(o.out, "out");
  const auto corpus = bm::load_corpus(o.corpora[0]);
  run_rank(o, corpus, o.out, sum);
}

void cmd_graph(const Options& o, Summary& sum) {
  if (o.slices.size() != 1) throw bm::ValidationError("graph: exactly one --slice is required");
  require(o.out, "out");
  run_graph(o, bm::load_rank_slice(o.slices[0]), o.out, sum);
}

void cmd_partition(const Options& o, Summary& sum) {
  require(o.graph, "graph");
  require(o.out, "out");
  check_batch_divisible(o);
  const std::string task = o.task_ids.empty() ? stem_of(o.graph) : o.task_ids[0];
  run_partition(o, bm::load_graph(o.graph), task, o.out, sum);
}

void cmd_plan(const Options& o, Summary& sum) {
  if (o.assignments.empty()) throw bm::ValidationError("plan: at least one --assignment is required");
  require(o.out, "out");
  check_batch_divisible(o);
  const auto names = task_names(o, o.assignments);
  std::vector<std::pair<std::string, bm::ClusterAssignment>> tasks;
  for (std::size_t t = 0; t < names.size(); ++t) tasks.emplace_back(names[t], bm::load_assignment(o.assignments[t]));
  const auto plan = run_plan(o, tasks, sum);
  sum.artifact(o.out, bm::emit_manifest(plan, o.out));
}

void cmd_negatives(const Options& o, Summary& sum) {
  require(o.manifest, "manifest");
  require(o.out, "out");
  if (o.slices.empty()) throw bm::ValidationError("negatives: at least one --slice is required");
  std::vector<bm::RankSlice> slices;
  for (const auto& s : o.slices) slices.push_back(bm::load_rank_slice(s));
  auto plan = run_negatives(o, bm::read_manifest(o.manifest), slices, sum);
  sum.artifact(o.out, bm::emit_manifest(plan, o.out));
}

void cmd_diagnose(const Options& o, Summary& sum) {
  if (o.corpora.size() != 1 || o.slices.size() != 1) {
    throw bm::ValidationError("diagnose: exactly one --corpus and one --slice are required");
  }
  require(o.manifest, "manifest");
  require(o.out_dir, "out-dir");
  const auto corpus = bm::load_corpus(o.corpora[0]);
  const auto slice = bm::load_rank_slice(o.slices[0]);
  const auto plan = bm::read_manifest(o.manifest);
  std::optional<bm::PreferenceGraph> graph;
  if (!o.graph.empty()) graph = bm::load_graph(o.graph);
  std::optional<bm::ClusterAssignment> assignment;
  if (!o.assignments.empty()) assignment = bm::load_assignment(o.assignments[0]);
  run_diagnose(o, corpus, slice, plan, graph ? &*graph : nullptr, assignment ? &*assignment : nullptr, o.out_dir,
               sum);
}

void cmd_pipeline(const Options& o, Summary& sum) {
  if (o.corpora.empty()) throw bm::ValidationError("pipeline: at least one --corpus is required");
  require(o.out_dir, "out-dir");
  std::vector<bm::EmbeddingCorpus> corpora;
  for (const auto& path : o.corpora) {
    std::uint64_t checksum = 0;
    corpora.push_back(bm::load_corpus(path, checksum));
    sum.artifact(path, checksum);
  }
  for (std::size_t a = 0; a < corpora.size(); ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      if (corpora[a].task_id == corpora[b].task_id) {
        throw bm::ValidationError("pipeline: duplicate task id '" + corpora[a].task_id + "'");
      }
    }
  }
  validate_pipeline(o, corpora);
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);

  std::vector<bm::RankSlice> slices;
  std::vector<bm::PreferenceGraph> graphs;
  std::vector<std::pair<std::string, bm::ClusterAssignment>> assignments;
  for (const auto& corpus : corpora) {
    const std::string& task = corpus.task_id;
    slices.push_back(run_rank(o, corpus, dir / (task + ".slice"), sum));
    graphs.push_back(run_graph(o, slices.back(), dir / (task + ".graph"), sum));
    assignments.emplace_back(task, run_partition(o, graphs.back(), task, dir / (task + ".assign"), sum));
  }
  const fs::path plan_path = dir / "plan.manifest";
  auto plan = run_plan(o, assignments, sum);
  sum.artifact(plan_path, bm::emit_manifest(plan, plan_path));
  if (o.h > 0) {
    plan = run_negatives(o, std::move(plan), slices, sum);
    const fs::path path = dir / "manifest.txt";
    sum.artifact(path, bm::emit_manifest(plan, path));
  } else {
    const fs::path path = dir / "manifest.txt";
    sum.artifact(path, bm::emit_manifest(plan, path));
  }
  if (o.diagnose) {
    for (std::size_t t = 0; t < corpora.size(); ++t) {
      run_diagnose(o, corpora[t], slices[t], plan, &graphs[t], &assignments[t].second, dir / "diagnostics", sum);
    }
  }
}

// ---------------------------------------------------------------- wiring

// Config file lines are `key=value` (long option names, '#' comments). A key
// that also appears on the command line is dropped so the command line wins.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw bm::IoError("cannot open config file '" + path + "'");
  std::vector<std::string> injected;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw bm::ValidationError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string flag = "--" + key;
    bool on_command_line = false;
    for (const auto& a : args) on_command_line = on_command_line || a == flag || a.rfind(flag + "=", 0) == 0;
    if (!on_command_line) injected.push_back(flag + "=" + value);
  }
  std::vector<std::string> merged;
  merged.push_back(args[0]);
  merged.insert(merged.end(), injected.begin(), injected.end());
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

void add_common(CLI::App* sub, Options& o, std::string& config) {
  sub->add_option("--config", config, "key=value config file");
  sub->add_option("--seed", o.seed, "global seed");
  sub->add_option("--workers", o.workers, "worker threads (default: BATCHMINE_WORKERS or all cores)");
  sub->add_option("--summary", o.summary, "run summary path");
}

void add_rank(CLI::App* sub, Options& o) {
  sub->add_option("--p", o.p, "dropped top ranks (default by task category)");
  sub->add_option("--m", o.m, "kept ranks");
  sub->add_option("--similarity", o.similarity, "cosine or dot");
  sub->add_option("--block-rows", o.block_rows, "queries per scoring block");
}

void add_partition(CLI::App* sub, Options& o) {
  sub->add_option("--K", o.K, "cluster size");
  sub->add_option("--coarsen-stop", o.coarsen_stop, "coarsest vertex count (0 = auto)");
  sub->add_option("--refine-passes", o.refine_passes, "refinement passes per level");
}

void add_plan(CLI::App* sub, Options& o) {
  sub->add_option("--batch-size", o.batch_size, "examples per batch");
  sub->add_option("--epochs", o.epochs, "epochs to plan");
  sub->add_flag("--no-shuffle", o.no_shuffle, "keep cluster order inside batches");
}

void add_diagnose(CLI::App* sub, Options& o) {
  sub->add_option("--tau", o.tau, "temperature");
  sub->add_option("--k-list", o.k_list, "K values for the bound")->delimiter(',');
  sub->add_option("--compare", o.compare, "random or none");
  sub->add_option("--baseline-hn", o.baseline_hn, "per-query negatives for the comparison plan");
  sub->add_option("--top-k", o.top_k, "profile length");
  sub->add_option("--sweep", o.sweep, "batch sizes for the gap sweep")->delimiter(',');
}

// Effective option values: command-line or config value, else the default.
json config_echo(const CLI::App& sub) {
  json echo = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "help-all") continue;
    if (opt->count() == 0) {
      echo[name] = opt->get_default_str();
      continue;
    }
    const auto& values = opt->results();
    if (opt->get_expected_max() > 1 || values.size() > 1) echo[name] = values;
    else echo[name] = values.empty() ? std::string() : values.front();
  }
  return echo;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  Options o;
  std::string config;
  Summary sum;
  std::string command;
  std::string default_summary;
  int status = 0;
  std::string error;

  CLI::App app{"batchmine: mine contrastive training batches from teacher embeddings"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_help_flag("--help", "print this help and exit");  // keeps -h free for --h
  app.set_help_all_flag("--help-all");

  auto* synth = app.add_subcommand("synth", "write a planted-cluster corpus");
  add_common(synth, o, config);
  synth->add_option("--clusters", o.clusters);
  synth->add_option("--cluster-size", o.cluster_size);
  synth->add_option("--dim", o.dim);
  synth->add_option("--intra", o.intra, "expected same-cluster similarity");
  synth->add_option("--noise", o.noise);
  synth->add_option("--task-id", o.task_id);
  synth->add_option("--out", o.out);
  synth->add_option("--truth", o.truth, "TSV of ground-truth cluster ids");

  auto* rank = app.add_subcommand("rank", "rank candidates and write the slice");
  add_common(rank, o, config);
  add_rank(rank, o);
  rank->add_option("--corpus", o.corpora);
  rank->add_option("--out", o.out);

  auto* graph = app.add_subcommand("graph", "mutual-preference graph from a slice");
  add_common(graph, o, config);
  graph->add_flag("--weighted", o.weighted, "rank-sum edge weights");
  graph->add_option("--slice", o.slices);
  graph->add_option("--out", o.out);

  auto* part = app.add_subcommand("partition", "balanced K-way partition of a graph");
  add_common(part, o, config);
  add_partition(part, o);
  part->add_option("--batch-size", o.batch_size, "checked for divisibility by K");
  part->add_option("--graph", o.graph);
  part->add_option("--task-id", o.task_ids);
  part->add_option("--out", o.out);

  auto* plan = app.add_subcommand("plan", "batch manifest from cluster assignments");
  add_common(plan, o, config);
  add_plan(plan, o);
  plan->add_option("--K", o.K, "cluster size");
  plan->add_option("--assignment", o.assignments);
  plan->add_option("--task-id", o.task_ids);
  plan->add_option("--out", o.out);

  auto* neg = app.add_subcommand("negatives", "attach unified hard negatives to a manifest");
  add_common(neg, o, config);
  neg->add_option("--h", o.h, "negatives per batch");
  neg->add_option("--manifest", o.manifest);
  neg->add_option("--slice", o.slices);
  neg->add_option("--out", o.out);

  auto* diag = app.add_subcommand("diagnose", "loss gap, bound and batch-quality reports");
  add_common(diag, o, config);
  add_diagnose(diag, o);
  diag->add_option("--corpus", o.corpora);
  diag->add_option("--slice", o.slices);
  diag->add_option("--manifest", o.manifest);
  diag->add_option("--graph", o.graph);
  diag->add_option("--assignment", o.assignments);
  diag->add_option("--out-dir", o.out_dir);

  auto* pipe = app.add_subcommand("pipeline", "run every stage");
  add_common(pipe, o, config);
  add_rank(pipe, o);
  add_partition(pipe, o);
  add_plan(pipe, o);
  add_diagnose(pipe, o);
  pipe->add_flag("--weighted", o.weighted, "rank-sum edge weights");
  pipe->add_option("--h", o.h, "negatives per batch");
  pipe->add_flag("--diagnose", o.diagnose, "write diagnostics reports");
  pipe->add_option("--corpus", o.corpora);
  pipe->add_option("--out-dir", o.out_dir);

  try {
    if (args.size() >= 2 && args[1].rfind("-", 0) != 0) {
      std::vector<std::string> rest(args.begin() + 1, args.end());
      rest = merge_config(rest);
      args.resize(1);
      args.insert(args.end(), rest.begin(), rest.end());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const bm::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const bm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  CLI::App* chosen = app.get_subcommands().front();
  command = chosen->get_name();
  if (o.workers > 0) setenv("BATCHMINE_WORKERS", std::to_string(o.workers).c_str(), 1);
  if (!o.out_dir.empty()) default_summary = (fs::path(o.out_dir) / "run_summary.json").string();
  else if (!o.out.empty()) default_summary = o.out + ".summary.json";
  else default_summary = "run_summary.json";

  try {
    if (command == "synth") cmd_synth(o, sum);
    else if (command == "rank") cmd_rank(o, sum);
    else if (command == "graph") cmd_graph(o, sum);
    else if (command == "partition") cmd_partition(o, sum);
    else if (command == "plan") cmd_plan(o, sum);
    else if (command == "negatives") cmd_negatives(o, sum);
    else if (command == "diagnose") cmd_diagnose(o, sum);
    else if (command == "pipeline") cmd_pipeline(o, sum);
  } catch (const bm::IoError& e) {
    status = 2;
    error = e.what();
  } catch (const bm::Error& e) {
    status = 1;
    error = e.what();
  } catch (const fs::filesystem_error& e) {
    status = 2;
    error = e.what();
  }
  if (status != 0) std::cerr << "error: " << error << '\n';

  json record;
  record["command"] = command;
  record["status"] = status;
  if (!error.empty()) record["error"] = error;
  record["seed"] = o.seed;
  record["workers"] = bm::default_workers();
  record["timings_s"] = sum.timings;
  record["artifacts"] = sum.artifacts;
  record["results"] = sum.extra;
  record["config"] = config_echo(*chosen);
  const std::string summary_path = o.summary.empty() ? default_summary : o.summary;
  try {
    if (const auto parent = fs::path(summary_path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(summary_path, std::ios::trunc);
    out << record.dump(2) << '\n';
    if (!out.flush()) throw bm::IoError("failed writing '" + summary_path + "'");
  } catch (const std::exception& e) {
    std::cerr << "error: cannot write run summary: " << e.what() << '\n';
    if (status == 0) status = 2;
  }
  return status;
}
