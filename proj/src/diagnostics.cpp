#include "batchmine/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "batchmine/error.hpp"
#include "batchmine/parallel.hpp"
#include "batchmine/random.hpp"

namespace batchmine {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("temperature must be positive and finite");
}

// batch id per example; throws unless the epoch covers [0, n) exactly once.
std::vector<std::uint32_t> batch_index(std::size_t n, std::span<const Batch> epoch) {
  std::vector<std::uint32_t> of(n, UINT32_MAX);
  for (std::uint32_t b = 0; b < epoch.size(); ++b) {
    for (std::uint32_t i : epoch[b].members) {
      if (i >= n) throw ValidationError("epoch coverage: index " + std::to_string(i) + " out of range");
      if (of[i] != UINT32_MAX) {
        throw ValidationError("epoch coverage: index " + std::to_string(i) + " appears in two batches");
      }
      of[i] = b;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (of[i] == UINT32_MAX) throw ValidationError("epoch coverage: index " + std::to_string(i) + " missing");
  }
  return of;
}

// Exponentiated logits relative to their maximum, sorted descending.
struct Terms {
  double shift = 0.0;
  std::vector<double> sorted;
  double total = 0.0;

  void assign(std::span<const double> logits) {
    shift = *std::max_element(logits.begin(), logits.end());
    sorted.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) sorted[j] = std::exp(logits[j] - shift);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    total = pairwise_sum(sorted);
  }
  double head(std::size_t K) const { return pairwise_sum(std::span(sorted).first(K)); }
  double tail(std::size_t K) const { return pairwise_sum(std::span(sorted).subspan(K)); }
  double log_total() const { return std::log(total) + shift; }
  double log_head(std::size_t K) const { return std::log(head(K)) + shift; }
};

struct EpochView {
  std::vector<std::uint32_t> batch_of;
  std::span<const Batch> epoch;
  const std::vector<std::vector<std::uint32_t>>* extras = nullptr;  // per query

  std::size_t smallest_batch() const {
    std::size_t s = std::numeric_limits<std::size_t>::max();
    for (const auto& b : epoch) s = std::min(s, b.members.size());
    return s;
  }
  // Denominator ids for query i: its batch, the batch negatives, then extras.
  void denominator(std::uint32_t i, std::vector<std::uint32_t>& out) const {
    const Batch& b = epoch[batch_of[i]];
    out.assign(b.members.begin(), b.members.end());
    out.insert(out.end(), b.hard_negatives.begin(), b.hard_negatives.end());
    if (extras != nullptr) out.insert(out.end(), (*extras)[i].begin(), (*extras)[i].end());
  }
};

struct QueryOut {
  double global_term = 0.0;
  double batch_term = 0.0;
  double gap_term = 0.0;
  std::vector<double> bound_terms;  // per K
  std::vector<double> tail_to_head;  // per K, global
  double hl[6] = {};                 // decomposition for the first K
  std::vector<double> profile;       // sorted raw similarities (global or batch)
  double colocation = 0.0;
};

struct AnalyzeRequest {
  double tau = kDefaultTemperature;
  std::span<const std::uint32_t> Ks;
  const EpochView* view = nullptr;
  std::size_t global_profile = 0;  // sorted global similarity prefix length
  std::size_t batch_profile = 0;
  const RankSlice* slice = nullptr;  // enables co-location
};

std::vector<QueryOut> analyze(const SimilarityRows& rows, const AnalyzeRequest& req) {
  const std::size_t n = rows.n();
  std::vector<QueryOut> out(n);
  const double N = static_cast<double>(n);
  const std::size_t tasks = (n + 15) / 16;
  parallel_for(tasks, default_workers(), [&](std::size_t t) {
    std::vector<double> sims(n), logits(n), batch_logits, batch_sims;
    std::vector<std::uint32_t> denom;
    Terms global, batch;
    for (std::size_t i = t * 16; i < std::min(n, t * 16 + 16); ++i) {
      QueryOut& q = out[i];
      rows.row(i, sims);
      for (std::size_t j = 0; j < n; ++j) logits[j] = sims[j] / req.tau;
      global.assign(logits);
      q.global_term = global.log_total() - logits[i];
      for (std::uint32_t K : req.Ks) {
        q.tail_to_head.push_back(global.tail(K) / global.head(K));
      }
      if (req.global_profile > 0) {
        std::vector<double> sorted = sims;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        q.profile.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(req.global_profile));
      }
      if (req.view == nullptr) continue;

      req.view->denominator(static_cast<std::uint32_t>(i), denom);
      batch_logits.resize(denom.size());
      for (std::size_t k = 0; k < denom.size(); ++k) batch_logits[k] = logits[denom[k]];
      batch.assign(batch_logits);
      q.batch_term = batch.log_total() - logits[i];
      q.gap_term = global.log_total() - batch.log_total();
      for (std::uint32_t K : req.Ks) {
        q.bound_terms.push_back(std::log(N / K) + global.log_head(K) - batch.log_head(K));
      }
      if (!req.Ks.empty()) {
        const std::uint32_t K = req.Ks[0];
        q.hl[0] = global.shift;
        q.hl[1] = global.head(K);
        q.hl[2] = global.tail(K);
        q.hl[3] = batch.shift;
        q.hl[4] = batch.head(K);
        q.hl[5] = batch.tail(K);
      }
      if (req.batch_profile > 0) {
        batch_sims.resize(denom.size());
        for (std::size_t k = 0; k < denom.size(); ++k) batch_sims[k] = sims[denom[k]];
        std::partial_sort(batch_sims.begin(), batch_sims.begin() + static_cast<std::ptrdiff_t>(req.batch_profile),
                          batch_sims.end(), std::greater<>());
        q.profile.assign(batch_sims.begin(), batch_sims.begin() + static_cast<std::ptrdiff_t>(req.batch_profile));
      }
      if (req.slice != nullptr) {
        std::size_t hits = 0;
        for (std::uint32_t j : req.slice->row(i)) hits += req.view->batch_of[j] == req.view->batch_of[i];
        q.colocation = static_cast<double>(hits);
      }
    }
  });
  return out;
}

template <typename F>
double sum_over(const std::vector<QueryOut>& qs, F field) {
  std::vector<double> v(qs.size());
  for (std::size_t i = 0; i < qs.size(); ++i) v[i] = field(qs[i]);
  return pairwise_sum(v);
}

std::vector<double> mean_profile(const std::vector<QueryOut>& qs, std::size_t length) {
  std::vector<double> profile(length);
  for (std::size_t k = 0; k < length; ++k) {
    profile[k] = sum_over(qs, [k](const QueryOut& q) { return q.profile[k]; }) / static_cast<double>(qs.size());
  }
  return profile;
}

void check_Ks(std::span<const std::uint32_t> Ks, std::size_t limit) {
  for (std::uint32_t K : Ks) {
    if (K < 1 || K > limit) {
      throw ValidationError("K = " + std::to_string(K) + " outside [1, " + std::to_string(limit) + "]");
    }
  }
}

LossReport report_from(const std::vector<QueryOut>& qs, double tau, std::span<const std::uint32_t> Ks) {
  LossReport r;
  r.tau = tau;
  r.global_loss = sum_over(qs, [](const QueryOut& q) { return q.global_term; });
  r.batch_loss = sum_over(qs, [](const QueryOut& q) { return q.batch_term; });
  r.gap = sum_over(qs, [](const QueryOut& q) { return q.gap_term; });
  r.Ks.assign(Ks.begin(), Ks.end());
  for (std::size_t k = 0; k < Ks.size(); ++k) {
    r.bound_rhs.push_back(sum_over(qs, [k](const QueryOut& q) { return q.bound_terms[k]; }));
  }
  return r;
}

BatchQualityReport quality_from(const std::vector<QueryOut>& qs, const EpochView& view, std::size_t profile_length,
                                const PreferenceGraph* graph) {
  BatchQualityReport r;
  r.colocation = sum_over(qs, [](const QueryOut& q) { return q.colocation; }) / static_cast<double>(qs.size());
  r.batch_profile = mean_profile(qs, profile_length);
  if (graph != nullptr && graph->edge_count() > 0) {
    std::size_t inside = 0;
    for (std::uint32_t v = 0; v < graph->n; ++v) {
      for (std::uint32_t u : graph->adj(v)) inside += u > v && view.batch_of[u] == view.batch_of[v];
    }
    r.retained_edge_fraction = static_cast<double>(inside) / static_cast<double>(graph->edge_count());
  }
  return r;
}

nlohmann::json to_json(const LossReport& r) {
  return {{"tau", r.tau},           {"global_loss", r.global_loss}, {"batch_loss", r.batch_loss},
          {"gap", r.gap},           {"K", r.Ks},                    {"bound_rhs", r.bound_rhs}};
}

nlohmann::json to_json(const BatchQualityReport& r) {
  return {{"colocation", r.colocation},
          {"retained_edge_fraction", r.retained_edge_fraction},
          {"batch_profile", r.batch_profile}};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<double> unit(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

SimilarityRows::SimilarityRows(const EmbeddingCorpus& corpus) : n_(corpus.n()), d_(corpus.d()) {
  auto load = [&](const Matrix& m, std::vector<double>& out) {
    out.resize(n_ * d_);
    for (std::size_t i = 0; i < n_; ++i) {
      double norm = 0.0;
      for (std::size_t k = 0; k < d_; ++k) norm += static_cast<double>(m(i, k)) * m(i, k);
      norm = std::sqrt(norm);
      if (norm == 0.0) throw ValidationError("zero vector at row " + std::to_string(i));
      for (std::size_t k = 0; k < d_; ++k) out[i * d_ + k] = m(i, k) / norm;
    }
  };
  load(corpus.queries, queries_);
  load(corpus.positives, positives_);
}

double SimilarityRows::value(std::size_t i, std::size_t j) const {
  double s = 0.0;
  for (std::size_t k = 0; k < d_; ++k) s += queries_[i * d_ + k] * positives_[j * d_ + k];
  return s;
}

void SimilarityRows::row(std::size_t i, std::span<double> out) const {
  for (std::size_t j = 0; j < n_; ++j) out[j] = value(i, j);
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

LossValue global_loss(const EmbeddingCorpus& corpus, double tau) {
  check_tau(tau);
  if (corpus.n() < 2) throw ValidationError("global_loss needs n >= 2");
  AnalyzeRequest req;
  req.tau = tau;
  const auto qs = analyze(SimilarityRows(corpus), req);
  const double total = sum_over(qs, [](const QueryOut& q) { return q.global_term; });
  return {total, total / static_cast<double>(qs.size())};
}

LossValue batch_loss(const EmbeddingCorpus& corpus, std::span<const Batch> epoch, double tau) {
  check_tau(tau);
  EpochView view{batch_index(corpus.n(), epoch), epoch};
  AnalyzeRequest req;
  req.tau = tau;
  req.view = &view;
  const auto qs = analyze(SimilarityRows(corpus), req);
  const double total = sum_over(qs, [](const QueryOut& q) { return q.batch_term; });
  return {total, total / static_cast<double>(qs.size())};
}

BoundResult bound_rhs(const EmbeddingCorpus& corpus, std::span<const Batch> epoch, std::uint32_t K, double tau) {
  check_tau(tau);
  EpochView view{batch_index(corpus.n(), epoch), epoch};
  const std::uint32_t Ks[] = {K};
  check_Ks(Ks, view.smallest_batch());
  AnalyzeRequest req;
  req.tau = tau;
  req.view = &view;
  req.Ks = Ks;
  const auto qs = analyze(SimilarityRows(corpus), req);
  BoundResult r;
  r.value = sum_over(qs, [](const QueryOut& q) { return q.bound_terms[0]; });
  HLDecomposition& hl = r.decomposition;
  hl.K = K;
  for (const QueryOut& q : qs) {
    hl.global_shift.push_back(q.hl[0]);
    hl.global_H.push_back(q.hl[1]);
    hl.global_L.push_back(q.hl[2]);
    hl.batch_shift.push_back(q.hl[3]);
    hl.batch_H.push_back(q.hl[4]);
    hl.batch_L.push_back(q.hl[5]);
  }
  return r;
}

LossReport loss_report(const EmbeddingCorpus& corpus, std::span<const Batch> epoch, double tau,
                       std::span<const std::uint32_t> Ks) {
  check_tau(tau);
  EpochView view{batch_index(corpus.n(), epoch), epoch};
  check_Ks(Ks, view.smallest_batch());
  AnalyzeRequest req;
  req.tau = tau;
  req.view = &view;
  req.Ks = Ks;
  return report_from(analyze(SimilarityRows(corpus), req), tau, Ks);
}

PeakednessReport peakedness(const EmbeddingCorpus& corpus, double tau, std::size_t top_k,
                            std::span<const std::uint32_t> Ks) {
  check_tau(tau);
  if (top_k > corpus.n()) throw ValidationError("peakedness: top_k exceeds n");
  check_Ks(Ks, corpus.n() - 1);
  AnalyzeRequest req;
  req.tau = tau;
  req.Ks = Ks;
  req.global_profile = top_k;
  const auto qs = analyze(SimilarityRows(corpus), req);
  PeakednessReport r;
  r.profile = mean_profile(qs, top_k);
  r.Ks.assign(Ks.begin(), Ks.end());
  for (std::size_t k = 0; k < Ks.size(); ++k) {
    r.tail_to_head.push_back(sum_over(qs, [k](const QueryOut& q) { return q.tail_to_head[k]; }) /
                             static_cast<double>(qs.size()));
  }
  return r;
}

PlanComparison compare_plans(const EmbeddingCorpus& corpus, const RankSlice& slice, std::span<const Batch> plan_a,
                             std::span<const Batch> plan_b, const CompareOptions& options,
                             const PreferenceGraph* graph) {
  check_tau(options.tau);
  if (slice.n != corpus.n()) throw ValidationError("compare_plans: slice and corpus sizes differ");
  const SimilarityRows rows(corpus);
  EpochView view_a{batch_index(corpus.n(), plan_a), plan_a};
  EpochView view_b{batch_index(corpus.n(), plan_b), plan_b};

  std::vector<std::vector<std::uint32_t>> extras;
  if (options.baseline_hn > 0) {
    Rng rng(derive_seed(options.seed, "baseline-hn"));
    extras.resize(corpus.n());
    for (std::uint32_t i = 0; i < corpus.n(); ++i) {
      const Batch& b = plan_b[view_b.batch_of[i]];
      std::vector<std::uint32_t> pool;
      for (std::uint32_t j : slice.row(i)) {
        if (view_b.batch_of[j] != view_b.batch_of[i] &&
            std::find(b.hard_negatives.begin(), b.hard_negatives.end(), j) == b.hard_negatives.end()) {
          pool.push_back(j);
        }
      }
      const std::size_t take = std::min<std::size_t>(options.baseline_hn, pool.size());
      for (std::size_t k = 0; k < take; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng)]);
      }
      extras[i].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    }
    view_b.extras = &extras;
  }

  const std::size_t limit = std::min(view_a.smallest_batch(), view_b.smallest_batch());
  check_Ks(options.Ks, limit);
  const std::size_t profile = std::min(options.top_k, limit);

  auto run = [&](const EpochView& view, LossReport& loss, BatchQualityReport& quality) {
    AnalyzeRequest req;
    req.tau = options.tau;
    req.Ks = options.Ks;
    req.view = &view;
    req.batch_profile = profile;
    req.slice = &slice;
    const auto qs = analyze(rows, req);
    loss = report_from(qs, options.tau, options.Ks);
    quality = quality_from(qs, view, profile, graph);
  };
  PlanComparison r;
  run(view_a, r.a, r.quality_a);
  run(view_b, r.b, r.quality_b);
  r.gap_difference = r.a.gap - r.b.gap;
  r.colocation_difference = r.quality_a.colocation - r.quality_b.colocation;
  r.retained_difference = r.quality_a.retained_edge_fraction - r.quality_b.retained_edge_fraction;
  for (std::size_t k = 0; k < options.Ks.size(); ++k) r.bound_difference.push_back(r.a.bound_rhs[k] - r.b.bound_rhs[k]);
  return r;
}

std::vector<SweepPoint> gap_sweep(const EmbeddingCorpus& corpus, const ClusterAssignment& assignment,
                                  std::span<const std::uint32_t> batch_sizes, double tau, std::uint64_t seed) {
  std::vector<SweepPoint> points;
  for (std::uint32_t bs : batch_sizes) {
    BatchPlanConfig config{bs, assignment.K, 1, seed, false};
    const BatchPlan mined = plan_epochs(assignment, config, corpus.task_id);
    const BatchPlan random = plan_random_batches(assignment.n, config, corpus.task_id);
    points.push_back({bs, loss_report(corpus, mined.epochs[0], tau, {}).gap,
                      loss_report(corpus, random.epochs[0], tau, {}).gap});
  }
  return points;
}

void write_comparison_text(const PlanComparison& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  auto loss = [&](const char* tag, const LossReport& l, const BatchQualityReport& q) {
    out << tag << ".tau=" << l.tau << '\n'
        << tag << ".global_loss=" << l.global_loss << '\n'
        << tag << ".batch_loss=" << l.batch_loss << '\n'
        << tag << ".gap=" << l.gap << '\n';
    for (std::size_t k = 0; k < l.Ks.size(); ++k) out << tag << ".bound_rhs.K" << l.Ks[k] << '=' << l.bound_rhs[k] << '\n';
    out << tag << ".colocation=" << q.colocation << '\n'
        << tag << ".retained_edge_fraction=" << q.retained_edge_fraction << '\n';
  };
  loss("a", r.a, r.quality_a);
  loss("b", r.b, r.quality_b);
  out << "diff.gap=" << r.gap_difference << '\n'
      << "diff.colocation=" << r.colocation_difference << '\n'
      << "diff.retained_edge_fraction=" << r.retained_difference << '\n';
  for (std::size_t k = 0; k < r.bound_difference.size(); ++k) {
    out << "diff.bound_rhs.K" << r.a.Ks[k] << '=' << r.bound_difference[k] << '\n';
  }
  finish(out, path);
}

void write_comparison_jsonl(const PlanComparison& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  nlohmann::json a = to_json(r.a), b = to_json(r.b);
  a["plan"] = "a";
  a["quality"] = to_json(r.quality_a);
  b["plan"] = "b";
  b["quality"] = to_json(r.quality_b);
  const nlohmann::json diff = {{"plan", "a-b"},
                               {"gap", r.gap_difference},
                               {"colocation", r.colocation_difference},
                               {"retained_edge_fraction", r.retained_difference},
                               {"bound_rhs", r.bound_difference}};
  out << a.dump() << '\n' << b.dump() << '\n' << diff.dump() << '\n';
  finish(out, path);
}

void write_plot_data(const std::filesystem::path& path, const std::string& header,
                     std::span<const std::vector<double>> rows) {
  auto out = open_out(path);
  out << "# " << header << '\n';
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? " " : "") << row[k];
    out << '\n';
  }
  finish(out, path);
}

PlantedCorpus make_planted_corpus(std::uint32_t clusters, std::uint32_t size, std::uint32_t d,
                                  double intra_similarity, double noise, std::uint64_t seed) {
  if (clusters < 1 || size < 1 || d < 1 || static_cast<std::uint64_t>(clusters) * size < 2) {
    throw ValidationError("planted corpus: clusters, size and d must be positive with at least 2 examples");
  }
  if (!(intra_similarity > 0.0 && intra_similarity <= 1.0)) {
    throw ValidationError("planted corpus: intra_similarity must lie in (0, 1]");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ValidationError("planted corpus: noise must be >= 0");

  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = static_cast<std::size_t>(clusters) * size;
  const bool blocks = d >= clusters;
  const double a = std::sqrt(intra_similarity), b = std::sqrt(1.0 - intra_similarity);

  std::vector<std::vector<double>> centers(clusters, std::vector<double>(d, 0.0));
  for (std::uint32_t c = 0; c < clusters; ++c) {
    if (blocks) {
      centers[c][static_cast<std::size_t>(c) * d / clusters] = 1.0;
    } else {
      for (double& x : centers[c]) x = gauss(rng);
      centers[c] = unit(centers[c]);
    }
  }

  std::vector<std::uint32_t> slot(n);
  for (std::uint32_t i = 0; i < n; ++i) slot[i] = i;
  shuffle_span(std::span(slot), rng);

  PlantedCorpus out;
  out.cluster_of.resize(n);
  EmbeddingCorpus& corpus = out.corpus;
  corpus.task_id = "planted";
  corpus.task_category = TaskCategory::retrieval;
  corpus.queries = Matrix(n, d);
  corpus.positives = Matrix(n, d);
  const double scale = noise / std::sqrt(static_cast<double>(d));
  for (std::size_t e = 0; e < n; ++e) {
    const auto c = static_cast<std::uint32_t>(e / size);
    const std::uint32_t i = slot[e];
    out.cluster_of[i] = c;
    std::vector<double> y = centers[c];
    std::vector<double> w(d, 0.0);
    bool has_private = false;
    if (blocks) {
      const std::size_t lo = static_cast<std::size_t>(c) * d / clusters + 1;
      const std::size_t hi = static_cast<std::size_t>(c + 1) * d / clusters;
      for (std::size_t k = lo; k < hi; ++k) w[k] = gauss(rng);
      has_private = hi > lo;
    } else {
      for (double& x : w) x = gauss(rng);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += w[k] * centers[c][k];
      for (std::size_t k = 0; k < d; ++k) w[k] -= dot * centers[c][k];
      has_private = d > 1;
    }
    if (has_private) {
      w = unit(w);
      for (std::size_t k = 0; k < d; ++k) y[k] = a * centers[c][k] + b * w[k];
    }
    y = unit(y);
    std::vector<double> q = y;
    if (noise > 0.0) {
      for (std::size_t k = 0; k < d; ++k) q[k] += scale * gauss(rng);
      for (std::size_t k = 0; k < d; ++k) y[k] += scale * gauss(rng);
      q = unit(q);
      y = unit(y);
    }
    for (std::size_t k = 0; k < d; ++k) {
      corpus.queries(i, k) = static_cast<float>(q[k]);
      corpus.positives(i, k) = static_cast<float>(y[k]);
    }
  }
  validate_corpus(corpus);
  return out;
}

}  // namespace batchmine
