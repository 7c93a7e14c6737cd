#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cebench/csv.hpp"
#include "cebench/monitor.hpp"

namespace cebench {

struct InstanceQuote {
  std::string name;
  std::string gpu;
  double gpu_memory_gb = 0.0;
  double tflops = 0.0;
  double price_per_hour = 0.0;
};

struct PricingEntry {
  std::string model;
  double input_per_1m = 0.0;
  double output_per_1m = 0.0;
};

struct CandidatePlan {
  std::string run_id;
  std::map<std::string, std::string> axes;
  std::string instance;
  std::optional<double> est_time_s;           // per prompt
  std::optional<double> est_cost_per_kprompt;  // dollars per 1000 prompts
  std::string quality_metric;
  double quality = 0.0;
  bool feasible = false;
  bool online = false;
  bool on_front = false;
};

// ---- Scaling arithmetic ----------------------------------------------------

inline double estimate_latency(double measured_s, double bench_tflops,
                               double target_tflops) {
  if (measured_s <= 0 || bench_tflops <= 0 || target_tflops <= 0) {
    throw std::invalid_argument("estimate_latency: inputs must be positive");
  }
  return measured_s * (bench_tflops / target_tflops);
}

inline double estimate_cost_per_kprompt(double est_time_s,
                                        double price_per_hour) {
  if (est_time_s <= 0) {
    throw std::invalid_argument("estimate_cost_per_kprompt: time must be positive");
  }
  if (price_per_hour < 0) {
    throw std::invalid_argument("estimate_cost_per_kprompt: negative price");
  }
  return price_per_hour * est_time_s * 1000.0 / 3600.0;
}

inline double online_cost_per_prompt(long long tokens_in, long long tokens_out,
                                     const PricingEntry& pricing) {
  if (tokens_in < 0 || tokens_out < 0) {
    throw std::invalid_argument("online_cost_per_prompt: negative counts");
  }
  return static_cast<double>(tokens_in) * pricing.input_per_1m / 1e6 +
         static_cast<double>(tokens_out) * pricing.output_per_1m / 1e6;
}

// Peak memory fits on the quoted GPU. An absent peak means feasibility is
// unknown; callers treat that as infeasible and warn.
inline bool feasible(const RunSummary& summary, const InstanceQuote& quote) {
  if (!summary.peak_gpu_memory_bytes) return false;
  double gb = static_cast<double>(*summary.peak_gpu_memory_bytes) /
              (1024.0 * 1024.0 * 1024.0);
  return gb <= quote.gpu_memory_gb;
}

// ---- Pareto front ----------------------------------------------------------

// objectives[i] is the minimization vector of plan i. Returns indices of the
// non-dominated plans in input order: p is dominated iff some q is <= p
// everywhere and < somewhere.
inline std::vector<std::size_t> pareto_front_indices(
    const std::vector<std::vector<double>>& objectives) {
  if (!objectives.empty() && objectives[0].empty()) {
    throw std::invalid_argument("pareto_front: no objectives");
  }
  const std::size_t n = objectives.size();
  const std::size_t d = n == 0 ? 0 : objectives[0].size();
  for (const auto& o : objectives) {
    if (o.size() != d) {
      throw std::invalid_argument("pareto_front: ragged objectives");
    }
  }
  std::vector<std::size_t> front;
  for (std::size_t p = 0; p < n; ++p) {
    bool dominated = false;
    for (std::size_t q = 0; q < n && !dominated; ++q) {
      if (q == p) continue;
      bool all_le = true, any_lt = false;
      for (std::size_t j = 0; j < d; ++j) {
        if (objectives[q][j] > objectives[p][j]) {
          all_le = false;
          break;
        }
        if (objectives[q][j] < objectives[p][j]) any_lt = true;
      }
      dominated = all_le && any_lt;
    }
    if (!dominated) front.push_back(p);
  }
  return front;
}

// ---- Catalog files ---------------------------------------------------------

inline std::vector<InstanceQuote> load_quotes_csv(const std::string& path) {
  auto rows = load_csv(path);
  if (rows.empty()) throw std::runtime_error(path + ": empty quote catalog");
  const std::vector<std::string> expected = {"name", "gpu", "gpu_memory_gb",
                                            "tflops", "price_per_hour"};
  if (rows[0] != expected) {
    throw std::runtime_error(path + ": unexpected quote catalog header");
  }
  std::vector<InstanceQuote> quotes;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != expected.size()) {
      throw std::runtime_error(path + " row " + std::to_string(i) +
                               ": wrong field count");
    }
    InstanceQuote q;
    q.name = row[0];
    q.gpu = row[1];
    q.gpu_memory_gb = std::stod(row[2]);
    q.tflops = std::stod(row[3]);
    q.price_per_hour = std::stod(row[4]);
    if (q.tflops <= 0 || q.gpu_memory_gb <= 0 || q.price_per_hour < 0) {
      throw std::runtime_error(path + " row " + std::to_string(i) +
                               ": invalid quote values");
    }
    quotes.push_back(std::move(q));
  }
  return quotes;
}

inline std::vector<PricingEntry> load_pricing_csv(const std::string& path) {
  auto rows = load_csv(path);
  if (rows.empty()) throw std::runtime_error(path + ": empty pricing catalog");
  const std::vector<std::string> expected = {"model", "input_per_1m",
                                            "output_per_1m"};
  if (rows[0] != expected) {
    throw std::runtime_error(path + ": unexpected pricing catalog header");
  }
  std::vector<PricingEntry> entries;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != expected.size()) {
      throw std::runtime_error(path + " row " + std::to_string(i) +
                               ": wrong field count");
    }
    PricingEntry e;
    e.model = row[0];
    e.input_per_1m = std::stod(row[1]);
    e.output_per_1m = std::stod(row[2]);
    if (e.input_per_1m < 0 || e.output_per_1m < 0) {
      throw std::runtime_error(path + " row " + std::to_string(i) +
                               ": negative price");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

// ---- Recommendation --------------------------------------------------------

struct NoFeasiblePlans : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct QualityConstraint {
  std::string metric;
  double bound = 0.0;
  // Unset: direction follows the metric orientation (<= for lower-is-better
  // metrics, >= otherwise). Set: an explicit >= (true) or <= (false).
  std::optional<bool> at_least;
};

struct RecommendOptions {
  std::optional<double> budget_per_kprompt;
  std::optional<QualityConstraint> quality_constraint;
  // Empty = auto: mae when present, else f1_macro, else first metric name.
  std::string quality_metric;
  // Scale end-to-end latency by default; llm switches to generation only.
  bool scale_llm_latency = false;
  // Objective pair: quality plus est_cost (default) or est_time.
  bool trade_time = false;
  std::string bench_instance = "bench";
};

struct Recommendation {
  std::vector<CandidatePlan> plans;       // the front, sorted by est_cost
  std::vector<CandidatePlan> candidates;  // everything examined
  std::string quality_metric;
};

inline bool metric_higher_is_better(const std::string& metric) {
  return metric == "specificity" || metric == "valid_answer_rate" ||
         metric.rfind("f1", 0) == 0;
}

namespace detail {

inline std::string pick_quality_metric(const std::vector<RunSummary>& summaries,
                                       const std::string& requested) {
  if (!requested.empty()) return requested;
  bool any_mae = false, any_f1 = false;
  for (const auto& s : summaries) {
    if (s.metrics.count("mae")) any_mae = true;
    if (s.metrics.count("f1_macro")) any_f1 = true;
  }
  if (any_mae) return "mae";
  if (any_f1) return "f1_macro";
  for (const auto& s : summaries) {
    if (!s.metrics.empty()) return s.metrics.begin()->first;
  }
  throw std::runtime_error("no metrics present in any summary");
}

}  // namespace detail

inline Recommendation recommend(const std::vector<RunSummary>& summaries,
                                const std::vector<InstanceQuote>& quotes,
                                const std::vector<PricingEntry>& pricing,
                                const RecommendOptions& opts = {}) {
  if (summaries.empty()) throw std::runtime_error("no run summaries supplied");
  if (quotes.empty() && pricing.empty()) {
    throw std::runtime_error("no instance quotes or pricing supplied");
  }
  const InstanceQuote* bench = nullptr;
  for (const auto& q : quotes) {
    if (q.name == opts.bench_instance) bench = &q;
  }
  if (!quotes.empty() && !bench) {
    throw std::runtime_error("quote catalog has no benchmarking entry '" +
                             opts.bench_instance + "'");
  }

  Recommendation rec;
  rec.quality_metric = detail::pick_quality_metric(summaries, opts.quality_metric);
  const bool higher_better = metric_higher_is_better(rec.quality_metric);
  std::vector<const RunSummary*> plan_source;

  for (const auto& s : summaries) {
    auto metric_it = s.metrics.find(rec.quality_metric);
    if (metric_it == s.metrics.end()) {
      std::fprintf(stderr,
                   "warning: run %s lacks metric %s, skipped as a candidate\n",
                   s.run_id.c_str(), rec.quality_metric.c_str());
      continue;
    }
    double measured = opts.scale_llm_latency ? s.latency_llm_mean : s.latency_mean;

    const PricingEntry* priced = nullptr;
    auto model_it = s.axes.find("model");
    if (model_it != s.axes.end()) {
      for (const auto& p : pricing) {
        if (p.model == model_it->second) priced = &p;
      }
    }
    if (priced) {
      // Online service plan: per-token pricing, no local memory bound.
      double tokens_in_mean =
          s.n_prompts ? static_cast<double>(s.tokens_in_total) / s.n_prompts : 0;
      double tokens_out_mean =
          s.n_prompts ? static_cast<double>(s.tokens_out_total) / s.n_prompts : 0;
      CandidatePlan plan;
      plan.run_id = s.run_id;
      plan.axes = s.axes;
      plan.instance = "online:" + priced->model;
      plan.est_time_s = measured > 0 ? std::optional<double>(measured) : std::nullopt;
      plan.est_cost_per_kprompt =
          1000.0 * online_cost_per_prompt(
                       static_cast<long long>(tokens_in_mean),
                       static_cast<long long>(tokens_out_mean), *priced);
      plan.quality_metric = rec.quality_metric;
      plan.quality = metric_it->second;
      plan.feasible = true;
      plan.online = true;
      rec.candidates.push_back(std::move(plan));
      plan_source.push_back(&s);
      continue;
    }

    if (!s.peak_gpu_memory_bytes) {
      std::fprintf(stderr,
                   "warning: run %s has no recorded peak GPU memory; "
                   "feasibility unknown, treated as infeasible\n",
                   s.run_id.c_str());
    }
    for (const auto& q : quotes) {
      CandidatePlan plan;
      plan.run_id = s.run_id;
      plan.axes = s.axes;
      plan.instance = q.name;
      plan.quality_metric = rec.quality_metric;
      plan.quality = metric_it->second;
      plan.feasible = feasible(s, q);
      if (plan.feasible && measured > 0) {
        double est = estimate_latency(measured, bench->tflops, q.tflops);
        plan.est_time_s = est;
        plan.est_cost_per_kprompt =
            estimate_cost_per_kprompt(est, q.price_per_hour);
      } else {
        // Unknown memory or no usable latency: nothing to cost.
        plan.feasible = false;
      }
      rec.candidates.push_back(std::move(plan));
      plan_source.push_back(&s);
    }
  }

  // Constraint pass over feasible candidates.
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < rec.candidates.size(); ++i) {
    const auto& plan = rec.candidates[i];
    if (!plan.feasible || !plan.est_cost_per_kprompt) continue;
    if (opts.trade_time && !plan.est_time_s) continue;
    if (opts.budget_per_kprompt &&
        *plan.est_cost_per_kprompt > *opts.budget_per_kprompt) {
      continue;
    }
    if (opts.quality_constraint) {
      const auto& metrics = plan_source[i]->metrics;
      auto it = metrics.find(opts.quality_constraint->metric);
      if (it == metrics.end()) continue;  // cannot verify, drop
      bool at_least = opts.quality_constraint->at_least.value_or(
          metric_higher_is_better(opts.quality_constraint->metric));
      bool ok = at_least ? it->second >= opts.quality_constraint->bound
                         : it->second <= opts.quality_constraint->bound;
      if (!ok) continue;
    }
    kept.push_back(i);
  }
  if (kept.empty()) {
    throw NoFeasiblePlans("no feasible plan survives the constraints");
  }

  std::vector<std::vector<double>> objectives;
  objectives.reserve(kept.size());
  for (std::size_t i : kept) {
    const auto& plan = rec.candidates[i];
    double quality = higher_better ? -plan.quality : plan.quality;
    double cost_axis = opts.trade_time ? *plan.est_time_s
                                       : *plan.est_cost_per_kprompt;
    objectives.push_back({quality, cost_axis});
  }
  for (std::size_t fi : pareto_front_indices(objectives)) {
    rec.candidates[kept[fi]].on_front = true;
  }
  for (const auto& plan : rec.candidates) {
    if (plan.on_front) rec.plans.push_back(plan);
  }
  std::stable_sort(rec.plans.begin(), rec.plans.end(),
                   [&](const CandidatePlan& a, const CandidatePlan& b) {
                     double ca = opts.trade_time ? *a.est_time_s
                                                 : *a.est_cost_per_kprompt;
                     double cb = opts.trade_time ? *b.est_time_s
                                                 : *b.est_cost_per_kprompt;
                     return ca < cb;
                   });
  return rec;
}

}  // namespace cebench
