#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cebench/config.hpp"
#include "cebench/report.hpp"
#include "cebench/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailures = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNoFeasiblePlan = 3;

int cmd_run(const std::string& config_path, const std::string& out_dir,
            bool resume, int parallel_runs) {
  cebench::ExperimentGrid grid;
  try {
    grid = cebench::load_experiment_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  cebench::BatchResult result;
  try {
    result = cebench::execute_batch(grid, out_dir, resume, parallel_runs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::cout << result.n_done << " runs done, " << result.n_skipped
            << " skipped, " << result.n_failed << " failed\n";
  for (const auto& outcome : result.outcomes) {
    if (!outcome.ok) {
      std::cerr << "run " << outcome.run_id << " failed: " << outcome.error
                << "\n";
    } else if (outcome.n_errors > 0) {
      std::cerr << "run " << outcome.run_id << ": " << outcome.n_errors
                << " prompt(s) errored (logged)\n";
    }
  }
  return result.n_failed > 0 ? kExitRunFailures : kExitOk;
}

std::optional<cebench::QualityConstraint> parse_constraint(
    const std::string& text) {
  if (text.empty()) return std::nullopt;
  for (const char* op : {">=", "<="}) {
    auto pos = text.find(op);
    if (pos == std::string::npos) continue;
    cebench::QualityConstraint c;
    c.metric = text.substr(0, pos);
    c.bound = std::stod(text.substr(pos + 2));
    c.at_least = (op[0] == '>');
    if (c.metric.empty()) throw std::runtime_error("constraint has no metric");
    return c;
  }
  throw std::runtime_error("constraint must look like metric>=value or metric<=value");
}

int cmd_recommend(const std::string& runs_dir, const std::string& quotes_path,
                  const std::string& pricing_path,
                  std::optional<double> budget, const std::string& constraint,
                  const std::string& objectives, const std::string& metric,
                  const std::string& latency_source,
                  const std::string& bench_name) {
  std::vector<cebench::RunSummary> summaries;
  try {
    summaries = cebench::load_summaries(runs_dir);
  } catch (const std::exception& e) {
    std::cerr << "error reading summaries: " << e.what() << "\n";
    return kExitUsage;
  }
  if (summaries.empty()) {
    std::cerr << "no summaries found in " << runs_dir << "\n";
    return kExitUsage;
  }
  try {
    std::vector<cebench::InstanceQuote> quotes;
    if (!quotes_path.empty()) quotes = cebench::load_quotes_csv(quotes_path);
    std::vector<cebench::PricingEntry> pricing;
    if (!pricing_path.empty()) pricing = cebench::load_pricing_csv(pricing_path);
    if (quotes.empty() && pricing.empty()) {
      std::cerr << "need --quotes and/or --pricing\n";
      return kExitUsage;
    }
    cebench::RecommendOptions opts;
    opts.budget_per_kprompt = budget;
    opts.quality_constraint = parse_constraint(constraint);
    opts.quality_metric = metric;
    opts.scale_llm_latency = latency_source == "llm";
    opts.trade_time = objectives == "quality,time";
    opts.bench_instance = bench_name;
    cebench::Recommendation rec =
        cebench::recommend(summaries, quotes, pricing, opts);
    std::cout << plan_table(rec);
    cebench::write_recommendation_json(rec, runs_dir + "/recommendation.json");
    cebench::write_pareto_csv(rec, runs_dir + "/pareto.csv");
    std::cout << rec.plans.size() << " plan(s) on the front out of "
              << rec.candidates.size() << " candidates; wrote "
              << runs_dir << "/recommendation.json and " << runs_dir
              << "/pareto.csv\n";
  } catch (const cebench::NoFeasiblePlans& e) {
    std::cerr << "no feasible plan: " << e.what() << "\n";
    return kExitNoFeasiblePlan;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

int cmd_report(const std::string& runs_dir, const std::string& format,
               const std::string& out_path, const std::string& svg_path) {
  std::vector<cebench::RunSummary> summaries;
  try {
    summaries = cebench::load_summaries(runs_dir);
  } catch (const std::exception& e) {
    std::cerr << "error reading summaries: " << e.what() << "\n";
    return kExitUsage;
  }
  if (summaries.empty()) {
    std::cerr << "no summaries found in " << runs_dir << "\n";
    return kExitUsage;
  }
  try {
    std::string table = format == "json" ? cebench::report_json(summaries)
                                         : cebench::report_csv(summaries);
    if (out_path.empty()) {
      std::cout << table;
    } else {
      std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
      out << table;
      if (!out) throw std::runtime_error("cannot write " + out_path);
    }
    if (!svg_path.empty()) {
      std::string svg = cebench::render_scatter_svg(runs_dir, summaries);
      std::ofstream out(svg_path, std::ios::binary | std::ios::trunc);
      out << svg;
      if (!out) throw std::runtime_error("cannot write " + svg_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Configuration-driven LLM pipeline benchmarking"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Execute an experiment grid");
  std::string config_path, out_dir;
  bool resume = false;
  int parallel_runs = 1;
  run->add_option("--config", config_path, "Experiment config (YAML)")
      ->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_flag("--resume", resume, "Skip runs already marked done");
  run->add_option("--parallel-runs", parallel_runs,
                  "Concurrent RunSpecs (prompts stay serial within each)")
      ->check(CLI::PositiveNumber);

  auto* recommend = app.add_subcommand("recommend", "Rank deployment plans");
  std::string runs_dir, quotes_path, pricing_path, constraint, metric;
  std::string objectives = "quality,cost";
  std::string latency_source = "end_to_end";
  std::string bench_name = "bench";
  std::optional<double> budget;
  recommend->add_option("--runs", runs_dir, "Directory with *.summary.json")
      ->required();
  recommend->add_option("--quotes", quotes_path, "Instance quote catalog CSV");
  recommend->add_option("--pricing", pricing_path,
                        "Online service pricing CSV");
  recommend->add_option("--budget", budget, "Max $ per 1000 prompts");
  recommend->add_option("--constraint", constraint,
                        "Quality bound, e.g. f1_macro>=0.9 or mae<=3");
  recommend->add_option("--objectives", objectives, "Objective pair")
      ->check(CLI::IsMember({"quality,cost", "quality,time"}));
  recommend->add_option("--quality-metric", metric,
                        "Metric for the quality objective (default: auto)");
  recommend->add_option("--latency-source", latency_source,
                        "Which measured latency to scale")
      ->check(CLI::IsMember({"end_to_end", "llm"}));
  recommend->add_option("--bench", bench_name,
                        "Quote catalog entry of the benchmarking machine");

  auto* report = app.add_subcommand("report", "Flat table of run summaries");
  std::string report_runs_dir, report_out, svg_path;
  std::string format = "csv";
  report->add_option("--runs", report_runs_dir, "Directory with *.summary.json")
      ->required();
  report->add_option("--format", format, "Output format")
      ->check(CLI::IsMember({"csv", "json"}));
  report->add_option("--out", report_out, "Write table here instead of stdout");
  report->add_option("--svg", svg_path, "Also render a scatter plot SVG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (run->parsed()) {
    return cmd_run(config_path, out_dir, resume, parallel_runs);
  }
  if (recommend->parsed()) {
    return cmd_recommend(runs_dir, quotes_path, pricing_path, budget,
                         constraint, objectives, metric, latency_source,
                         bench_name);
  }
  return cmd_report(report_runs_dir, format, report_out, svg_path);
}
