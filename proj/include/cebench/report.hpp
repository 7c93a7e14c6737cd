#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cebench/config.hpp"
#include "cebench/csv.hpp"
#include "cebench/monitor.hpp"
#include "cebench/recommender.hpp"

namespace cebench {

// Summaries sorted by filename so reports are stable across directory
// enumeration order.
inline std::vector<RunSummary> load_summaries(const std::string& runs_dir) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(runs_dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(runs_dir)) {
      const auto name = entry.path().filename().string();
      if (name.size() > 13 &&
          name.substr(name.size() - 13) == ".summary.json") {
        files.push_back(entry.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RunSummary> summaries;
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    summaries.push_back(RunSummary::from_json(nlohmann::json::parse(in)));
  }
  return summaries;
}

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(12) << v;
  return out.str();
}

}  // namespace detail

// Fixed identity and latency columns bracket a sorted union of metric
// columns, so one grid always yields one stable header.
inline std::vector<std::string> report_columns(
    const std::vector<RunSummary>& summaries) {
  std::vector<std::string> cols = {"run_id"};
  for (const char* axis : kAxisNames) cols.push_back(axis);
  cols.insert(cols.end(), {"repetition", "n_prompts", "n_errors"});
  std::set<std::string> metric_names;
  for (const auto& s : summaries) {
    for (const auto& [name, _] : s.metrics) {
      if (name != "valid_answer_rate") metric_names.insert(name);
    }
  }
  for (const auto& name : metric_names) cols.push_back("metric_" + name);
  cols.insert(cols.end(),
              {"latency_mean", "latency_p95", "latency_llm_mean",
               "peak_gpu_memory_bytes", "tokens_in_total", "tokens_out_total",
               "valid_answer_rate"});
  return cols;
}

inline std::string report_cell(const RunSummary& s, const std::string& col) {
  if (col == "run_id") return s.run_id;
  for (const char* axis : kAxisNames) {
    if (col == axis) {
      auto it = s.axes.find(axis);
      return it == s.axes.end() ? std::string(kUnsetValue) : it->second;
    }
  }
  if (col == "repetition") return std::to_string(s.repetition);
  if (col == "n_prompts") return std::to_string(s.n_prompts);
  if (col == "n_errors") return std::to_string(s.n_errors);
  if (col.rfind("metric_", 0) == 0) {
    auto it = s.metrics.find(col.substr(7));
    return it == s.metrics.end() ? "" : detail::format_double(it->second);
  }
  if (col == "latency_mean") return detail::format_double(s.latency_mean);
  if (col == "latency_p95") return detail::format_double(s.latency_p95);
  if (col == "latency_llm_mean") return detail::format_double(s.latency_llm_mean);
  if (col == "peak_gpu_memory_bytes") {
    return s.peak_gpu_memory_bytes ? std::to_string(*s.peak_gpu_memory_bytes)
                                   : "";
  }
  if (col == "tokens_in_total") return std::to_string(s.tokens_in_total);
  if (col == "tokens_out_total") return std::to_string(s.tokens_out_total);
  if (col == "valid_answer_rate") return detail::format_double(s.valid_answer_rate);
  return "";
}

inline std::string report_csv(const std::vector<RunSummary>& summaries) {
  auto cols = report_columns(summaries);
  std::string out = csv_row(cols);
  for (const auto& s : summaries) {
    std::vector<std::string> row;
    row.reserve(cols.size());
    for (const auto& col : cols) row.push_back(report_cell(s, col));
    out += csv_row(row);
  }
  return out;
}

inline std::string report_json(const std::vector<RunSummary>& summaries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : summaries) arr.push_back(s.to_json());
  return arr.dump(2) + "\n";
}

// ---- Recommendation artifacts ----------------------------------------------

inline nlohmann::json plan_to_json(const CandidatePlan& p) {
  nlohmann::json j;
  j["run_id"] = p.run_id;
  j["axes"] = p.axes;
  j["instance"] = p.instance;
  j["est_time_s"] = p.est_time_s ? nlohmann::json(*p.est_time_s) : nlohmann::json();
  j["est_cost_per_kprompt"] = p.est_cost_per_kprompt
                                  ? nlohmann::json(*p.est_cost_per_kprompt)
                                  : nlohmann::json();
  j["quality_metric"] = p.quality_metric;
  j["quality"] = p.quality;
  j["feasible"] = p.feasible;
  j["online"] = p.online;
  j["on_front"] = p.on_front;
  return j;
}

inline void write_recommendation_json(const Recommendation& rec,
                                      const std::string& path) {
  nlohmann::json j;
  j["quality_metric"] = rec.quality_metric;
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& p : rec.candidates) candidates.push_back(plan_to_json(p));
  j["candidates"] = candidates;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path);
}

inline void write_pareto_csv(const Recommendation& rec,
                             const std::string& path) {
  std::string out = csv_row({"run_id", "model", "instance", "quality_metric",
                             "quality", "est_time_s", "est_cost_per_kprompt"});
  for (const auto& p : rec.plans) {
    auto model_it = p.axes.find("model");
    out += csv_row({p.run_id,
                    model_it == p.axes.end() ? "" : model_it->second,
                    p.instance, p.quality_metric,
                    detail::format_double(p.quality),
                    p.est_time_s ? detail::format_double(*p.est_time_s) : "",
                    p.est_cost_per_kprompt
                        ? detail::format_double(*p.est_cost_per_kprompt)
                        : ""});
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << out;
  if (!f) throw std::runtime_error("cannot write " + path);
}

inline std::string plan_table(const Recommendation& rec) {
  std::size_t instance_w = 8, model_w = 5;  // header widths
  for (const auto& p : rec.plans) {
    instance_w = std::max(instance_w, p.instance.size());
    auto model_it = p.axes.find("model");
    if (model_it != p.axes.end()) {
      model_w = std::max(model_w, model_it->second.size());
    }
  }
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(instance_w + 2)) << "instance"
      << std::setw(static_cast<int>(model_w + 2)) << "model" << std::setw(12)
      << rec.quality_metric << std::setw(14) << "est_time_s"
      << "est_cost_$/kprompt\n";
  for (const auto& p : rec.plans) {
    auto model_it = p.axes.find("model");
    out << std::left << std::setw(static_cast<int>(instance_w + 2))
        << p.instance << std::setw(static_cast<int>(model_w + 2))
        << (model_it == p.axes.end() ? "" : model_it->second) << std::setw(12)
        << std::fixed << std::setprecision(3) << p.quality << std::setw(14)
        << (p.est_time_s ? *p.est_time_s : 0.0) << std::setprecision(2)
        << (p.est_cost_per_kprompt ? *p.est_cost_per_kprompt : 0.0) << "\n";
    out.unsetf(std::ios::fixed);
  }
  return out.str();
}

// ---- SVG scatter ------------------------------------------------------------

struct SvgPoint {
  double x = 0.0;
  double y = 0.0;
  bool highlighted = false;
  std::string label;
};

// Hand-rolled scatter plot: light grid, gray candidates, highlighted front
// joined by a line. No external assets, renders anywhere.
inline std::string svg_scatter(const std::vector<SvgPoint>& points,
                               const std::string& x_label,
                               const std::string& y_label,
                               const std::string& title) {
  const double width = 680, height = 460;
  const double ml = 70, mr = 30, mt = 50, mb = 55;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!points.empty()) {
    xmin = xmax = points[0].x;
    ymin = ymax = points[0].y;
    for (const auto& p : points) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  }
  auto pad = [](double& lo, double& hi) {
    double span = hi - lo;
    if (span <= 0) span = std::max(1.0, std::abs(hi));
    lo -= span * 0.08;
    hi += span * 0.08;
  };
  pad(xmin, xmax);
  pad(ymin, ymax);
  auto sx = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
  };
  auto sy = [&](double y) {
    return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
  };
  std::ostringstream svg;
  svg << std::setprecision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
  // Grid and tick labels.
  for (int i = 0; i <= 5; ++i) {
    double fx = xmin + (xmax - xmin) * i / 5.0;
    double fy = ymin + (ymax - ymin) * i / 5.0;
    svg << "<line x1=\"" << sx(fx) << "\" y1=\"" << mt << "\" x2=\"" << sx(fx)
        << "\" y2=\"" << height - mb << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << sy(fy) << "\" x2=\""
        << width - mr << "\" y2=\"" << sy(fy) << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << sx(fx) << "\" y=\"" << height - mb + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << std::fixed << std::setprecision(2) << fx
        << "</text>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << sy(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << fy << "</text>\n";
    svg.unsetf(std::ios::fixed);
    svg << std::setprecision(6);
  }
  svg << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\""
      << width - ml - mr << "\" height=\"" << height - mt - mb
      << "\" fill=\"none\" stroke=\"#404040\"/>\n";
  svg << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\">" << x_label << "</text>\n";
  svg << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\" transform=\"rotate(-90 16 "
      << (mt + height - mb) / 2 << ")\">" << y_label << "</text>\n";

  std::vector<SvgPoint> front;
  for (const auto& p : points) {
    if (p.highlighted) front.push_back(p);
  }
  std::sort(front.begin(), front.end(),
            [](const SvgPoint& a, const SvgPoint& b) { return a.x < b.x; });
  if (front.size() > 1) {
    svg << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" "
        << "stroke-dasharray=\"5,3\" points=\"";
    for (const auto& p : front) svg << sx(p.x) << "," << sy(p.y) << " ";
    svg << "\"/>\n";
  }
  for (const auto& p : points) {
    if (p.highlighted) continue;
    svg << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y)
        << "\" r=\"4\" fill=\"#9aa7b0\" fill-opacity=\"0.75\"/>\n";
  }
  for (const auto& p : front) {
    svg << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y)
        << "\" r=\"5.5\" fill=\"#c0392b\"/>\n";
    if (!p.label.empty()) {
      svg << "<text x=\"" << sx(p.x) + 8 << "\" y=\"" << sy(p.y) - 6
          << "\" font-family=\"sans-serif\" font-size=\"11\">" << p.label
          << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

// Scatter source resolution: a recommendation in the runs directory plots
// cost vs quality with its front; otherwise the summaries plot latency vs
// quality with no front.
inline std::string render_scatter_svg(const std::string& runs_dir,
                                      const std::vector<RunSummary>& summaries) {
  const std::string rec_path = runs_dir + "/recommendation.json";
  std::vector<SvgPoint> points;
  if (std::filesystem::exists(rec_path)) {
    std::ifstream in(rec_path, std::ios::binary);
    nlohmann::json j = nlohmann::json::parse(in);
    std::string metric = j.at("quality_metric").get<std::string>();
    for (const auto& c : j.at("candidates")) {
      if (!c.at("feasible").get<bool>() ||
          c.at("est_cost_per_kprompt").is_null()) {
        continue;
      }
      SvgPoint p;
      p.x = c.at("est_cost_per_kprompt").get<double>();
      p.y = c.at("quality").get<double>();
      p.highlighted = c.at("on_front").get<bool>();
      if (p.highlighted) {
        auto axes = c.at("axes");
        std::string model = axes.contains("model")
                                ? axes.at("model").get<std::string>()
                                : "";
        p.label = c.at("instance").get<std::string>() + " " + model;
      }
      points.push_back(std::move(p));
    }
    return svg_scatter(points, "estimated cost ($/kPrompt)", metric,
                       "Deployment plans: cost vs " + metric);
  }
  if (summaries.empty()) {
    throw std::runtime_error("nothing to plot: no summaries in " + runs_dir);
  }
  std::string metric;
  for (const auto& s : summaries) {
    if (s.metrics.count("mae")) metric = "mae";
  }
  if (metric.empty()) {
    for (const auto& s : summaries) {
      if (s.metrics.count("f1_macro")) metric = "f1_macro";
    }
  }
  if (metric.empty()) metric = "valid_answer_rate";
  for (const auto& s : summaries) {
    SvgPoint p;
    p.x = s.latency_mean;
    auto it = s.metrics.find(metric);
    p.y = it != s.metrics.end()
              ? it->second
              : (metric == "valid_answer_rate" ? s.valid_answer_rate : 0.0);
    points.push_back(std::move(p));
  }
  return svg_scatter(points, "mean end-to-end latency (s)", metric,
                     "Measured runs: latency vs " + metric);
}

}  // namespace cebench
