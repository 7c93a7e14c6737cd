#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cebench/evaluators.hpp"
#include "cebench/jsonl.hpp"

namespace cebench {

// ---- Resource probes -------------------------------------------------------

struct ResourceSample {
  double timestamp = 0.0;  // seconds since probe start
  long long gpu_memory_used = 0;
  long long host_memory_used = 0;
};

struct ProbeDescriptor {
  enum class Kind { null, trace_replay, command };
  Kind kind = Kind::null;
  std::string path;     // trace_replay
  std::string command;  // command: prints gpu bytes on its first output line
  double interval_s = 0.5;
};

inline ProbeDescriptor::Kind probe_kind_from_string(const std::string& s) {
  if (s == "null" || s.empty()) return ProbeDescriptor::Kind::null;
  if (s == "trace_replay") return ProbeDescriptor::Kind::trace_replay;
  if (s == "command") return ProbeDescriptor::Kind::command;
  throw std::runtime_error("unknown probe kind: " + s);
}

struct ProbeResult {
  std::vector<ResourceSample> samples;
  bool failed = false;

  std::optional<long long> peak_gpu_memory() const {
    if (failed || samples.empty()) return std::nullopt;
    long long peak = 0;
    for (const auto& s : samples) peak = std::max(peak, s.gpu_memory_used);
    return peak;
  }
};

inline long long host_memory_used_bytes() {
  std::ifstream in("/proc/meminfo");
  if (!in) return 0;
  std::string key;
  long long total_kb = 0, avail_kb = 0;
  long long value;
  std::string unit;
  while (in >> key >> value) {
    std::getline(in, unit);
    if (key == "MemTotal:") total_kb = value;
    else if (key == "MemAvailable:") avail_kb = value;
  }
  if (total_kb <= 0 || avail_kb < 0) return 0;
  return (total_kb - avail_kb) * 1024;
}

// Samples until stop(); trace_replay paces through recorded offsets and on
// stop drains whatever the trace still holds, so a run always sees the whole
// trace regardless of its wall-clock duration.
class ResourceProbe {
 public:
  explicit ResourceProbe(ProbeDescriptor desc) : desc_(std::move(desc)) {}

  void start() {
    if (desc_.kind == ProbeDescriptor::Kind::null) return;
    if (desc_.kind == ProbeDescriptor::Kind::trace_replay) load_trace();
    if (result_.failed) return;
    stop_requested_.store(false);
    worker_ = std::thread([this] { run(); });
  }

  ProbeResult stop() {
    stop_requested_.store(true);
    if (worker_.joinable()) worker_.join();
    if (desc_.kind == ProbeDescriptor::Kind::trace_replay && !result_.failed) {
      for (std::size_t i = next_trace_row_; i < trace_.size(); ++i) {
        result_.samples.push_back(trace_[i]);
      }
      next_trace_row_ = trace_.size();
    }
    return result_;
  }

 private:
  void load_trace() {
    try {
      auto file = read_jsonl(desc_.path);
      for (const auto& row : file.rows) {
        ResourceSample s;
        s.timestamp = row.at("t_offset_s").get<double>();
        s.gpu_memory_used = row.at("gpu_memory_used_bytes").get<long long>();
        s.host_memory_used = row.value("host_memory_used_bytes", 0ll);
        trace_.push_back(s);
      }
      std::sort(trace_.begin(), trace_.end(),
                [](const ResourceSample& a, const ResourceSample& b) {
                  return a.timestamp < b.timestamp;
                });
    } catch (const std::exception& e) {
      std::fprintf(stderr, "warning: probe trace unusable (%s), peak will be absent\n",
                   e.what());
      result_.failed = true;
    }
  }

  void run() {
    auto t0 = std::chrono::steady_clock::now();
    double next_due = 0.0;
    while (!stop_requested_.load()) {
      double now = std::chrono::duration<double>(
          std::chrono::steady_clock::now() - t0).count();
      if (desc_.kind == ProbeDescriptor::Kind::trace_replay) {
        while (next_trace_row_ < trace_.size() &&
               trace_[next_trace_row_].timestamp <= now) {
          result_.samples.push_back(trace_[next_trace_row_]);
          ++next_trace_row_;
        }
      } else if (now + 1e-9 >= next_due) {
        auto gpu = sample_command();
        if (!gpu) {
          result_.failed = true;
          return;
        }
        ResourceSample s;
        s.timestamp = now;
        s.gpu_memory_used = *gpu;
        s.host_memory_used = host_memory_used_bytes();
        result_.samples.push_back(s);
        next_due += desc_.interval_s;
      }
      // Short sleeps keep stop() prompt no matter the sampling interval.
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  std::optional<long long> sample_command() {
    FILE* pipe = ::popen(desc_.command.c_str(), "r");
    if (!pipe) return std::nullopt;
    char buf[256];
    std::string line;
    if (std::fgets(buf, sizeof buf, pipe)) line = buf;
    int rc = ::pclose(pipe);
    if (rc != 0 || line.empty()) return std::nullopt;
    try {
      return std::stoll(line);
    } catch (const std::logic_error&) {
      return std::nullopt;
    }
  }

  ProbeDescriptor desc_;
  std::thread worker_;
  std::atomic<bool> stop_requested_{false};
  std::vector<ResourceSample> trace_;
  std::size_t next_trace_row_ = 0;
  ProbeResult result_;
};

// ---- Run records -----------------------------------------------------------

struct RunRecord {
  std::string run_id;
  std::string prompt_id;
  double latency_end_to_end = 0.0;
  double latency_llm = 0.0;
  long tokens_in = 0;
  long tokens_out = 0;
  std::string response_text;
  Prediction extracted_prediction;
  std::optional<std::string> error;

  nlohmann::json to_json() const {
    return {{"run_id", run_id},
            {"prompt_id", prompt_id},
            {"latency_end_to_end", latency_end_to_end},
            {"latency_llm", latency_llm},
            {"tokens_in", tokens_in},
            {"tokens_out", tokens_out},
            {"response_text", response_text},
            {"extracted_prediction", extracted_prediction.to_json()},
            {"error", error ? nlohmann::json(*error) : nlohmann::json()}};
  }

  static RunRecord from_json(const nlohmann::json& j) {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.prompt_id = j.at("prompt_id").get<std::string>();
    r.latency_end_to_end = j.at("latency_end_to_end").get<double>();
    r.latency_llm = j.at("latency_llm").get<double>();
    r.tokens_in = j.at("tokens_in").get<long>();
    r.tokens_out = j.at("tokens_out").get<long>();
    r.response_text = j.at("response_text").get<std::string>();
    r.extracted_prediction = Prediction::from_json(j.at("extracted_prediction"));
    if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
    return r;
  }
};

// Append-only JSONL writer; one flushed line per record.
class JsonlSink {
 public:
  explicit JsonlSink(const std::string& path)
      : out_(path, std::ios::app | std::ios::binary), path_(path) {
    if (!out_) throw std::runtime_error("cannot open log for append: " + path);
  }

  void append(const nlohmann::json& row) {
    std::scoped_lock lock(mu_);
    out_ << row.dump() << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("write failed on log: " + path_);
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
  std::string path_;
};

inline std::vector<RunRecord> load_run_log(const std::string& path) {
  auto file = read_jsonl(path);
  std::vector<RunRecord> records;
  records.reserve(file.rows.size());
  for (const auto& row : file.rows) records.push_back(RunRecord::from_json(row));
  return records;
}

// ---- Aggregation -----------------------------------------------------------

struct RunSummary {
  std::string run_id;
  std::map<std::string, std::string> axes;
  int repetition = 0;
  std::size_t n_prompts = 0;
  std::size_t n_errors = 0;
  std::map<std::string, double> metrics;
  double latency_mean = 0.0;
  double latency_p95 = 0.0;
  double latency_llm_mean = 0.0;
  std::optional<long long> peak_gpu_memory_bytes;
  long long tokens_in_total = 0;
  long long tokens_out_total = 0;
  double valid_answer_rate = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["run_id"] = run_id;
    j["axes"] = axes;
    j["repetition"] = repetition;
    j["n_prompts"] = n_prompts;
    j["n_errors"] = n_errors;
    j["metrics"] = metrics;
    j["latency_mean"] = latency_mean;
    j["latency_p95"] = latency_p95;
    j["latency_llm_mean"] = latency_llm_mean;
    j["peak_gpu_memory_bytes"] =
        peak_gpu_memory_bytes ? nlohmann::json(*peak_gpu_memory_bytes)
                              : nlohmann::json();
    j["tokens_in_total"] = tokens_in_total;
    j["tokens_out_total"] = tokens_out_total;
    j["valid_answer_rate"] = valid_answer_rate;
    return j;
  }

  static RunSummary from_json(const nlohmann::json& j) {
    RunSummary s;
    s.run_id = j.at("run_id").get<std::string>();
    s.axes = j.at("axes").get<std::map<std::string, std::string>>();
    s.repetition = j.at("repetition").get<int>();
    s.n_prompts = j.at("n_prompts").get<std::size_t>();
    s.n_errors = j.value("n_errors", std::size_t{0});
    s.metrics = j.at("metrics").get<std::map<std::string, double>>();
    s.latency_mean = j.at("latency_mean").get<double>();
    s.latency_p95 = j.at("latency_p95").get<double>();
    s.latency_llm_mean = j.value("latency_llm_mean", 0.0);
    if (!j.at("peak_gpu_memory_bytes").is_null()) {
      s.peak_gpu_memory_bytes = j.at("peak_gpu_memory_bytes").get<long long>();
    }
    s.tokens_in_total = j.value("tokens_in_total", 0ll);
    s.tokens_out_total = j.value("tokens_out_total", 0ll);
    s.valid_answer_rate = j.at("valid_answer_rate").get<double>();
    return s;
  }
};

// Nearest-rank percentile: the ceil(p*n)-th order statistic, no interpolation.
inline double percentile_nearest_rank(std::vector<double> values, double p) {
  if (values.empty()) {
    throw std::invalid_argument("percentile of empty sample");
  }
  std::sort(values.begin(), values.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(p * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

inline RunSummary aggregate(const std::vector<RunRecord>& records,
                            const ProbeResult& probe,
                            const std::map<std::string, double>& metric_values,
                            const std::map<std::string, std::string>& axes,
                            int repetition) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  RunSummary s;
  s.run_id = records[0].run_id;
  for (const auto& r : records) {
    if (r.run_id != s.run_id) {
      throw std::invalid_argument("aggregate: mixed run ids");
    }
  }
  s.axes = axes;
  s.repetition = repetition;
  s.n_prompts = records.size();
  s.metrics = metric_values;
  std::vector<double> latencies;
  double llm_sum = 0.0;
  std::size_t valid = 0;
  for (const auto& r : records) {
    s.tokens_in_total += r.tokens_in;
    s.tokens_out_total += r.tokens_out;
    if (r.error) {
      ++s.n_errors;
      continue;
    }
    latencies.push_back(r.latency_end_to_end);
    llm_sum += r.latency_llm;
    if (r.extracted_prediction.valid()) ++valid;
  }
  if (!latencies.empty()) {
    double sum = 0.0;
    for (double l : latencies) sum += l;
    s.latency_mean = sum / static_cast<double>(latencies.size());
    s.latency_llm_mean = llm_sum / static_cast<double>(latencies.size());
    s.latency_p95 = percentile_nearest_rank(latencies, 0.95);
  }
  s.valid_answer_rate =
      static_cast<double>(valid) / static_cast<double>(records.size());
  s.peak_gpu_memory_bytes = probe.peak_gpu_memory();
  return s;
}

}  // namespace cebench
