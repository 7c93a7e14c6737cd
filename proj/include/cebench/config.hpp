#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "cebench/backends.hpp"
#include "cebench/hash.hpp"
#include "cebench/monitor.hpp"
#include "cebench/vectorstore.hpp"

namespace cebench {

inline constexpr const char* kAxisNames[] = {
    "model",      "model_quantization", "embedding_quantization",
    "top_k",      "chunk_size",         "prompting_mode"};

inline constexpr const char* kUnsetValue = "unset";

struct AxisValues {
  std::string name;
  std::vector<std::string> values;
};

struct FewshotOptions {
  int count = 5;
  std::string path;  // shots dataset; empty = reuse the run dataset's head
};

struct ExperimentGrid {
  std::string name;
  std::string dataset_path;
  std::string prompt_template;
  std::vector<std::string> knowledge_paths;
  // Declaration order as written in the config; every canonical axis is
  // present after validation, unlisted ones holding the single sentinel.
  std::vector<AxisValues> axes;
  BackendDescriptor backend;
  std::vector<std::string> metrics;
  int repetitions = 1;
  EmbeddingProviderDescriptor embedding;
  ProbeDescriptor probe;
  PqOptions pq;
  std::size_t chunk_overlap = 0;
  FewshotOptions fewshot;
};

struct RunSpec {
  std::string run_id;
  std::string grid_name;
  std::map<std::string, std::string> bound;  // axis name -> value
  int repetition = 0;
  std::string dataset_path;
  std::string prompt_template;
  std::vector<std::string> knowledge_paths;
  BackendDescriptor backend;
  std::vector<std::string> metrics;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& msg) {
  throw ConfigError(msg);
}

[[noreturn]] inline void config_fail_at(const YAML::Node& node,
                                        const std::string& msg) {
  auto mark = node.Mark();
  if (mark.line >= 0) {
    config_fail("line " + std::to_string(mark.line + 1) + ", column " +
                std::to_string(mark.column + 1) + ": " + msg);
  }
  config_fail(msg);
}

inline bool is_canonical_axis(const std::string& name) {
  for (const char* a : kAxisNames) {
    if (name == a) return true;
  }
  return false;
}

inline void check_positive_int_axis(const std::string& axis,
                                    const std::vector<std::string>& values,
                                    const YAML::Node& node) {
  for (const auto& v : values) {
    bool ok = !v.empty() && v.find_first_not_of("0123456789") == std::string::npos;
    long parsed = 0;
    if (ok) {
      try {
        parsed = std::stol(v);
      } catch (const std::logic_error&) {
        ok = false;
      }
    }
    if (!ok || parsed <= 0) {
      config_fail_at(node, "invalid value '" + v + "' for axis " + axis +
                               " (positive integer required)");
    }
  }
}

inline BackendDescriptor parse_backend(const YAML::Node& node) {
  if (!node || !node.IsMap()) {
    config_fail("backend section must be a map with at least a kind");
  }
  BackendDescriptor b;
  for (const auto& kv : node) {
    std::string key = kv.first.as<std::string>();
    if (key == "kind") b.kind = backend_kind_from_string(kv.second.as<std::string>());
    else if (key == "base_url") b.base_url = kv.second.as<std::string>();
    else if (key == "fixture") b.fixture_path = kv.second.as<std::string>();
    else if (key == "model") b.model = kv.second.as<std::string>();
    else if (key == "temperature") b.temperature = kv.second.as<double>();
    else if (key == "max_tokens") b.max_tokens = kv.second.as<int>();
    else if (key == "timeout_s") b.timeout_s = kv.second.as<double>();
    else if (key == "retries") b.retries = kv.second.as<int>();
    else if (key == "retry_backoff_s") b.retry_backoff_s = kv.second.as<double>();
    else if (key == "auth_header") b.auth_header = kv.second.as<std::string>();
    else config_fail_at(kv.first, "unknown backend key '" + key + "'");
  }
  if (b.timeout_s <= 0) config_fail_at(node, "backend timeout must be > 0");
  if (b.kind == BackendDescriptor::Kind::mock_replay && b.fixture_path.empty()) {
    config_fail_at(node, "mock_replay backend needs a fixture path");
  }
  if (b.kind != BackendDescriptor::Kind::mock_replay && b.base_url.empty()) {
    config_fail_at(node, "http backend needs a base_url");
  }
  return b;
}

inline EmbeddingProviderDescriptor parse_embedding(const YAML::Node& node) {
  EmbeddingProviderDescriptor e;
  if (!node) return e;
  for (const auto& kv : node) {
    std::string key = kv.first.as<std::string>();
    if (key == "kind") {
      std::string k = kv.second.as<std::string>();
      if (k == "builtin") e.kind = EmbeddingProviderDescriptor::Kind::builtin;
      else if (k == "http") e.kind = EmbeddingProviderDescriptor::Kind::http;
      else config_fail_at(kv.second, "unknown embedding kind '" + k + "'");
    } else if (key == "dim") {
      long d = kv.second.as<long>();
      if (d <= 0) config_fail_at(kv.second, "embedding dim must be positive");
      e.dim = static_cast<std::size_t>(d);
    } else if (key == "base_url") e.base_url = kv.second.as<std::string>();
    else if (key == "model") e.model = kv.second.as<std::string>();
    else if (key == "timeout_s") e.timeout_s = kv.second.as<double>();
    else config_fail_at(kv.first, "unknown embedding key '" + key + "'");
  }
  if (e.kind == EmbeddingProviderDescriptor::Kind::http && e.base_url.empty()) {
    config_fail_at(node, "http embedding provider needs a base_url");
  }
  return e;
}

inline ProbeDescriptor parse_probe(const YAML::Node& node) {
  ProbeDescriptor p;
  if (!node) return p;
  for (const auto& kv : node) {
    std::string key = kv.first.as<std::string>();
    if (key == "kind") p.kind = probe_kind_from_string(kv.second.as<std::string>());
    else if (key == "path") p.path = kv.second.as<std::string>();
    else if (key == "command") p.command = kv.second.as<std::string>();
    else if (key == "interval_s") {
      p.interval_s = kv.second.as<double>();
      if (p.interval_s <= 0) {
        config_fail_at(kv.second, "probe interval must be > 0");
      }
    } else config_fail_at(kv.first, "unknown probe key '" + key + "'");
  }
  if (p.kind == ProbeDescriptor::Kind::trace_replay && p.path.empty()) {
    config_fail_at(node, "trace_replay probe needs a path");
  }
  if (p.kind == ProbeDescriptor::Kind::command && p.command.empty()) {
    config_fail_at(node, "command probe needs a command");
  }
  return p;
}

inline PqOptions parse_pq(const YAML::Node& node) {
  PqOptions pq;
  if (!node) return pq;
  for (const auto& kv : node) {
    std::string key = kv.first.as<std::string>();
    if (key == "m") pq.m = kv.second.as<std::size_t>();
    else if (key == "k") pq.k = kv.second.as<std::size_t>();
    else if (key == "seed") pq.seed = kv.second.as<std::uint64_t>();
    else config_fail_at(kv.first, "unknown pq key '" + key + "'");
  }
  if (pq.m == 0) config_fail_at(node, "pq m must be >= 1");
  if (pq.k == 0 || pq.k > 256) config_fail_at(node, "pq k must be in [1,256]");
  return pq;
}

inline FewshotOptions parse_fewshot(const YAML::Node& node) {
  FewshotOptions f;
  if (!node) return f;
  for (const auto& kv : node) {
    std::string key = kv.first.as<std::string>();
    if (key == "count") {
      f.count = kv.second.as<int>();
      if (f.count <= 0) config_fail_at(kv.second, "fewshot count must be >= 1");
    } else if (key == "path") f.path = kv.second.as<std::string>();
    else config_fail_at(kv.first, "unknown fewshot key '" + key + "'");
  }
  return f;
}

}  // namespace detail

inline ExperimentGrid parse_experiment_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    detail::config_fail("line " + std::to_string(e.mark.line + 1) +
                        ", column " + std::to_string(e.mark.column + 1) +
                        ": " + e.msg);
  }
  if (!root.IsMap()) detail::config_fail("config root must be a mapping");

  static const std::set<std::string> known_keys = {
      "name",    "dataset",     "template", "knowledge", "backend",
      "metrics", "repetitions", "axes",     "embedding", "probe",
      "pq",      "chunk_overlap", "fewshot"};
  for (const auto& kv : root) {
    std::string key = kv.first.as<std::string>();
    if (!known_keys.count(key)) {
      detail::config_fail_at(kv.first, "unknown top-level key '" + key + "'");
    }
  }

  ExperimentGrid grid;
  if (!root["name"]) detail::config_fail("missing required key 'name'");
  grid.name = root["name"].as<std::string>();
  if (grid.name.empty()) detail::config_fail("'name' must be non-empty");
  if (!root["dataset"]) detail::config_fail("missing required key 'dataset'");
  grid.dataset_path = root["dataset"].as<std::string>();
  if (!root["template"]) detail::config_fail("missing required key 'template'");
  grid.prompt_template = root["template"].as<std::string>();
  if (grid.prompt_template.find("{query}") == std::string::npos) {
    detail::config_fail("template must contain the {query} placeholder");
  }

  if (root["knowledge"]) {
    const auto& node = root["knowledge"];
    if (node.IsScalar()) grid.knowledge_paths.push_back(node.as<std::string>());
    else if (node.IsSequence()) {
      for (const auto& item : node) {
        grid.knowledge_paths.push_back(item.as<std::string>());
      }
    } else detail::config_fail_at(node, "knowledge must be a path or list of paths");
  }

  grid.backend = detail::parse_backend(root["backend"]);
  grid.embedding = detail::parse_embedding(root["embedding"]);
  grid.probe = detail::parse_probe(root["probe"]);
  grid.pq = detail::parse_pq(root["pq"]);
  grid.fewshot = detail::parse_fewshot(root["fewshot"]);

  if (root["chunk_overlap"]) {
    long overlap = root["chunk_overlap"].as<long>();
    if (overlap < 0) detail::config_fail("chunk_overlap must be >= 0");
    grid.chunk_overlap = static_cast<std::size_t>(overlap);
  }

  if (!root["metrics"] || !root["metrics"].IsSequence()) {
    detail::config_fail("missing required list 'metrics'");
  }
  static const std::set<std::string> known_metrics = {
      "mae", "specificity", "f1_macro", "f1_micro", "valid_answer_rate"};
  for (const auto& m : root["metrics"]) {
    std::string name = m.as<std::string>();
    if (!known_metrics.count(name)) {
      detail::config_fail_at(m, "unknown metric '" + name + "'");
    }
    if (std::find(grid.metrics.begin(), grid.metrics.end(), name) !=
        grid.metrics.end()) {
      detail::config_fail_at(m, "duplicate metric '" + name + "'");
    }
    grid.metrics.push_back(name);
  }
  if (grid.metrics.empty()) detail::config_fail("metrics list must be non-empty");

  if (root["repetitions"]) {
    grid.repetitions = root["repetitions"].as<int>();
    if (grid.repetitions <= 0) {
      detail::config_fail("repetitions must be a positive integer");
    }
  }

  if (root["axes"]) {
    const auto& axes = root["axes"];
    if (!axes.IsMap()) detail::config_fail_at(axes, "axes must be a mapping");
    for (const auto& kv : axes) {
      AxisValues axis;
      axis.name = kv.first.as<std::string>();
      if (!detail::is_canonical_axis(axis.name)) {
        detail::config_fail_at(kv.first, "unknown axis '" + axis.name + "'");
      }
      for (const auto& existing : grid.axes) {
        if (existing.name == axis.name) {
          detail::config_fail_at(kv.first, "duplicate axis '" + axis.name + "'");
        }
      }
      if (!kv.second.IsSequence()) {
        detail::config_fail_at(kv.second, "axis " + axis.name +
                                              " must list its values");
      }
      std::set<std::string> seen;
      for (const auto& v : kv.second) {
        std::string value = v.as<std::string>();
        if (!seen.insert(value).second) {
          detail::config_fail_at(v, "duplicate value '" + value +
                                        "' in axis " + axis.name);
        }
        axis.values.push_back(value);
      }
      if (axis.values.empty()) {
        detail::config_fail_at(kv.second, "axis " + axis.name + " is empty");
      }
      if (axis.name == "top_k" || axis.name == "chunk_size") {
        detail::check_positive_int_axis(axis.name, axis.values, kv.second);
      }
      if (axis.name == "embedding_quantization") {
        for (const auto& v : axis.values) {
          if (v != "no" && v != "sq" && v != "pq") {
            detail::config_fail_at(kv.second,
                                   "invalid embedding_quantization '" + v +
                                       "' (expected no, sq or pq)");
          }
        }
      }
      if (axis.name == "prompting_mode") {
        for (const auto& v : axis.values) {
          if (v != "rag" && v != "fewshot" && v != "plain") {
            detail::config_fail_at(kv.second, "invalid prompting_mode '" + v +
                                                  "' (expected rag, fewshot or plain)");
          }
        }
      }
      grid.axes.push_back(std::move(axis));
    }
  }
  // Unlisted axes become single-point sentinels, appended in canonical order
  // after the declared ones so declared axes keep their precedence.
  for (const char* name : kAxisNames) {
    bool present = false;
    for (const auto& a : grid.axes) {
      if (a.name == name) present = true;
    }
    if (!present) grid.axes.push_back({name, {kUnsetValue}});
  }
  return grid;
}

inline ExperimentGrid load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_text_file(path));
}

// Canonical JSON of what makes a run distinct; hashing it yields the run_id.
inline std::string canonical_run_key(const std::string& grid_name,
                                     const std::map<std::string, std::string>& bound,
                                     int repetition) {
  nlohmann::json j;
  j["grid"] = grid_name;
  j["bound"] = bound;  // std::map serializes sorted by key
  j["repetition"] = repetition;
  return j.dump();
}

inline std::vector<RunSpec> expand_grid(const ExperimentGrid& grid) {
  std::vector<RunSpec> specs;
  std::size_t total = static_cast<std::size_t>(grid.repetitions);
  for (const auto& axis : grid.axes) total *= axis.values.size();
  specs.reserve(total);

  // Odometer over (axes in declaration order, repetition innermost).
  std::vector<std::size_t> pos(grid.axes.size(), 0);
  for (std::size_t step = 0; step < total; ++step) {
    int repetition = static_cast<int>(step % grid.repetitions);
    RunSpec spec;
    spec.grid_name = grid.name;
    spec.repetition = repetition;
    for (std::size_t a = 0; a < grid.axes.size(); ++a) {
      spec.bound[grid.axes[a].name] = grid.axes[a].values[pos[a]];
    }
    spec.dataset_path = grid.dataset_path;
    spec.prompt_template = grid.prompt_template;
    spec.knowledge_paths = grid.knowledge_paths;
    spec.backend = grid.backend;
    spec.metrics = grid.metrics;
    spec.run_id =
        content_id128(canonical_run_key(grid.name, spec.bound, repetition));
    specs.push_back(std::move(spec));

    // Advance: repetition first, then the last axis, backwards.
    if (repetition + 1 < grid.repetitions) continue;
    for (std::size_t a = grid.axes.size(); a-- > 0;) {
      if (++pos[a] < grid.axes[a].values.size()) break;
      pos[a] = 0;
    }
  }
  return specs;
}

// The model string a backend sees: the model axis, with the quantization axis
// appended when it is bound.
inline std::string effective_model(const std::map<std::string, std::string>& bound,
                                   const std::string& fallback) {
  auto it = bound.find("model");
  std::string model =
      it != bound.end() && it->second != kUnsetValue ? it->second : fallback;
  auto q = bound.find("model_quantization");
  if (q != bound.end() && q->second != kUnsetValue) {
    model += "_" + q->second;
  }
  return model;
}

}  // namespace cebench
