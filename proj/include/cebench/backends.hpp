#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cebench/corpus.hpp"
#include "cebench/hash.hpp"
#include "cebench/http_client.hpp"
#include "cebench/jsonl.hpp"

namespace cebench {

struct BackendDescriptor {
  enum class Kind { modelhub_http, openai_http, mock_replay };
  Kind kind = Kind::mock_replay;
  std::string base_url;
  std::string fixture_path;
  std::string model;
  double temperature = 0.0;
  int max_tokens = 0;  // 0 = backend default
  double timeout_s = 120.0;
  int retries = 2;
  double retry_backoff_s = 1.0;
  std::string auth_header = "Authorization";
};

inline std::string to_string(BackendDescriptor::Kind k) {
  switch (k) {
    case BackendDescriptor::Kind::modelhub_http: return "modelhub_http";
    case BackendDescriptor::Kind::openai_http: return "openai_http";
    case BackendDescriptor::Kind::mock_replay: return "mock_replay";
  }
  return "mock_replay";
}

inline BackendDescriptor::Kind backend_kind_from_string(std::string_view s) {
  if (s == "modelhub_http") return BackendDescriptor::Kind::modelhub_http;
  if (s == "openai_http") return BackendDescriptor::Kind::openai_http;
  if (s == "mock_replay") return BackendDescriptor::Kind::mock_replay;
  throw std::runtime_error("unknown backend kind: " + std::string(s));
}

struct GenerationResult {
  std::string text;
  long tokens_in = 0;
  long tokens_out = 0;
  double latency_s = 0.0;
  bool token_counts_exact = false;
};

inline long approx_token_count(std::string_view text) {
  return static_cast<long>((utf8_length(text) + 3) / 4);
}

// ---- Prompt assembly -------------------------------------------------------

inline std::string build_rag_prompt(const std::string& tmpl,
                                    const PromptRecord& record,
                                    const std::vector<Chunk>& retrieved) {
  if (tmpl.find("{query}") == std::string::npos ||
      tmpl.find("{context}") == std::string::npos) {
    throw std::invalid_argument(
        "rag template needs both {query} and {context} placeholders");
  }
  std::string context;
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    if (i > 0) context += "\n\n";
    context += retrieved[i].text;
  }
  return render_template(tmpl, record.query, context);
}

inline std::string build_fewshot_prompt(
    const std::string& tmpl, const PromptRecord& record,
    const std::vector<std::pair<std::string, std::string>>& shots) {
  if (tmpl.find("{query}") == std::string::npos) {
    throw std::invalid_argument("template is missing the {query} placeholder");
  }
  if (shots.empty()) {
    throw std::invalid_argument("few-shot prompting needs at least one shot");
  }
  std::string out;
  for (const auto& [q, a] : shots) {
    out += "Q: " + q + "\nA: " + a + "\n\n";
  }
  out += render_template(tmpl, record.query, std::nullopt);
  return out;
}

// ---- Mock replay -----------------------------------------------------------

struct MockFixtureEntry {
  std::string response;
  double latency_ms = 0.0;
  long tokens_in = 0;
  long tokens_out = 0;
};

namespace detail {

struct MockFixtureCache {
  std::mutex mu;
  std::map<std::string, std::map<std::string, MockFixtureEntry>> by_path;
};

inline MockFixtureCache& mock_cache() {
  static MockFixtureCache cache;
  return cache;
}

inline const std::map<std::string, MockFixtureEntry>& mock_fixture(
    const std::string& path) {
  auto& cache = mock_cache();
  std::scoped_lock lock(cache.mu);
  auto it = cache.by_path.find(path);
  if (it != cache.by_path.end()) return it->second;
  std::map<std::string, MockFixtureEntry> table;
  auto file = read_jsonl(path);
  for (const auto& row : file.rows) {
    MockFixtureEntry e;
    e.response = row.at("response").get<std::string>();
    e.latency_ms = row.at("latency_ms").get<double>();
    e.tokens_in = row.value("tokens_in", 0l);
    e.tokens_out = row.value("tokens_out", 0l);
    table[row.at("prompt_sha256").get<std::string>()] = std::move(e);
  }
  return cache.by_path.emplace(path, std::move(table)).first->second;
}

}  // namespace detail

// Counts real fixture lookups; lets tests prove that resumed runs replay
// nothing.
inline std::atomic<long>& mock_generate_calls() {
  static std::atomic<long> calls{0};
  return calls;
}

// ---- Generation ------------------------------------------------------------

inline std::string backend_api_key_env_var(BackendDescriptor::Kind kind) {
  std::string name = "CEBENCH_API_KEY_" + to_string(kind);
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  return name;
}

namespace detail {

inline std::map<std::string, std::string> auth_headers(
    const BackendDescriptor& backend) {
  std::map<std::string, std::string> headers;
  const char* key = std::getenv(backend_api_key_env_var(backend.kind).c_str());
  if (key && *key) {
    std::string value = key;
    if (backend.auth_header == "Authorization") value = "Bearer " + value;
    headers[backend.auth_header] = value;
  }
  return headers;
}

// Retries transport failures, 429 and 5xx with fixed backoff; other HTTP
// errors fail immediately.
inline nlohmann::json post_with_retries(const BackendDescriptor& backend,
                                        const std::string& path,
                                        const nlohmann::json& body) {
  std::string last_error;
  for (int attempt = 0; attempt <= backend.retries; ++attempt) {
    if (attempt > 0 && backend.retry_backoff_s > 0) {
      std::this_thread::sleep_for(
          std::chrono::duration<double>(backend.retry_backoff_s));
    }
    HttpResponse res = http_post_json(backend.base_url, path, body,
                                      auth_headers(backend), backend.timeout_s);
    if (!res.transport_error.empty()) {
      last_error = "transport error: " + res.transport_error;
      continue;
    }
    if (res.status == 429 || res.status >= 500) {
      last_error = "HTTP " + std::to_string(res.status);
      continue;
    }
    if (res.status != 200) {
      throw std::runtime_error("backend returned HTTP " +
                               std::to_string(res.status));
    }
    try {
      return nlohmann::json::parse(res.body);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(std::string("unparseable backend response: ") +
                               e.what());
    }
  }
  throw std::runtime_error("backend unreachable after " +
                           std::to_string(backend.retries + 1) +
                           " attempts (" + last_error + ")");
}

inline GenerationResult generate_modelhub(const BackendDescriptor& backend,
                                          const std::string& prompt) {
  nlohmann::json body = {
      {"model", backend.model}, {"prompt", prompt}, {"stream", false}};
  if (backend.temperature != 0.0 || backend.max_tokens > 0) {
    nlohmann::json options;
    options["temperature"] = backend.temperature;
    if (backend.max_tokens > 0) options["num_predict"] = backend.max_tokens;
    body["options"] = options;
  }
  auto t0 = std::chrono::steady_clock::now();
  nlohmann::json res = post_with_retries(backend, "/api/generate", body);
  auto t1 = std::chrono::steady_clock::now();
  GenerationResult out;
  out.text = res.value("response", "");
  out.latency_s = std::chrono::duration<double>(t1 - t0).count();
  if (res.contains("prompt_eval_count") && res.contains("eval_count")) {
    out.tokens_in = res.at("prompt_eval_count").get<long>();
    out.tokens_out = res.at("eval_count").get<long>();
    out.token_counts_exact = true;
  } else {
    out.tokens_in = approx_token_count(prompt);
    out.tokens_out = approx_token_count(out.text);
  }
  return out;
}

inline GenerationResult generate_openai(const BackendDescriptor& backend,
                                        const std::string& prompt) {
  nlohmann::json body = {
      {"model", backend.model},
      {"messages", nlohmann::json::array(
                       {{{"role", "user"}, {"content", prompt}}})},
      {"temperature", backend.temperature}};
  if (backend.max_tokens > 0) body["max_tokens"] = backend.max_tokens;
  auto t0 = std::chrono::steady_clock::now();
  nlohmann::json res = post_with_retries(backend, "/v1/chat/completions", body);
  auto t1 = std::chrono::steady_clock::now();
  GenerationResult out;
  out.text = res.at("choices").at(0).at("message").at("content")
                 .get<std::string>();
  out.latency_s = std::chrono::duration<double>(t1 - t0).count();
  if (res.contains("usage")) {
    const auto& usage = res.at("usage");
    out.tokens_in = usage.at("prompt_tokens").get<long>();
    out.tokens_out = usage.at("completion_tokens").get<long>();
    out.token_counts_exact = true;
  } else {
    out.tokens_in = approx_token_count(prompt);
    out.tokens_out = approx_token_count(out.text);
  }
  return out;
}

inline GenerationResult generate_mock(const BackendDescriptor& backend,
                                      const std::string& prompt) {
  const auto& table = mock_fixture(backend.fixture_path);
  auto it = table.find(sha256_hex(prompt));
  if (it == table.end()) {
    throw std::runtime_error("unrecorded prompt (sha256 " +
                             sha256_hex(prompt).substr(0, 12) +
                             "...) not in fixture " + backend.fixture_path);
  }
  mock_generate_calls().fetch_add(1, std::memory_order_relaxed);
  const MockFixtureEntry& e = it->second;
  // Sleep keeps wall-clock behavior realistic; the reported latency is the
  // recorded one so replays are deterministic.
  std::this_thread::sleep_for(
      std::chrono::duration<double>(e.latency_ms / 1000.0));
  GenerationResult out;
  out.text = e.response;
  out.latency_s = e.latency_ms / 1000.0;
  out.tokens_in = e.tokens_in > 0 ? e.tokens_in : approx_token_count(prompt);
  out.tokens_out =
      e.tokens_out > 0 ? e.tokens_out : approx_token_count(e.response);
  out.token_counts_exact = true;
  return out;
}

}  // namespace detail

inline GenerationResult generate(const BackendDescriptor& backend,
                                 const std::string& prompt) {
  if (backend.timeout_s <= 0) {
    throw std::invalid_argument("backend timeout must be > 0");
  }
  switch (backend.kind) {
    case BackendDescriptor::Kind::modelhub_http:
      return detail::generate_modelhub(backend, prompt);
    case BackendDescriptor::Kind::openai_http:
      return detail::generate_openai(backend, prompt);
    case BackendDescriptor::Kind::mock_replay:
      return detail::generate_mock(backend, prompt);
  }
  throw std::logic_error("unhandled backend kind");
}

}  // namespace cebench
