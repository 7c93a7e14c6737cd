#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cebench/backends.hpp"
#include "cebench/config.hpp"
#include "cebench/evaluators.hpp"
#include "cebench/monitor.hpp"
#include "cebench/vectorstore.hpp"

namespace cebench {

// Defaults applied when a RAG run leaves retrieval axes unset.
inline constexpr std::size_t kDefaultChunkSize = 1000;
inline constexpr std::size_t kDefaultTopK = 5;

enum class PromptingMode { plain, rag, fewshot };

enum class ExtractorKind { none, score, nli };

inline ExtractorKind extractor_for_metrics(
    const std::vector<std::string>& metrics,
    const std::vector<PromptRecord>& records) {
  bool needs_score = false, needs_nli = false;
  for (const auto& m : metrics) {
    if (m == "mae" || m == "specificity") needs_score = true;
    if (m.rfind("f1", 0) == 0) needs_nli = true;
  }
  if (needs_score && needs_nli) {
    throw ConfigError(
        "metrics mix score extraction (mae/specificity) with nli extraction "
        "(f1_*); split them into separate grids");
  }
  if (needs_score) return ExtractorKind::score;
  if (needs_nli) return ExtractorKind::nli;
  // valid_answer_rate alone: follow the dataset's label kind.
  for (const auto& r : records) {
    if (r.label.kind == Label::Kind::score) return ExtractorKind::score;
    if (r.label.kind == Label::Kind::nli) return ExtractorKind::nli;
  }
  return ExtractorKind::score;
}

struct RunPrompt {
  std::string prompt_id;
  std::string text;
  double prep_seconds = 0.0;  // retrieval + prompt assembly
};

// Shared immutable inputs plus caches reused across the runs of one batch.
class RunContext {
 public:
  explicit RunContext(ExperimentGrid grid) : grid_(std::move(grid)) {}

  const ExperimentGrid& grid() const { return grid_; }

  const std::vector<PromptRecord>& dataset(const std::string& path) {
    std::scoped_lock lock(mu_);
    auto it = datasets_.find(path);
    if (it != datasets_.end()) return it->second;
    auto records = load_dataset(path, dataset_format_from_path(path));
    return datasets_.emplace(path, std::move(records)).first->second;
  }

  // One index per (chunk_size, quantization) pair, built lazily from the
  // grid's knowledge documents.
  const VectorIndex& index(std::size_t chunk_size, QuantMode mode) {
    std::string key = std::to_string(chunk_size) + "|" + to_string(mode);
    std::scoped_lock lock(mu_);
    auto it = indexes_.find(key);
    if (it != indexes_.end()) return it->second;
    if (grid_.knowledge_paths.empty()) {
      throw std::runtime_error("rag prompting needs knowledge paths");
    }
    std::vector<Chunk> chunks;
    for (const auto& path : grid_.knowledge_paths) {
      std::string text = read_text_file(path);
      auto doc_chunks = chunk_document(text, chunk_size, grid_.chunk_overlap, path);
      for (auto& c : doc_chunks) chunks.push_back(std::move(c));
    }
    if (chunks.empty()) {
      throw std::runtime_error("knowledge documents produced no chunks");
    }
    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const auto& c : chunks) texts.push_back(c.text);
    auto vectors = embed(texts, grid_.embedding);
    auto index = build_index(std::move(chunks), vectors, mode, grid_.pq);
    return indexes_.emplace(key, std::move(index)).first->second;
  }

  std::vector<std::pair<std::string, std::string>> fewshot_shots() {
    const std::string path =
        grid_.fewshot.path.empty() ? grid_.dataset_path : grid_.fewshot.path;
    const auto& records = dataset(path);
    std::vector<std::pair<std::string, std::string>> shots;
    for (const auto& r : records) {
      if (static_cast<int>(shots.size()) >= grid_.fewshot.count) break;
      if (r.label.kind == Label::Kind::none) {
        throw std::runtime_error("few-shot example '" + r.id +
                                 "' has no label to show as the answer");
      }
      shots.emplace_back(r.query, r.label.to_display());
    }
    if (shots.empty()) {
      throw std::runtime_error("few-shot prompting found no labeled examples");
    }
    return shots;
  }

 private:
  ExperimentGrid grid_;
  std::mutex mu_;
  std::map<std::string, std::vector<PromptRecord>> datasets_;
  std::map<std::string, VectorIndex> indexes_;
};

namespace detail {

inline std::size_t bound_size_t(const std::map<std::string, std::string>& bound,
                                const std::string& axis, std::size_t fallback) {
  auto it = bound.find(axis);
  if (it == bound.end() || it->second == kUnsetValue) return fallback;
  return static_cast<std::size_t>(std::stoul(it->second));
}

inline PromptingMode prompting_mode_for(const RunSpec& spec,
                                        const ExperimentGrid& grid) {
  auto it = spec.bound.find("prompting_mode");
  std::string mode =
      it == spec.bound.end() ? std::string(kUnsetValue) : it->second;
  if (mode == kUnsetValue) {
    return grid.knowledge_paths.empty() ? PromptingMode::plain
                                        : PromptingMode::rag;
  }
  if (mode == "rag") return PromptingMode::rag;
  if (mode == "fewshot") return PromptingMode::fewshot;
  return PromptingMode::plain;
}

}  // namespace detail

// Builds every prompt for a run before execution starts, timing the
// per-prompt retrieval and assembly work.
inline std::vector<RunPrompt> prepare_prompts(const RunSpec& spec,
                                              RunContext& ctx) {
  const ExperimentGrid& grid = ctx.grid();
  const auto& records = ctx.dataset(spec.dataset_path);
  if (records.empty()) {
    throw ConfigError("dataset is empty: " + spec.dataset_path);
  }
  PromptingMode mode = detail::prompting_mode_for(spec, grid);

  std::vector<RunPrompt> prompts;
  prompts.reserve(records.size());

  if (mode == PromptingMode::rag) {
    std::size_t chunk_size =
        detail::bound_size_t(spec.bound, "chunk_size", kDefaultChunkSize);
    std::size_t top_k = detail::bound_size_t(spec.bound, "top_k", kDefaultTopK);
    auto quant_it = spec.bound.find("embedding_quantization");
    QuantMode quant =
        quant_it == spec.bound.end() || quant_it->second == kUnsetValue
            ? QuantMode::none
            : quant_mode_from_string(quant_it->second);
    const VectorIndex& index = ctx.index(chunk_size, quant);
    std::string tmpl = spec.prompt_template;
    if (tmpl.find("{context}") == std::string::npos) {
      throw ConfigError("rag prompting needs a {context} placeholder");
    }
    for (const auto& r : records) {
      auto t0 = std::chrono::steady_clock::now();
      auto qvec = embed({r.query}, grid.embedding).front();
      auto hits = search_top_k(index, qvec, top_k);
      std::vector<Chunk> retrieved;
      retrieved.reserve(hits.size());
      for (const auto& h : hits) retrieved.push_back(index.chunks[h.ord]);
      RunPrompt p;
      p.prompt_id = r.id;
      p.text = build_rag_prompt(tmpl, r, retrieved);
      p.prep_seconds = std::chrono::duration<double>(
          std::chrono::steady_clock::now() - t0).count();
      prompts.push_back(std::move(p));
    }
    return prompts;
  }

  // Non-retrieval modes render {context} as empty when present.
  std::string tmpl = replace_all(spec.prompt_template, "{context}", "");
  std::vector<std::pair<std::string, std::string>> shots;
  if (mode == PromptingMode::fewshot) shots = ctx.fewshot_shots();
  for (const auto& r : records) {
    auto t0 = std::chrono::steady_clock::now();
    RunPrompt p;
    p.prompt_id = r.id;
    p.text = mode == PromptingMode::fewshot
                 ? build_fewshot_prompt(tmpl, r, shots)
                 : render_template(tmpl, r.query, std::nullopt);
    p.prep_seconds = std::chrono::duration<double>(
        std::chrono::steady_clock::now() - t0).count();
    prompts.push_back(std::move(p));
  }
  return prompts;
}

inline Prediction extract_prediction(ExtractorKind kind,
                                     const std::string& response) {
  Prediction p;
  switch (kind) {
    case ExtractorKind::score: {
      p.kind = Prediction::Kind::score;
      p.score = extract_score(response).value;
      break;
    }
    case ExtractorKind::nli: {
      auto nli = extract_nli_label(response);
      p.kind = Prediction::Kind::nli;
      p.nli = nli.label;
      p.low_confidence = nli.low_confidence;
      break;
    }
    case ExtractorKind::none: break;
  }
  return p;
}

// Pairs predictions with dataset labels and evaluates whatever the grid
// asked for. Metrics that end up undefined on this run are omitted with a
// note rather than faked as zero.
inline std::map<std::string, double> compute_metrics(
    const std::vector<std::string>& metric_names,
    const std::vector<RunRecord>& records,
    const std::vector<PromptRecord>& dataset) {
  std::map<std::string, const Label*> label_by_id;
  for (const auto& r : dataset) label_by_id[r.id] = &r.label;

  std::vector<int> score_preds, score_labels;
  std::size_t score_labeled = 0;
  std::vector<NliPrediction> nli_preds;
  std::vector<NliLabel> nli_labels;
  for (const auto& rec : records) {
    auto it = label_by_id.find(rec.prompt_id);
    if (it == label_by_id.end()) continue;
    const Label& label = *it->second;
    if (label.kind == Label::Kind::score) {
      ++score_labeled;
      if (!rec.error && rec.extracted_prediction.kind == Prediction::Kind::score &&
          rec.extracted_prediction.score) {
        score_preds.push_back(*rec.extracted_prediction.score);
        score_labels.push_back(label.score);
      }
    } else if (label.kind == Label::Kind::nli) {
      NliPrediction pred;
      if (!rec.error && rec.extracted_prediction.kind == Prediction::Kind::nli) {
        pred.label = rec.extracted_prediction.nli;
        pred.low_confidence = rec.extracted_prediction.low_confidence;
      }
      nli_preds.push_back(pred);
      nli_labels.push_back(label.nli);
    }
  }
  if (score_labeled > score_preds.size()) {
    std::fprintf(stderr, "note: %zu of %zu scored prompts had no valid answer\n",
                 score_labeled - score_preds.size(), score_labeled);
  }

  std::map<std::string, double> out;
  std::size_t valid = 0;
  for (const auto& rec : records) {
    if (!rec.error && rec.extracted_prediction.valid()) ++valid;
  }
  for (const auto& name : metric_names) {
    if (name == "mae") {
      if (score_preds.empty()) {
        std::fprintf(stderr, "note: mae undefined on this run (no valid pairs)\n");
        continue;
      }
      out["mae"] = mae(score_preds, score_labels);
    } else if (name == "specificity") {
      if (score_preds.empty()) {
        std::fprintf(stderr,
                     "note: specificity undefined on this run (no valid pairs)\n");
        continue;
      }
      auto spec_value = specificity(score_preds, score_labels);
      if (!spec_value) {
        std::fprintf(stderr,
                     "note: specificity undefined on this run (no negatives)\n");
        continue;
      }
      out["specificity"] = *spec_value;
    } else if (name == "f1_macro" || name == "f1_micro") {
      if (nli_preds.empty()) {
        std::fprintf(stderr, "note: %s undefined on this run (no nli labels)\n",
                     name.c_str());
        continue;
      }
      out[name] = f1(nli_preds, nli_labels,
                     name == "f1_micro" ? F1Averaging::micro : F1Averaging::macro);
    } else if (name == "valid_answer_rate") {
      out["valid_answer_rate"] =
          static_cast<double>(valid) / static_cast<double>(records.size());
    }
  }
  return out;
}

struct RunOutcome {
  std::string run_id;
  bool ok = false;
  std::string error;
  std::size_t n_errors = 0;
};

// Executes one RunSpec end to end: prompt preparation, serial generation
// under a live probe, JSONL logging, metric aggregation, summary write.
inline RunOutcome execute_run(const RunSpec& spec, RunContext& ctx,
                              const std::string& runs_dir) {
  RunOutcome outcome;
  outcome.run_id = spec.run_id;
  const ExperimentGrid& grid = ctx.grid();
  try {
    std::filesystem::create_directories(runs_dir);
    const auto& records = ctx.dataset(spec.dataset_path);
    auto prompts = prepare_prompts(spec, ctx);
    ExtractorKind extractor = extractor_for_metrics(spec.metrics, records);

    BackendDescriptor backend = spec.backend;
    backend.model = effective_model(spec.bound, backend.model);
    const bool simulated =
        backend.kind == BackendDescriptor::Kind::mock_replay;

    // The rendered prompt file is an inspectable artifact of the run.
    {
      std::ofstream pf(runs_dir + "/" + spec.run_id + ".prompts.txt",
                       std::ios::binary | std::ios::trunc);
      for (const auto& p : prompts) {
        pf << escape_newlines(p.text) << '\n';
      }
      if (!pf) throw std::runtime_error("cannot write prompt file");
    }

    const std::string log_path = runs_dir + "/" + spec.run_id + ".jsonl";
    std::filesystem::remove(log_path);  // fresh attempt, append-only within it
    JsonlSink sink(log_path);

    ResourceProbe probe(grid.probe);
    probe.start();
    std::vector<RunRecord> run_records;
    run_records.reserve(prompts.size());
    for (const auto& p : prompts) {
      RunRecord rec;
      rec.run_id = spec.run_id;
      rec.prompt_id = p.prompt_id;
      try {
        GenerationResult gen = generate(backend, p.text);
        rec.response_text = gen.text;
        rec.tokens_in = gen.tokens_in;
        rec.tokens_out = gen.tokens_out;
        rec.latency_llm = gen.latency_s;
        // Replayed latencies are simulated time; adding real prep time to
        // them would mix clocks and break replay determinism.
        rec.latency_end_to_end =
            simulated ? gen.latency_s : gen.latency_s + p.prep_seconds;
        rec.extracted_prediction = extract_prediction(extractor, gen.text);
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
      sink.append(rec.to_json());
      run_records.push_back(std::move(rec));
    }
    ProbeResult probe_result = probe.stop();

    auto metric_values = compute_metrics(spec.metrics, run_records, records);
    RunSummary summary = aggregate(run_records, probe_result, metric_values,
                                   spec.bound, spec.repetition);
    std::ofstream sf(runs_dir + "/" + spec.run_id + ".summary.json",
                     std::ios::binary | std::ios::trunc);
    sf << summary.to_json().dump(2) << '\n';
    if (!sf) throw std::runtime_error("cannot write summary");

    for (const auto& rec : run_records) {
      if (rec.error) ++outcome.n_errors;
    }
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.error = e.what();
  }
  return outcome;
}

// ---- Manifest --------------------------------------------------------------

inline std::string iso8601_utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Everything that makes two configs interchangeable for resume purposes.
inline std::string grid_canonical_json(const ExperimentGrid& grid) {
  nlohmann::json j;
  j["name"] = grid.name;
  j["dataset"] = grid.dataset_path;
  j["template"] = grid.prompt_template;
  j["knowledge"] = grid.knowledge_paths;
  nlohmann::json axes = nlohmann::json::array();
  for (const auto& a : grid.axes) {
    axes.push_back({{"name", a.name}, {"values", a.values}});
  }
  j["axes"] = axes;
  j["backend"] = {{"kind", to_string(grid.backend.kind)},
                  {"base_url", grid.backend.base_url},
                  {"fixture", grid.backend.fixture_path},
                  {"model", grid.backend.model},
                  {"temperature", grid.backend.temperature},
                  {"max_tokens", grid.backend.max_tokens}};
  j["metrics"] = grid.metrics;
  j["repetitions"] = grid.repetitions;
  j["chunk_overlap"] = grid.chunk_overlap;
  j["pq"] = {{"m", grid.pq.m}, {"k", grid.pq.k}, {"seed", grid.pq.seed}};
  j["fewshot"] = {{"count", grid.fewshot.count}, {"path", grid.fewshot.path}};
  return j.dump();
}

struct ManifestEntry {
  std::string run_id;
  std::string status = "pending";  // pending | done | failed
  std::string updated_at;
};

struct RunManifest {
  std::string config_hash;
  std::string grid_name;
  std::vector<ManifestEntry> entries;

  nlohmann::json to_json() const {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& e : entries) {
      runs.push_back({{"run_id", e.run_id},
                      {"status", e.status},
                      {"updated_at", e.updated_at}});
    }
    return {{"config_hash", config_hash},
            {"grid_name", grid_name},
            {"runs", runs}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.grid_name = j.at("grid_name").get<std::string>();
    for (const auto& r : j.at("runs")) {
      ManifestEntry e;
      e.run_id = r.at("run_id").get<std::string>();
      e.status = r.at("status").get<std::string>();
      e.updated_at = r.value("updated_at", "");
      m.entries.push_back(std::move(e));
    }
    return m;
  }
};

inline void save_manifest(const RunManifest& manifest, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << manifest.to_json().dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write manifest: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::optional<RunManifest> load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  nlohmann::json j = nlohmann::json::parse(in);
  return RunManifest::from_json(j);
}

// ---- Batch execution -------------------------------------------------------

struct BatchResult {
  std::size_t n_done = 0;
  std::size_t n_failed = 0;
  std::size_t n_skipped = 0;
  std::vector<RunOutcome> outcomes;
};

inline BatchResult execute_batch(const ExperimentGrid& grid,
                                 const std::string& out_dir, bool resume,
                                 int parallel_runs = 1) {
  auto specs = expand_grid(grid);
  RunContext ctx(grid);
  // Fail before any run if the dataset is unusable.
  if (ctx.dataset(grid.dataset_path).empty()) {
    throw ConfigError("dataset is empty: " + grid.dataset_path);
  }

  std::filesystem::create_directories(out_dir);
  const std::string runs_dir = out_dir + "/runs";
  const std::string manifest_path = out_dir + "/manifest.json";
  const std::string config_hash = content_id128(grid_canonical_json(grid));

  RunManifest manifest;
  bool have_previous = false;
  if (auto previous = load_manifest(manifest_path)) {
    if (previous->config_hash != config_hash) {
      if (resume) {
        throw ConfigError(
            "manifest in " + out_dir +
            " belongs to a different config; refusing to resume");
      }
    } else {
      manifest = *previous;
      have_previous = true;
    }
  }
  if (!have_previous || manifest.entries.size() != specs.size()) {
    manifest = RunManifest{};
    manifest.config_hash = config_hash;
    manifest.grid_name = grid.name;
    for (const auto& spec : specs) {
      manifest.entries.push_back({spec.run_id, "pending", ""});
    }
  }
  save_manifest(manifest, manifest_path);

  BatchResult result;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      {
        std::scoped_lock lock(mu);
        if (resume && manifest.entries[i].status == "done") {
          ++result.n_skipped;
          continue;
        }
      }
      RunOutcome outcome = execute_run(specs[i], ctx, runs_dir);
      std::scoped_lock lock(mu);
      manifest.entries[i].status = outcome.ok ? "done" : "failed";
      manifest.entries[i].updated_at = iso8601_utc_now();
      save_manifest(manifest, manifest_path);
      if (outcome.ok) ++result.n_done;
      else ++result.n_failed;
      result.outcomes.push_back(std::move(outcome));
    }
  };

  int n_threads = std::max(1, parallel_runs);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return result;
}

}  // namespace cebench
