#include "cebench/monitor.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <chrono>
#include <thread>

#include "testutil.hpp"

using namespace cebench;
using nlohmann::json;

namespace {

RunRecord make_record(const std::string& run_id, const std::string& pid,
                      double e2e, double llm, long tin, long tout,
                      std::optional<int> score,
                      std::optional<std::string> error = std::nullopt) {
  RunRecord r;
  r.run_id = run_id;
  r.prompt_id = pid;
  r.latency_end_to_end = e2e;
  r.latency_llm = llm;
  r.tokens_in = tin;
  r.tokens_out = tout;
  r.response_text = "resp";
  r.extracted_prediction.kind = Prediction::Kind::score;
  r.extracted_prediction.score = score;
  r.error = std::move(error);
  return r;
}

}  // namespace

TEST_CASE("run records round-trip through jsonl") {
  testutil::TempDir tmp("monitor-log");
  std::string path = tmp.file("run.jsonl");
  auto a = make_record("r1", "p1", 1.5, 1.2, 10, 3, 7);
  auto b = make_record("r1", "p2", 2.0, 1.9, 12, 4, std::nullopt, "backend died");
  {
    JsonlSink sink(path);
    sink.append(a.to_json());
    sink.append(b.to_json());
  }
  auto records = load_run_log(path);
  REQUIRE(records.size() == 2);
  CHECK(records[0].prompt_id == "p1");
  CHECK(records[0].latency_end_to_end == 1.5);
  CHECK(records[0].extracted_prediction.score == 7);
  CHECK_FALSE(records[0].error.has_value());
  REQUIRE(records[1].error.has_value());
  CHECK(*records[1].error == "backend died");
  CHECK_FALSE(records[1].extracted_prediction.valid());
}

TEST_CASE("appending preserves existing rows") {
  testutil::TempDir tmp("monitor-append");
  std::string path = tmp.file("run.jsonl");
  {
    JsonlSink sink(path);
    sink.append(make_record("r1", "p1", 1, 1, 1, 1, 1).to_json());
  }
  {
    JsonlSink sink(path);
    sink.append(make_record("r1", "p2", 1, 1, 1, 1, 2).to_json());
  }
  auto records = load_run_log(path);
  REQUIRE(records.size() == 2);
  CHECK(records[0].prompt_id == "p1");
  CHECK(records[1].prompt_id == "p2");
}

TEST_CASE("a torn final line is dropped, intact rows survive") {
  testutil::TempDir tmp("monitor-torn");
  std::string path = tmp.file("run.jsonl");
  std::string good = make_record("r1", "p1", 1, 1, 1, 1, 1).to_json().dump();
  testutil::write_file(path, good + "\n{\"run_id\": \"r1\", \"promp");
  auto records = load_run_log(path);
  REQUIRE(records.size() == 1);
  CHECK(records[0].prompt_id == "p1");
}

TEST_CASE("trace replay probe reports the recorded peak after draining") {
  testutil::TempDir tmp("monitor-trace");
  std::string path = tmp.file("trace.jsonl");
  // Peak sits in the tail, later than the probe will get in 50ms of runtime.
  testutil::write_file(
      path,
      json{{"t_offset_s", 0.0}, {"gpu_memory_used_bytes", 10737418240ll},
           {"host_memory_used_bytes", 1}}.dump() + "\n" +
          json{{"t_offset_s", 600.0}, {"gpu_memory_used_bytes", 45097156608ll},
               {"host_memory_used_bytes", 1}}.dump() + "\n" +
          json{{"t_offset_s", 1200.0}, {"gpu_memory_used_bytes", 32212254720ll},
               {"host_memory_used_bytes", 1}}.dump() + "\n");
  ProbeDescriptor desc;
  desc.kind = ProbeDescriptor::Kind::trace_replay;
  desc.path = path;
  ResourceProbe probe(desc);
  probe.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  auto result = probe.stop();
  CHECK_FALSE(result.failed);
  REQUIRE(result.peak_gpu_memory().has_value());
  CHECK(*result.peak_gpu_memory() == 45097156608ll);
  CHECK(result.samples.size() == 3);
}

TEST_CASE("missing trace files fail the probe instead of crashing the run") {
  ProbeDescriptor desc;
  desc.kind = ProbeDescriptor::Kind::trace_replay;
  desc.path = "/nonexistent/trace.jsonl";
  ResourceProbe probe(desc);
  probe.start();
  auto result = probe.stop();
  CHECK(result.failed);
  CHECK_FALSE(result.peak_gpu_memory().has_value());
}

TEST_CASE("command probe samples on its interval") {
  ProbeDescriptor desc;
  desc.kind = ProbeDescriptor::Kind::command;
  desc.command = "echo 2048";
  desc.interval_s = 0.1;
  ResourceProbe probe(desc);
  probe.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(1050));
  auto result = probe.stop();
  CHECK_FALSE(result.failed);
  // One second at 0.1s spacing: sample at t=0 plus ~10 more, with scheduler
  // slack tolerated.
  CHECK(result.samples.size() >= 8);
  CHECK(result.samples.size() <= 13);
  REQUIRE(result.peak_gpu_memory().has_value());
  CHECK(*result.peak_gpu_memory() == 2048);
}

TEST_CASE("command probe failure marks the result failed") {
  for (const char* cmd : {"exit 3", "echo not-a-number"}) {
    ProbeDescriptor desc;
    desc.kind = ProbeDescriptor::Kind::command;
    desc.command = cmd;
    desc.interval_s = 0.05;
    ResourceProbe probe(desc);
    probe.start();
    std::this_thread::sleep_for(std::chrono::milliseconds(80));
    auto result = probe.stop();
    CHECK(result.failed);
    CHECK_FALSE(result.peak_gpu_memory().has_value());
  }
}

TEST_CASE("null probe yields no samples and no peak") {
  ResourceProbe probe(ProbeDescriptor{});
  probe.start();
  auto result = probe.stop();
  CHECK_FALSE(result.failed);
  CHECK(result.samples.empty());
  CHECK_FALSE(result.peak_gpu_memory().has_value());
}

TEST_CASE("host memory reads a positive value on this platform") {
  CHECK(host_memory_used_bytes() > 0);
}

TEST_CASE("nearest rank percentile hand cases") {
  std::vector<double> twenty;
  for (int i = 1; i <= 20; ++i) twenty.push_back(i);
  // ceil(0.95*20) = 19th order statistic.
  CHECK(percentile_nearest_rank(twenty, 0.95) == 19.0);
  CHECK(percentile_nearest_rank({4.0, 1.0, 3.0, 2.0}, 0.5) == 2.0);
  CHECK(percentile_nearest_rank({4.0, 1.0}, 1.0) == 4.0);
  CHECK(percentile_nearest_rank({4.0, 1.0}, 0.0) == 1.0);
  CHECK(percentile_nearest_rank({7.5}, 0.95) == 7.5);
  CHECK_THROWS_AS(percentile_nearest_rank({}, 0.5), std::invalid_argument);
}

TEST_CASE("aggregate folds records into a summary") {
  std::vector<RunRecord> records = {
      make_record("r9", "p1", 2.0, 1.8, 100, 10, 5),
      make_record("r9", "p2", 4.0, 3.6, 110, 12, std::nullopt),
      make_record("r9", "p3", 0.0, 0.0, 0, 0, std::nullopt, "timeout"),
  };
  ProbeResult probe;
  ResourceSample s1;
  s1.gpu_memory_used = 777;
  probe.samples.push_back(s1);
  std::map<std::string, double> metrics = {{"mae", 1.25}};
  std::map<std::string, std::string> axes = {{"model", "m"}};

  auto summary = aggregate(records, probe, metrics, axes, 2);
  CHECK(summary.run_id == "r9");
  CHECK(summary.n_prompts == 3);
  CHECK(summary.n_errors == 1);
  CHECK(summary.repetition == 2);
  CHECK(summary.metrics.at("mae") == 1.25);
  // Latency statistics cover non-error records only.
  CHECK(summary.latency_mean == 3.0);
  CHECK(summary.latency_p95 == 4.0);
  CHECK_THAT(summary.latency_llm_mean, Catch::Matchers::WithinAbs(2.7, 1e-12));
  // Token totals and the valid-answer rate cover every record.
  CHECK(summary.tokens_in_total == 210);
  CHECK(summary.tokens_out_total == 22);
  CHECK_THAT(summary.valid_answer_rate,
             Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
  REQUIRE(summary.peak_gpu_memory_bytes.has_value());
  CHECK(*summary.peak_gpu_memory_bytes == 777);

  auto mixed = records;
  mixed[1].run_id = "other";
  CHECK_THROWS_AS(aggregate(mixed, probe, metrics, axes, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(aggregate({}, probe, metrics, axes, 0),
                  std::invalid_argument);
}

TEST_CASE("summaries round-trip through json") {
  RunSummary s;
  s.run_id = "abc";
  s.axes = {{"model", "m1"}, {"top_k", "5"}};
  s.repetition = 1;
  s.n_prompts = 10;
  s.n_errors = 2;
  s.metrics = {{"mae", 2.5}, {"valid_answer_rate", 0.8}};
  s.latency_mean = 1.5;
  s.latency_p95 = 2.25;
  s.latency_llm_mean = 1.4;
  s.peak_gpu_memory_bytes = 5046586573ll;
  s.tokens_in_total = 1000;
  s.tokens_out_total = 50;
  s.valid_answer_rate = 0.8;

  auto j = s.to_json();
  auto back = RunSummary::from_json(j);
  CHECK(back.run_id == s.run_id);
  CHECK(back.axes == s.axes);
  CHECK(back.n_prompts == 10);
  CHECK(back.n_errors == 2);
  CHECK(back.metrics == s.metrics);
  CHECK(back.latency_p95 == 2.25);
  CHECK(back.peak_gpu_memory_bytes == s.peak_gpu_memory_bytes);
  CHECK(back.tokens_in_total == 1000);

  s.peak_gpu_memory_bytes.reset();
  auto back2 = RunSummary::from_json(s.to_json());
  CHECK_FALSE(back2.peak_gpu_memory_bytes.has_value());

  // Sorted-key serialization is what makes summary bytes reproducible.
  CHECK(j.dump(2) == json::parse(j.dump(2)).dump(2));
}

TEST_CASE("probe kind names parse") {
  CHECK(probe_kind_from_string("null") == ProbeDescriptor::Kind::null);
  CHECK(probe_kind_from_string("") == ProbeDescriptor::Kind::null);
  CHECK(probe_kind_from_string("trace_replay") ==
        ProbeDescriptor::Kind::trace_replay);
  CHECK(probe_kind_from_string("command") == ProbeDescriptor::Kind::command);
  CHECK_THROWS(probe_kind_from_string("nvidia"));
}
