#include "dnp/llm.hpp"

#include <algorithm>
#include <cctype>
#include <thread>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "support/fixture_env.hpp"

using namespace dnp::llm;
using nlohmann::json;

namespace {

CompletionRequest make_request(const std::string& prompt = "p") {
  CompletionRequest req;
  req.model_name = "m";
  req.prompt = prompt;
  return req;
}

}  // namespace

TEST_CASE("validate_request enforces sampling ranges") {
  CHECK_NOTHROW(validate_request(make_request()));

  auto req = make_request();
  req.temperature = 0.0;
  CHECK_NOTHROW(validate_request(req));
  req.temperature = 2.0;
  CHECK_NOTHROW(validate_request(req));
  req.temperature = -0.1;
  CHECK_THROWS_AS(validate_request(req), std::invalid_argument);
  req.temperature = 2.1;
  CHECK_THROWS_AS(validate_request(req), std::invalid_argument);

  req = make_request();
  req.top_p = 0.0;
  CHECK_THROWS_AS(validate_request(req), std::invalid_argument);
  req.top_p = 1.1;
  CHECK_THROWS_AS(validate_request(req), std::invalid_argument);

  req = make_request();
  req.max_tokens = 0;
  CHECK_THROWS_AS(validate_request(req), std::invalid_argument);
  req.max_tokens = 1;
  CHECK_NOTHROW(validate_request(req));
}

TEST_CASE("cache_key is a stable content address") {
  auto req = make_request();
  std::string key = cache_key(req);
  CHECK(key.size() == 64);
  CHECK(std::all_of(key.begin(), key.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c)) || (c >= 'a' && c <= 'f');
  }));
  CHECK(key == cache_key(req));

  // pinned vector: sha256 of "v1" + 0x1f-joined model, %.17g temperature and
  // top_p, max_tokens, trial_index, prompt (defaults 0.3 / 1.0 / 512 / 0)
  CHECK(key == "8efedf273259e1cc79a143cef7621375f3f73db116499c44a7c8d1fc08e10381");

  auto changed = req;
  changed.model_name = "m2";
  CHECK(cache_key(changed) != key);
  changed = req;
  changed.temperature = 0.7;
  CHECK(cache_key(changed) != key);
  changed = req;
  changed.top_p = 0.9;
  CHECK(cache_key(changed) != key);
  changed = req;
  changed.max_tokens = 256;
  CHECK(cache_key(changed) != key);
  changed = req;
  changed.trial_index = 1;
  CHECK(cache_key(changed) != key);
  changed = req;
  changed.prompt = "p2";
  CHECK(cache_key(changed) != key);
}

TEST_CASE("completion records roundtrip through their line form") {
  auto req = make_request("What is 2 + 2?\nAnswer in SQL.");
  req.trial_index = 3;
  CompletionRecord record = make_record(req, "SQL: SELECT 4", TokenUsage{12, 5});

  CompletionRecord back = record_from_line(record_to_line(record), 1);
  CHECK(back.key == record.key);
  CHECK(back.model_name == "m");
  CHECK(back.trial_index == 3);
  CHECK(back.prompt == req.prompt);
  CHECK(back.response == "SQL: SELECT 4");
  CHECK(back.created_at == record.created_at);
  REQUIRE(back.token_usage.has_value());
  CHECK(*back.token_usage == TokenUsage{12, 5});

  CompletionRecord no_usage = make_record(req, "r");
  CHECK(!record_from_line(record_to_line(no_usage), 1).token_usage.has_value());
}

TEST_CASE("record_from_line rejects damage") {
  CHECK_THROWS_AS(record_from_line("{ bad json", 4), MalformedRecord);
  CHECK_THROWS_AS(record_from_line("[1, 2]", 4), MalformedRecord);
  CHECK_THROWS_AS(record_from_line(R"({"key": "k"})", 4), MalformedRecord);

  // a tampered response no longer matches the stored key
  CompletionRecord record = make_record(make_request(), "original");
  json j = json::parse(record_to_line(record));
  j["response"] = "edited";
  CHECK_NOTHROW(record_from_line(j.dump(), 1));  // response is not part of the key
  j["prompt"] = "edited";
  try {
    record_from_line(j.dump(), 7);
    FAIL("expected MalformedRecord");
  } catch (const MalformedRecord& e) {
    CHECK(e.line == 7);
    CHECK(std::string(e.what()).find("stored key") != std::string::npos);
  }
}

TEST_CASE("load_replay keeps the last record for duplicate keys") {
  auto dir = fixture::fresh_dir("replay");
  auto path = dir / "cache.jsonl";

  auto req_a = make_request("prompt a");
  auto req_b = make_request("prompt b");
  std::string lines = record_to_line(make_record(req_a, "first")) + "\n";
  lines += record_to_line(make_record(req_b, "other")) + "\n";
  lines += "\n";
  lines += record_to_line(make_record(req_a, "second")) + "\n";
  fixture::write_file(path, lines);

  std::vector<std::string> warnings;
  auto replay = load_replay(path, [&](const std::string& w) { warnings.push_back(w); });
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("duplicate key") != std::string::npos);
  CHECK(replay->records().size() == 2);
  CHECK(replay->complete(req_a) == "second");
  CHECK(replay->complete(req_b) == "other");

  CHECK_THROWS_AS(replay->complete(make_request("prompt c")), CacheMiss);
  CHECK_THROWS_AS(load_replay(dir / "missing.jsonl"), MalformedRecord);

  fixture::write_file(path, "not json\n");
  CHECK_THROWS_AS(load_replay(path), MalformedRecord);
}

TEST_CASE("mock rules apply in insertion order") {
  MockBackend mock;
  mock.add_contains_rule("singer", "about singers");
  mock.add_contains_rule("singer names", "never reached");
  mock.add_contains_rule("pets", "about pets");

  CHECK(mock.complete(make_request("list singer names")) == "about singers");
  CHECK(mock.complete(make_request("count pets")) == "about pets");
  CHECK(mock.calls() == 2);

  CHECK_THROWS_AS(mock.complete(make_request("stadiums")), EndpointError);
  mock.set_fallback("fallback");
  CHECK(mock.complete(make_request("stadiums")) == "fallback");

  try {
    MockBackend strict;
    strict.complete(make_request("anything"));
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    CHECK(e.status == 0);
  }

  auto bad = make_request();
  bad.max_tokens = 0;
  CHECK_THROWS_AS(mock.complete(bad), std::invalid_argument);
}

TEST_CASE("mock rules can inspect the full request") {
  MockBackend mock;
  mock.add_rule([](const CompletionRequest& req) -> std::optional<std::string> {
    if (req.trial_index == 1) return "trial one";
    return std::nullopt;
  });
  mock.set_fallback("other trials");

  auto req = make_request();
  CHECK(mock.complete(req) == "other trials");
  req.trial_index = 1;
  CHECK(mock.complete(req) == "trial one");
}

TEST_CASE("load_mock_script wires rules, default, and the echo rule") {
  auto dir = fixture::fresh_dir("mockscript");
  auto path = dir / "script.json";
  fixture::write_file(path, R"({
    "rules": [{"contains": "singers", "response": "SQL: SELECT count(*) FROM singer"}],
    "default": "SQL: SELECT 1",
    "echo_initial_sql": true
  })");

  auto mock = load_mock_script(path);
  CHECK(mock->complete(make_request("How many singers?")) ==
        "SQL: SELECT count(*) FROM singer");
  CHECK(mock->complete(make_request("something else")) == "SQL: SELECT 1");
  CHECK(mock->complete(make_request(
            "### Task\nschema\nQuestion: q\nInitial SQL: SELECT name FROM singer\nCheck it.\n")) ==
        "Final SQL: SELECT name FROM singer");

  fixture::write_file(path, R"({"rules": [{"contains": "x"}]})");
  CHECK_THROWS_AS(load_mock_script(path), MalformedRecord);
  CHECK_THROWS_AS(load_mock_script(dir / "absent.json"), MalformedRecord);
}

TEST_CASE("concurrency limiter holds the cap under load") {
  auto mock = std::make_shared<MockBackend>();
  mock->set_fallback("ok");
  mock->set_delay(std::chrono::milliseconds(20));
  ConcurrencyLimited limited(mock, 2);

  std::vector<std::thread> threads;
  std::atomic<int> successes{0};
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&, i] {
      if (limited.complete(make_request("prompt " + std::to_string(i))) == "ok")
        successes.fetch_add(1);
    });
  for (auto& t : threads) t.join();

  CHECK(successes.load() == 8);
  CHECK(mock->calls() == 8);
  CHECK(mock->max_concurrent() <= 2);
  CHECK(mock->max_concurrent() >= 1);

  CHECK_THROWS_AS(ConcurrencyLimited(mock, 0), std::invalid_argument);
}

TEST_CASE("recorded runs replay byte for byte") {
  auto dir = fixture::fresh_dir("recording");
  auto path = dir / "cache.jsonl";

  auto mock = std::make_shared<MockBackend>();
  mock->add_contains_rule("alpha", "response alpha");
  mock->add_contains_rule("beta", "response beta");
  RecordingBackend recorder(mock, path);

  auto req_a = make_request("alpha");
  auto req_b = make_request("beta");
  auto req_a2 = make_request("alpha");
  req_a2.trial_index = 1;
  CHECK(recorder.complete(req_a) == "response alpha");
  CHECK(recorder.complete(req_b) == "response beta");
  CHECK(recorder.complete(req_a2) == "response alpha");

  auto replay = load_replay(path);
  CHECK(replay->records().size() == 3);
  CHECK(replay->complete(req_a) == "response alpha");
  CHECK(replay->complete(req_b) == "response beta");
  CHECK(replay->complete(req_a2) == "response alpha");

  // a second recording session appends instead of truncating
  RecordingBackend again(mock, path);
  auto req_c = make_request("beta variant");
  CHECK(again.complete(req_c) == "response beta");
  CHECK(load_replay(path)->records().size() == 4);
}

namespace {

struct PostCapture {
  std::string path;
  json body;
  std::vector<std::pair<std::string, std::string>> headers;
};

LiveConfig test_config(std::vector<int64_t>* sleeps = nullptr) {
  LiveConfig cfg;
  cfg.api_key = "sk-test";
  cfg.sleeper = [sleeps](std::chrono::milliseconds d) {
    if (sleeps) sleeps->push_back(d.count());
  };
  return cfg;
}

std::string chat_body(const std::string& content) {
  json j;
  j["choices"] = json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}});
  return j.dump();
}

}  // namespace

TEST_CASE("live backend sends a chat completion request") {
  PostCapture seen;
  LiveBackend backend(test_config(), [&](const std::string& path, const std::string& body,
                                         const auto& headers) -> std::optional<HttpResponse> {
    seen = PostCapture{path, json::parse(body), headers};
    return HttpResponse{200, chat_body("SQL: SELECT 1")};
  });

  auto req = make_request("How many singers?");
  req.temperature = 0.7;
  req.max_tokens = 128;
  CHECK(backend.complete(req) == "SQL: SELECT 1");

  CHECK(seen.path == "/v1/chat/completions");
  CHECK(seen.body["model"] == "m");
  CHECK(seen.body["temperature"] == 0.7);
  CHECK(seen.body["top_p"] == 1.0);
  CHECK(seen.body["max_tokens"] == 128);
  REQUIRE(seen.body["messages"].size() == 1);
  CHECK(seen.body["messages"][0]["role"] == "user");
  CHECK(seen.body["messages"][0]["content"] == "How many singers?");

  bool authorized = false;
  for (const auto& [k, v] : seen.headers)
    if (k == "Authorization" && v == "Bearer sk-test") authorized = true;
  CHECK(authorized);
}

TEST_CASE("live backend omits authorization without a key") {
  size_t header_count = 99;
  LiveConfig cfg = test_config();
  cfg.api_key.clear();
  LiveBackend backend(cfg, [&](const std::string&, const std::string&,
                               const auto& headers) -> std::optional<HttpResponse> {
    header_count = headers.size();
    return HttpResponse{200, chat_body("ok")};
  });
  CHECK(backend.complete(make_request()) == "ok");
  CHECK(header_count == 0);
}

TEST_CASE("live backend retries throttling with doubling backoff") {
  std::vector<int64_t> sleeps;
  int attempts = 0;
  LiveBackend backend(test_config(&sleeps),
                      [&](const std::string&, const std::string&,
                          const auto&) -> std::optional<HttpResponse> {
                        ++attempts;
                        if (attempts <= 2) return HttpResponse{429, "slow down"};
                        return HttpResponse{200, chat_body("recovered")};
                      });
  CHECK(backend.complete(make_request()) == "recovered");
  CHECK(attempts == 3);
  CHECK(sleeps == std::vector<int64_t>{1000, 2000});
}

TEST_CASE("live backend fails fast on client errors") {
  std::vector<int64_t> sleeps;
  int attempts = 0;
  LiveBackend backend(test_config(&sleeps),
                      [&](const std::string&, const std::string&,
                          const auto&) -> std::optional<HttpResponse> {
                        ++attempts;
                        return HttpResponse{404, "no such model"};
                      });
  try {
    backend.complete(make_request());
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    CHECK(e.status == 404);
    CHECK(e.body == "no such model");
  }
  CHECK(attempts == 1);
  CHECK(sleeps.empty());
}

TEST_CASE("live backend gives up after repeated server errors") {
  std::vector<int64_t> sleeps;
  int attempts = 0;
  LiveBackend backend(test_config(&sleeps),
                      [&](const std::string&, const std::string&,
                          const auto&) -> std::optional<HttpResponse> {
                        ++attempts;
                        return HttpResponse{500, "boom"};
                      });
  try {
    backend.complete(make_request());
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    CHECK(e.status == 500);
  }
  CHECK(attempts == 5);
  CHECK(sleeps == std::vector<int64_t>{1000, 2000, 4000, 8000});
}

TEST_CASE("live backend reports transport silence as a timeout") {
  std::vector<int64_t> sleeps;
  int attempts = 0;
  LiveBackend backend(test_config(&sleeps),
                      [&](const std::string&, const std::string&,
                          const auto&) -> std::optional<HttpResponse> {
                        ++attempts;
                        return std::nullopt;
                      });
  CHECK_THROWS_AS(backend.complete(make_request()), Timeout);
  CHECK(attempts == 5);
  CHECK(sleeps.size() == 4);
}

TEST_CASE("live backend rejects unparseable success bodies") {
  LiveBackend backend(test_config(), [&](const std::string&, const std::string&,
                                         const auto&) -> std::optional<HttpResponse> {
    return HttpResponse{200, "not json"};
  });
  try {
    backend.complete(make_request());
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    CHECK(std::string(e.what()).find("unparseable response") != std::string::npos);
  }
}
