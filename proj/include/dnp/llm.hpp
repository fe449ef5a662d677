#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnp::llm {

struct CompletionRequest {
  std::string model_name;
  std::string prompt;
  double temperature = 0.3;
  double top_p = 1.0;
  int max_tokens = 512;
  int trial_index = 0;  // salts the cache key so trials cache independently
};

/// Throws std::invalid_argument when sampling parameters leave their ranges
/// (0 <= temperature <= 2, 0 < top_p <= 1, max_tokens >= 1).
void validate_request(const CompletionRequest& req);

/// Stable content-addressed key over (model_name, temperature, top_p,
/// max_tokens, trial_index, prompt). SHA-256 hex of a versioned canonical
/// serialization; identical across processes and platforms.
std::string cache_key(const CompletionRequest& req);

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;

  bool operator==(const TokenUsage&) const = default;
};

struct CompletionRecord {
  std::string key;
  std::string model_name;
  double temperature = 0.3;
  double top_p = 1.0;
  int max_tokens = 0;
  int trial_index = 0;
  std::string prompt;
  std::string response;
  std::string created_at;  // ISO-8601 UTC
  std::optional<TokenUsage> token_usage;
};

CompletionRecord make_record(const CompletionRequest& req, const std::string& response,
                             std::optional<TokenUsage> usage = std::nullopt);

/// One cache line: the record as a single-line JSON object.
std::string record_to_line(const CompletionRecord& record);
CompletionRecord record_from_line(const std::string& line, size_t line_number);

struct CacheMiss : std::runtime_error {
  explicit CacheMiss(const std::string& key)
      : std::runtime_error("replay cache has no record for key " + key) {}
};

struct EndpointError : std::runtime_error {
  EndpointError(int status, const std::string& body)
      : std::runtime_error("endpoint error (status " + std::to_string(status) + "): " + body),
        status(status),
        body(body) {}
  int status = 0;
  std::string body;
};

struct Timeout : std::runtime_error {
  explicit Timeout(const std::string& msg) : std::runtime_error(msg) {}
};

struct MalformedRecord : std::runtime_error {
  MalformedRecord(size_t line, const std::string& reason)
      : std::runtime_error("cache line " + std::to_string(line) + ": " + reason), line(line) {}
  size_t line = 0;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const CompletionRequest& req) = 0;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Transport hook: returns the HTTP response, or nullopt on a transport-level
/// failure (connect error, read timeout). Injectable so retry behavior is
/// testable without a network.
using HttpPoster = std::function<std::optional<HttpResponse>(
    const std::string& path, const std::string& body,
    const std::vector<std::pair<std::string, std::string>>& headers)>;

struct LiveConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string api_key;
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::milliseconds request_timeout{120000};
  // Injectable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleeper;
};

/// Single-turn chat-completion client. Retries transport failures and
/// throttling/server statuses (429, 5xx) with doubling backoff; other error
/// statuses fail fast.
class LiveBackend : public CompletionBackend {
 public:
  explicit LiveBackend(LiveConfig cfg);
  LiveBackend(LiveConfig cfg, HttpPoster poster);
  std::string complete(const CompletionRequest& req) override;

 private:
  LiveConfig cfg_;
  HttpPoster poster_;
};

/// Serves recorded responses by cache key; unknown keys throw CacheMiss.
class ReplayBackend : public CompletionBackend {
 public:
  explicit ReplayBackend(std::map<std::string, CompletionRecord> records);
  std::string complete(const CompletionRequest& req) override;
  const std::map<std::string, CompletionRecord>& records() const { return records_; }

 private:
  std::map<std::string, CompletionRecord> records_;
};

/// Loads a line-delimited record file. Duplicate keys keep the last record
/// (a warning goes to warn_sink, stderr by default).
std::unique_ptr<ReplayBackend> load_replay(const std::filesystem::path& path,
                                           std::function<void(const std::string&)> warn_sink = {});

/// Scripted responses for tests and dry runs. Rules are checked in insertion
/// order; instrumentation exposes the concurrency high-water mark.
class MockBackend : public CompletionBackend {
 public:
  using Rule = std::function<std::optional<std::string>(const CompletionRequest&)>;

  void add_rule(Rule rule);
  void add_contains_rule(const std::string& needle, const std::string& response);
  void set_fallback(const std::string& response);
  void set_delay(std::chrono::milliseconds delay);

  std::string complete(const CompletionRequest& req) override;

  int calls() const { return calls_.load(); }
  int max_concurrent() const { return max_concurrent_.load(); }

 private:
  std::vector<Rule> rules_;
  std::optional<std::string> fallback_;
  std::chrono::milliseconds delay_{0};
  std::atomic<int> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_concurrent_{0};
};

/// Mock script file: {"rules": [{"contains", "response"}...], "default":
/// text, "echo_initial_sql": flag}. With echo_initial_sql set, a prompt
/// carrying an "Initial SQL:" line is answered with that SQL unchanged
/// (refine stage passthrough).
std::unique_ptr<MockBackend> load_mock_script(const std::filesystem::path& path);

/// Caps simultaneous complete() calls across all threads.
class ConcurrencyLimited : public CompletionBackend {
 public:
  ConcurrencyLimited(std::shared_ptr<CompletionBackend> inner, int cap);
  std::string complete(const CompletionRequest& req) override;

 private:
  std::shared_ptr<CompletionBackend> inner_;
  int cap_;
  int in_flight_ = 0;
  std::mutex mutex_;
  std::condition_variable slot_free_;
};

/// Appends a record for every completed call to a line-delimited cache file.
class RecordingBackend : public CompletionBackend {
 public:
  RecordingBackend(std::shared_ptr<CompletionBackend> inner, std::filesystem::path cache_file);
  std::string complete(const CompletionRequest& req) override;

 private:
  std::shared_ptr<CompletionBackend> inner_;
  std::filesystem::path cache_file_;
  std::mutex mutex_;
};

}  // namespace dnp::llm
