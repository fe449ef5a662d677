#include "dnp/llm.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

using nlohmann::json;

namespace dnp::llm {

void validate_request(const CompletionRequest& req) {
  if (req.temperature < 0.0 || req.temperature > 2.0)
    throw std::invalid_argument("temperature out of range [0, 2]");
  if (req.top_p <= 0.0 || req.top_p > 1.0)
    throw std::invalid_argument("top_p out of range (0, 1]");
  if (req.max_tokens < 1) throw std::invalid_argument("max_tokens must be at least 1");
}

namespace {

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string cache_key(const CompletionRequest& req) {
  // \x1f separators keep field boundaries unambiguous; the v1 prefix leaves
  // room to evolve the serialization without silently reusing old caches.
  std::string canonical = "v1";
  canonical += '\x1f';
  canonical += req.model_name;
  canonical += '\x1f';
  canonical += format_real(req.temperature);
  canonical += '\x1f';
  canonical += format_real(req.top_p);
  canonical += '\x1f';
  canonical += std::to_string(req.max_tokens);
  canonical += '\x1f';
  canonical += std::to_string(req.trial_index);
  canonical += '\x1f';
  canonical += req.prompt;
  return sha256_hex(canonical);
}

CompletionRecord make_record(const CompletionRequest& req, const std::string& response,
                             std::optional<TokenUsage> usage) {
  CompletionRecord record;
  record.key = cache_key(req);
  record.model_name = req.model_name;
  record.temperature = req.temperature;
  record.top_p = req.top_p;
  record.max_tokens = req.max_tokens;
  record.trial_index = req.trial_index;
  record.prompt = req.prompt;
  record.response = response;
  record.created_at = now_utc();
  record.token_usage = usage;
  return record;
}

std::string record_to_line(const CompletionRecord& record) {
  json j;
  j["key"] = record.key;
  j["model_name"] = record.model_name;
  j["temperature"] = record.temperature;
  j["top_p"] = record.top_p;
  j["max_tokens"] = record.max_tokens;
  j["trial_index"] = record.trial_index;
  j["prompt"] = record.prompt;
  j["response"] = record.response;
  j["created_at"] = record.created_at;
  if (record.token_usage) {
    j["token_usage"] = {{"prompt_tokens", record.token_usage->prompt_tokens},
                        {"completion_tokens", record.token_usage->completion_tokens}};
  }
  return j.dump();
}

CompletionRecord record_from_line(const std::string& line, size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw MalformedRecord(line_number, e.what());
  }
  if (!j.is_object()) throw MalformedRecord(line_number, "not a JSON object");

  CompletionRecord record;
  try {
    record.key = j.at("key").get<std::string>();
    record.model_name = j.at("model_name").get<std::string>();
    record.temperature = j.at("temperature").get<double>();
    record.top_p = j.at("top_p").get<double>();
    record.max_tokens = j.at("max_tokens").get<int>();
    record.trial_index = j.at("trial_index").get<int>();
    record.prompt = j.at("prompt").get<std::string>();
    record.response = j.at("response").get<std::string>();
    record.created_at = j.value("created_at", "");
    if (j.contains("token_usage") && j["token_usage"].is_object()) {
      TokenUsage usage;
      usage.prompt_tokens = j["token_usage"].value("prompt_tokens", 0);
      usage.completion_tokens = j["token_usage"].value("completion_tokens", 0);
      record.token_usage = usage;
    }
  } catch (const json::exception& e) {
    throw MalformedRecord(line_number, e.what());
  }

  CompletionRequest fields;
  fields.model_name = record.model_name;
  fields.prompt = record.prompt;
  fields.temperature = record.temperature;
  fields.top_p = record.top_p;
  fields.max_tokens = record.max_tokens;
  fields.trial_index = record.trial_index;
  if (cache_key(fields) != record.key)
    throw MalformedRecord(line_number, "stored key does not match the record's fields");
  return record;
}

LiveBackend::LiveBackend(LiveConfig cfg) : cfg_(std::move(cfg)) {
  auto base_url = cfg_.base_url;
  auto timeout = cfg_.request_timeout;
  poster_ = [base_url, timeout](const std::string& path, const std::string& body,
                                const std::vector<std::pair<std::string, std::string>>& headers)
      -> std::optional<HttpResponse> {
    httplib::Client client(base_url);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
    httplib::Headers hdrs;
    for (const auto& [k, v] : headers) hdrs.emplace(k, v);
    auto result = client.Post(path, hdrs, body, "application/json");
    if (!result) return std::nullopt;
    return HttpResponse{result->status, result->body};
  };
}

LiveBackend::LiveBackend(LiveConfig cfg, HttpPoster poster)
    : cfg_(std::move(cfg)), poster_(std::move(poster)) {}

std::string LiveBackend::complete(const CompletionRequest& req) {
  validate_request(req);

  json body;
  body["model"] = req.model_name;
  body["messages"] = json::array({{{"role", "user"}, {"content", req.prompt}}});
  body["temperature"] = req.temperature;
  body["top_p"] = req.top_p;
  body["max_tokens"] = req.max_tokens;
  std::string payload = body.dump();

  std::vector<std::pair<std::string, std::string>> headers;
  if (!cfg_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);

  auto sleeper = cfg_.sleeper
                     ? cfg_.sleeper
                     : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };

  std::optional<HttpResponse> last;
  auto backoff = cfg_.initial_backoff;
  for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
    last = poster_(cfg_.path, payload, headers);
    if (last) {
      if (last->status == 200) {
        json reply;
        try {
          reply = json::parse(last->body);
          return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
          throw EndpointError(last->status, std::string("unparseable response: ") + e.what());
        }
      }
      bool retryable = last->status == 429 || last->status >= 500;
      if (!retryable) throw EndpointError(last->status, last->body);
    }
    if (attempt < cfg_.max_attempts) {
      sleeper(backoff);
      backoff *= 2;
    }
  }
  if (last) throw EndpointError(last->status, last->body);
  throw Timeout("no response after " + std::to_string(cfg_.max_attempts) + " attempts");
}

ReplayBackend::ReplayBackend(std::map<std::string, CompletionRecord> records)
    : records_(std::move(records)) {}

std::string ReplayBackend::complete(const CompletionRequest& req) {
  validate_request(req);
  std::string key = cache_key(req);
  auto it = records_.find(key);
  if (it == records_.end()) throw CacheMiss(key);
  return it->second.response;
}

std::unique_ptr<ReplayBackend> load_replay(const std::filesystem::path& path,
                                           std::function<void(const std::string&)> warn_sink) {
  std::ifstream in(path);
  if (!in) throw MalformedRecord(0, "cannot open cache file " + path.string());
  if (!warn_sink) warn_sink = [](const std::string& msg) { std::cerr << msg << "\n"; };

  std::map<std::string, CompletionRecord> records;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    CompletionRecord record = record_from_line(line, line_number);
    auto [it, inserted] = records.insert_or_assign(record.key, std::move(record));
    if (!inserted)
      warn_sink(path.string() + ": duplicate key " + it->first + " at line " +
                std::to_string(line_number) + "; keeping the later record");
  }
  return std::make_unique<ReplayBackend>(std::move(records));
}

void MockBackend::add_rule(Rule rule) { rules_.push_back(std::move(rule)); }

void MockBackend::add_contains_rule(const std::string& needle, const std::string& response) {
  rules_.push_back([needle, response](const CompletionRequest& req) -> std::optional<std::string> {
    if (req.prompt.find(needle) != std::string::npos) return response;
    return std::nullopt;
  });
}

void MockBackend::set_fallback(const std::string& response) { fallback_ = response; }

void MockBackend::set_delay(std::chrono::milliseconds delay) { delay_ = delay; }

std::string MockBackend::complete(const CompletionRequest& req) {
  validate_request(req);
  calls_.fetch_add(1);
  int now = in_flight_.fetch_add(1) + 1;
  int seen = max_concurrent_.load();
  while (now > seen && !max_concurrent_.compare_exchange_weak(seen, now)) {
  }
  if (delay_.count() > 0) std::this_thread::sleep_for(delay_);

  std::optional<std::string> response;
  for (const auto& rule : rules_) {
    response = rule(req);
    if (response) break;
  }
  if (!response) response = fallback_;
  in_flight_.fetch_sub(1);
  if (!response) throw EndpointError(0, "no mock rule matched the prompt");
  return *response;
}

std::unique_ptr<MockBackend> load_mock_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MalformedRecord(0, "cannot open mock script " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw MalformedRecord(0, path.string() + ": " + e.what());
  }

  auto backend = std::make_unique<MockBackend>();
  if (j.value("echo_initial_sql", false)) {
    backend->add_rule([](const CompletionRequest& req) -> std::optional<std::string> {
      const std::string lead = "Initial SQL: ";
      size_t pos = req.prompt.rfind("\n" + lead);
      if (pos == std::string::npos) return std::nullopt;
      size_t start = pos + 1 + lead.size();
      size_t end = req.prompt.find('\n', start);
      std::string sql = req.prompt.substr(start, end == std::string::npos ? end : end - start);
      return "Final SQL: " + sql;
    });
  }
  if (j.contains("rules")) {
    for (const auto& rule : j["rules"]) {
      if (!rule.is_object() || !rule.contains("contains") || !rule.contains("response"))
        throw MalformedRecord(0, path.string() + ": rule needs 'contains' and 'response'");
      backend->add_contains_rule(rule["contains"].get<std::string>(),
                                 rule["response"].get<std::string>());
    }
  }
  if (j.contains("default")) backend->set_fallback(j["default"].get<std::string>());
  return backend;
}

ConcurrencyLimited::ConcurrencyLimited(std::shared_ptr<CompletionBackend> inner, int cap)
    : inner_(std::move(inner)), cap_(cap) {
  if (cap_ < 1) throw std::invalid_argument("concurrency cap must be at least 1");
}

std::string ConcurrencyLimited::complete(const CompletionRequest& req) {
  {
    std::unique_lock lock(mutex_);
    slot_free_.wait(lock, [this] { return in_flight_ < cap_; });
    ++in_flight_;
  }
  try {
    std::string response = inner_->complete(req);
    {
      std::lock_guard lock(mutex_);
      --in_flight_;
    }
    slot_free_.notify_one();
    return response;
  } catch (...) {
    {
      std::lock_guard lock(mutex_);
      --in_flight_;
    }
    slot_free_.notify_one();
    throw;
  }
}

RecordingBackend::RecordingBackend(std::shared_ptr<CompletionBackend> inner,
                                   std::filesystem::path cache_file)
    : inner_(std::move(inner)), cache_file_(std::move(cache_file)) {}

std::string RecordingBackend::complete(const CompletionRequest& req) {
  std::string response = inner_->complete(req);
  std::string line = record_to_line(make_record(req, response)) + "\n";
  {
    std::lock_guard lock(mutex_);
    std::ofstream out(cache_file_, std::ios::app);
    if (!out) throw MalformedRecord(0, "cannot append to cache file " + cache_file_.string());
    out << line;
    out.flush();
  }
  return response;
}

}  // namespace dnp::llm
