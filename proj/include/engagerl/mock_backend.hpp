#pragma once

// Deterministic, fixture-driven stand-in for a chat-completions service.
// MockResponder holds the behaviour; MockTransport calls it in-process and
// MockServer exposes it over HTTP on a local port.
//
// Fixture layout (all keys optional):
//   {
//     "rules": [
//       {"match": "substring of any message", "fail_first_n": 2, "fail_status": 500,
//        "status": 200, "content": "fixed completion",
//        "top_logprobs": {" yes": -0.2, " no": -1.8},
//        "body": "raw response body", "completion_tokens": 7, "delay_ms": 0}
//     ],
//     "words": [8, 40], "vocab_size": 1000
//   }
// The first rule whose "match" occurs in the request wins. Without a match the
// responder synthesizes a completion from a hash of the prompt and seed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "engagerl/backend.hpp"
#include "engagerl/jsonl.hpp"
#include "engagerl/random.hpp"

namespace engagerl::backend {

struct MockRule {
  std::string match;
  std::size_t fail_first_n = 0;
  int fail_status = 500;
  int status = 200;
  std::optional<std::string> content;
  std::vector<std::pair<std::string, double>> top_logprobs;
  std::optional<std::string> body;
  std::optional<std::int64_t> completion_tokens;
  int delay_ms = 0;
  std::size_t hits = 0;
};

class MockResponder {
 public:
  MockResponder() = default;

  explicit MockResponder(const Json& fixture) {
    if (!fixture.is_object()) throw SchemaError("mock fixture must be an object");
    try {
      if (const auto it = fixture.find("rules"); it != fixture.end()) {
        for (const auto& r : *it) {
          MockRule rule;
          rule.match = r.value("match", std::string());
          rule.fail_first_n = r.value("fail_first_n", std::size_t{0});
          rule.fail_status = r.value("fail_status", 500);
          rule.status = r.value("status", 200);
          if (r.contains("content")) rule.content = r.at("content").get<std::string>();
          if (r.contains("body")) rule.body = r.at("body").get<std::string>();
          if (r.contains("completion_tokens")) rule.completion_tokens = r.at("completion_tokens").get<std::int64_t>();
          rule.delay_ms = r.value("delay_ms", 0);
          if (r.contains("top_logprobs")) {
            for (const auto& [tok, lp] : r.at("top_logprobs").items())
              rule.top_logprobs.emplace_back(tok, lp.is_null() ? -9999.0 : lp.get<double>());
            std::stable_sort(rule.top_logprobs.begin(), rule.top_logprobs.end(),
                             [](const auto& a, const auto& b) { return a.second > b.second; });
          }
          rules_.push_back(std::move(rule));
        }
      }
      if (const auto it = fixture.find("words"); it != fixture.end()) {
        min_words_ = it->at(0).get<std::size_t>();
        max_words_ = it->at(1).get<std::size_t>();
      }
      vocab_size_ = fixture.value("vocab_size", vocab_size_);
    } catch (const Json::exception& e) {
      throw SchemaError(std::string("invalid mock fixture: ") + e.what());
    }
    if (min_words_ < 1 || max_words_ < min_words_ || vocab_size_ < 1)
      throw SchemaError("invalid mock fixture: bad words/vocab_size");
  }

  static std::shared_ptr<MockResponder> from_file(const std::filesystem::path& path) {
    try {
      return std::make_shared<MockResponder>(Json::parse(read_file(path)));
    } catch (const Json::exception& e) {
      throw SchemaError(path.string() + ": " + e.what());
    }
  }

  std::size_t request_count() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }

  HttpResponse handle(const HttpRequest& req) {
    HttpResponse resp;
    const auto request_id = req.header(kRequestIdHeader);
    if (!request_id.empty()) resp.headers.emplace_back(kRequestIdHeader, request_id);

    Json body;
    try {
      body = Json::parse(req.body);
    } catch (const Json::exception&) {
      resp.status = 400;
      resp.body = R"({"error":"request body is not JSON"})";
      return resp;
    }
    const std::string prompt = prompt_text(body);
    const int max_tokens = body.value("max_tokens", 256);
    const std::uint64_t seed = body.value("seed", std::uint64_t{0});
    const bool want_ids = body.value("return_tokens_as_token_ids", false);
    const int top_k = body.value("top_logprobs", 0);

    MockRule* rule = nullptr;
    std::size_t hit = 0;
    int delay_ms = 0;
    {
      std::lock_guard lock(mutex_);
      ++requests_;
      for (auto& r : rules_) {
        if (prompt.find(r.match) != std::string::npos) {
          rule = &r;
          hit = r.hits++;
          delay_ms = r.delay_ms;
          break;
        }
      }
    }
    if (delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));

    resp.status = 200;
    if (rule && hit < rule->fail_first_n) {
      resp.status = rule->fail_status;
      resp.body = R"({"error":"injected failure"})";
      return resp;
    }
    if (rule && rule->status != 200) {
      resp.status = rule->status;
      resp.body = R"({"error":"fixture status"})";
      return resp;
    }
    if (rule && rule->body) {
      resp.body = *rule->body;
      return resp;
    }

    Rng rng(fnv1a(prompt, mix64(seed)));
    std::vector<std::string> tokens;
    std::vector<std::vector<std::pair<std::string, double>>> tops;
    if (rule && rule->content) {
      tokens = split_tokens(*rule->content);
    } else if (prompt.find("job_index_0") != std::string::npos) {
      std::vector<int> perm{0, 1, 2, 3, 4};
      rng.shuffle(perm.begin(), perm.end());
      std::string text = "[";
      for (std::size_t i = 0; i < perm.size(); ++i) text += (i ? ", " : "") + std::to_string(perm[i]);
      tokens = split_tokens(text + "]");
    } else if (max_tokens == 1) {
      const double p_yes = 0.05 + 0.9 * rng.uniform();
      std::vector<std::pair<std::string, double>> top{{" yes", std::log(p_yes * 0.9)},
                                                       {" no", std::log((1.0 - p_yes) * 0.9)},
                                                       {" maybe", std::log(0.06)},
                                                       {"Yes", std::log(p_yes * 0.04)}};
      std::stable_sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
      tokens = {top.front().first};
      tops.push_back(std::move(top));
    } else {
      const auto n = min_words_ + rng.below(max_words_ - min_words_ + 1);
      for (std::size_t i = 0; i < n; ++i)
        tokens.push_back((i ? " w" : "w") + std::to_string(rng.below(vocab_size_)));
    }
    if (max_tokens > 0 && tokens.size() > static_cast<std::size_t>(max_tokens))
      tokens.resize(static_cast<std::size_t>(max_tokens));
    if (rule && !rule->top_logprobs.empty()) {
      tops.assign(1, rule->top_logprobs);
      if (tokens.empty() || !rule->content) tokens.assign(1, rule->top_logprobs.front().first);
    }

    Json content_lp = Json::array();
    std::string text;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      text += tokens[i];
      double lp = -(0.01 + static_cast<double>(fnv1a(tokens[i], seed + i) % 2000) / 1000.0);
      Json top = Json::array();
      if (i < tops.size()) {
        for (std::size_t k = 0; k < tops[i].size() && static_cast<int>(k) < std::max(top_k, 1); ++k)
          top.push_back({{"token", tops[i][k].first}, {"logprob", tops[i][k].second}});
        for (const auto& [tok, v] : tops[i])
          if (tok == tokens[i]) lp = v;
      }
      const std::string tok = want_ids ? "token_id:" + std::to_string(token_number(tokens[i])) : tokens[i];
      content_lp.push_back({{"token", tok}, {"logprob", lp}, {"top_logprobs", std::move(top)}});
    }
    const std::int64_t completion_tokens =
        rule && rule->completion_tokens ? *rule->completion_tokens : static_cast<std::int64_t>(tokens.size());
    Json out{{"id", request_id.empty() ? "mock" : request_id},
             {"object", "chat.completion"},
             {"model", body.value("model", std::string("mock"))},
             {"choices",
              Json::array({{{"index", 0},
                            {"message", {{"role", "assistant"}, {"content", text}}},
                            {"logprobs", {{"content", std::move(content_lp)}}},
                            {"finish_reason", "stop"}}})},
             {"usage",
              {{"prompt_tokens", static_cast<std::int64_t>(split_tokens(prompt).size())},
               {"completion_tokens", completion_tokens},
               {"total_tokens", static_cast<std::int64_t>(split_tokens(prompt).size()) + completion_tokens}}}};
    resp.body = out.dump();
    return resp;
  }

  /// Whitespace-led word pieces: "a b\n\nc" -> "a", " b", "\n\nc".
  static std::vector<std::string> split_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
      const std::size_t start = i;
      while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
      while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
      out.emplace_back(s.substr(start, i - start));
    }
    return out;
  }

 private:
  static std::string prompt_text(const Json& body) {
    std::string out;
    if (const auto it = body.find("messages"); it != body.end() && it->is_array()) {
      for (const auto& m : *it) {
        if (m.is_object() && m.contains("content") && m.at("content").is_string()) {
          out += m.at("content").get<std::string>();
          out += '\n';
        }
      }
    }
    return out;
  }

  std::int64_t token_number(const std::string& tok) const {
    const auto t = wire::trim(tok);
    if (t.size() > 1 && t[0] == 'w' &&
        std::all_of(t.begin() + 1, t.end(), [](char c) { return c >= '0' && c <= '9'; }) && t.size() < 12)
      return std::stoll(t.substr(1));
    return static_cast<std::int64_t>(vocab_size_ + fnv1a(tok) % 100000);
  }

  mutable std::mutex mutex_;
  std::vector<MockRule> rules_;
  std::size_t min_words_ = 8;
  std::size_t max_words_ = 40;
  std::uint64_t vocab_size_ = 1000;
  std::size_t requests_ = 0;
};

class MockTransport final : public Transport {
 public:
  explicit MockTransport(std::shared_ptr<MockResponder> responder) : responder_(std::move(responder)) {}

  HttpResponse post(const BackendEndpoint& endpoint, const HttpRequest& request) override {
    const auto start = std::chrono::steady_clock::now();
    auto resp = responder_->handle(request);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (elapsed > endpoint.timeout_seconds) throw TimeoutError(endpoint.base_url + ": mock timeout");
    return resp;
  }

 private:
  std::shared_ptr<MockResponder> responder_;
};

/// Serves a MockResponder at http://127.0.0.1:<port>/v1/chat/completions.
class MockServer {
 public:
  explicit MockServer(std::shared_ptr<MockResponder> responder, const std::string& host = "127.0.0.1",
                      int port = 0)
      : responder_(std::move(responder)), host_(host) {
    server_.Post(R"(/(v1/)?chat/completions)", [this](const httplib::Request& req, httplib::Response& res) {
      HttpRequest r;
      r.path = req.path;
      r.body = req.body;
      for (const auto& [k, v] : req.headers) r.headers.emplace_back(k, v);
      const auto out = responder_->handle(r);
      res.status = out.status;
      for (const auto& [k, v] : out.headers) res.set_header(k, v);
      res.set_content(out.body, "application/json");
    });
    port_ = port == 0 ? server_.bind_to_any_port(host_) : (server_.bind_to_port(host_, port) ? port : -1);
    if (port_ <= 0) throw IoError("mock server could not bind " + host_ + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;
  ~MockServer() { stop(); }

  int port() const { return port_; }
  std::string base_url() const { return "http://" + host_ + ":" + std::to_string(port_) + "/v1"; }
  const MockResponder& responder() const { return *responder_; }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  /// Blocks serving requests until stop() is called from another thread.
  void wait() {
    if (thread_.joinable()) thread_.join();
  }

 private:
  std::shared_ptr<MockResponder> responder_;
  std::string host_;
  httplib::Server server_;
  int port_ = -1;
  std::thread thread_;
};

}  // namespace engagerl::backend
