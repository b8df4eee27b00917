#pragma once

// Client for remote actor and reward models that speak the chat-completions
// protocol with logprobs. Transport is pluggable so the same client runs
// against a real HTTP service, the bundled mock server, or an in-process mock.

#include <algorithm>
#include <cctype>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>

#include "engagerl/domain.hpp"
#include "engagerl/errors.hpp"
#include "engagerl/prompts.hpp"
#include "engagerl/random.hpp"

namespace engagerl::backend {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr const char* kDefaultApiKeyEnv = "ENGAGERL_API_KEY";
inline constexpr const char* kRequestIdHeader = "X-Request-Id";

struct BackendEndpoint {
  std::string base_url;
  std::string model;
  double timeout_seconds = 60.0;
  int max_retries = 3;
  std::optional<std::string> auth_token;
  std::string api_key_env = kDefaultApiKeyEnv;
  int top_logprobs = 20;
  std::size_t max_concurrency = 8;
  double backoff_initial_seconds = 0.5;
  double backoff_multiplier = 2.0;
  double backoff_max_seconds = 8.0;
  int listwise_max_tokens = 512;

  void validate() const {
    if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
    if (model.empty()) throw ConfigError("endpoint model is empty");
    if (!(timeout_seconds > 0.0)) throw ConfigError("endpoint timeout must be > 0");
    if (max_retries < 0) throw ConfigError("endpoint max_retries must be >= 0");
    if (top_logprobs < 1) throw ConfigError("endpoint top_logprobs must be >= 1");
    if (max_concurrency < 1) throw ConfigError("endpoint max_concurrency must be >= 1");
    if (!(backoff_initial_seconds >= 0.0) || !(backoff_multiplier >= 1.0) ||
        !(backoff_max_seconds >= backoff_initial_seconds))
      throw ConfigError("endpoint backoff settings are inconsistent");
    if (listwise_max_tokens < 1) throw ConfigError("endpoint listwise_max_tokens must be >= 1");
  }

  /// Explicit token wins; otherwise the configured environment variable.
  std::optional<std::string> resolved_token() const {
    if (auth_token && !auth_token->empty()) return auth_token;
    if (!api_key_env.empty()) {
      if (const char* v = std::getenv(api_key_env.c_str()); v && *v) return std::string(v);
    }
    return std::nullopt;
  }

  /// Delay before retry number `retry` (0-based). Monotone non-decreasing.
  double backoff_delay(int retry) const {
    double d = backoff_initial_seconds;
    for (int i = 0; i < retry && d < backoff_max_seconds; ++i) d *= backoff_multiplier;
    return std::min(d, backoff_max_seconds);
  }
};

/// Endpoint settings without the secret, for manifests and logs.
inline Json endpoint_json(const BackendEndpoint& e) {
  return Json{{"base_url", e.base_url},
              {"model", e.model},
              {"timeout_seconds", e.timeout_seconds},
              {"max_retries", e.max_retries},
              {"top_logprobs", e.top_logprobs},
              {"max_concurrency", e.max_concurrency},
              {"auth", e.resolved_token() ? "set" : "none"}};
}

struct ScoredPointwiseResponse {
  std::string predicted_word;
  double logp_yes = kNegInf;
  double logp_no = kNegInf;
  std::string raw_payload;
};

using Header = std::pair<std::string, std::string>;

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

struct HttpRequest {
  std::string path;
  std::string body;
  std::vector<Header> headers;

  std::string header(std::string_view name) const {
    for (const auto& [k, v] : headers)
      if (iequals(k, name)) return v;
    return {};
  }
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::vector<Header> headers;

  std::string header(std::string_view name) const {
    for (const auto& [k, v] : headers)
      if (iequals(k, name)) return v;
    return {};
  }
};

/// Sends one POST. Throws TransportError (or TimeoutError) when no HTTP
/// response was received; HTTP error statuses are returned, not thrown.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const BackendEndpoint& endpoint, const HttpRequest& request) = 0;
};

struct UrlParts {
  std::string scheme_host_port;
  std::string path_prefix;
};

inline UrlParts split_base_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw ConfigError("base_url needs a scheme: " + std::string(url));
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("unsupported scheme in base_url: " + std::string(url));
  const auto path_start = url.find('/', scheme_end + 3);
  UrlParts parts;
  parts.scheme_host_port = std::string(url.substr(0, path_start));
  if (path_start != std::string_view::npos) parts.path_prefix = std::string(url.substr(path_start));
  while (!parts.path_prefix.empty() && parts.path_prefix.back() == '/') parts.path_prefix.pop_back();
  if (parts.scheme_host_port.size() <= scheme_end + 3) throw ConfigError("base_url has no host: " + std::string(url));
  return parts;
}

class HttpTransport final : public Transport {
 public:
  HttpResponse post(const BackendEndpoint& endpoint, const HttpRequest& request) override {
    const auto parts = split_base_url(endpoint.base_url);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (parts.scheme_host_port.rfind("https", 0) == 0)
      throw ConfigError("https endpoints need a build with OpenSSL");
#endif
    httplib::Client cli(parts.scheme_host_port);
    const auto whole = std::chrono::duration<double>(endpoint.timeout_seconds);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(whole);
    cli.set_connection_timeout(usec);
    cli.set_read_timeout(usec);
    cli.set_write_timeout(usec);
    httplib::Headers headers;
    for (const auto& [k, v] : request.headers) headers.emplace(k, v);
    const auto start = std::chrono::steady_clock::now();
    auto res = cli.Post(parts.path_prefix + request.path, headers, request.body, "application/json");
    if (!res) {
      const auto err = res.error();
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && elapsed >= 0.9 * endpoint.timeout_seconds);
      const auto what = endpoint.base_url + ": " + httplib::to_string(err);
      if (timed_out) throw TimeoutError(what + " (timeout after " + std::to_string(endpoint.timeout_seconds) + "s)");
      throw TransportError(what);
    }
    HttpResponse out;
    out.status = res->status;
    out.body = res->body;
    for (const auto& [k, v] : res->headers) out.headers.emplace_back(k, v);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Wire-format parsing. Every failure surfaces as an engagerl::Error subclass.

namespace wire {

struct Alternative {
  std::string token;
  double logprob = kNegInf;
};

struct TokenEntry {
  std::string token;
  double logprob = 0.0;
  std::vector<Alternative> top;
};

struct Completion {
  std::string content;
  std::vector<TokenEntry> tokens;
  std::optional<std::int64_t> completion_tokens;
  std::string id;
};

inline const Json& member(const Json& obj, const char* key) {
  if (!obj.is_object()) throw MalformedPayloadError(std::string("expected object around '") + key + "'");
  const auto it = obj.find(key);
  if (it == obj.end()) throw MalformedPayloadError(std::string("missing field '") + key + "'");
  return *it;
}

/// Logprob values: numbers, or null / very large negatives for truncated mass.
inline double logprob_value(const Json& v) {
  if (v.is_null()) return kNegInf;
  if (!v.is_number()) throw MalformedPayloadError("logprob is not a number");
  const double x = v.get<double>();
  if (std::isnan(x)) throw MalformedPayloadError("logprob is NaN");
  if (x > 1e-6) throw MalformedPayloadError("logprob is positive");
  if (x <= -9999.0) return kNegInf;
  return std::min(x, 0.0);
}

inline std::string string_value(const Json& v, const char* what) {
  if (!v.is_string()) throw MalformedPayloadError(std::string(what) + " is not a string");
  return v.get<std::string>();
}

inline Completion parse_completion(std::string_view body) {
  try {
    const Json doc = Json::parse(body);
    Completion c;
    if (const auto it = doc.is_object() ? doc.find("id") : doc.end(); it != doc.end() && it->is_string())
      c.id = it->get<std::string>();
    const auto& choices = member(doc, "choices");
    if (!choices.is_array() || choices.empty()) throw MalformedPayloadError("'choices' is empty");
    const auto& choice = choices.front();
    const auto& message = member(choice, "message");
    const auto& content = member(message, "content");
    c.content = content.is_null() ? std::string() : string_value(content, "message.content");

    if (const auto lp = choice.find("logprobs"); lp != choice.end() && !lp->is_null()) {
      const auto& entries = member(*lp, "content");
      if (!entries.is_array()) throw MalformedPayloadError("'logprobs.content' is not an array");
      for (const auto& e : entries) {
        TokenEntry t;
        t.token = string_value(member(e, "token"), "token");
        t.logprob = logprob_value(member(e, "logprob"));
        if (const auto top = e.find("top_logprobs"); top != e.end() && !top->is_null()) {
          if (!top->is_array()) throw MalformedPayloadError("'top_logprobs' is not an array");
          for (const auto& alt : *top)
            t.top.push_back({string_value(member(alt, "token"), "token"), logprob_value(member(alt, "logprob"))});
        }
        c.tokens.push_back(std::move(t));
      }
    }
    if (const auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
      if (const auto ct = usage->find("completion_tokens"); ct != usage->end()) {
        if (!ct->is_number_integer() || ct->get<std::int64_t>() < 0)
          throw MalformedPayloadError("'usage.completion_tokens' is not a non-negative integer");
        c.completion_tokens = ct->get<std::int64_t>();
      }
    }
    return c;
  } catch (const Json::exception& e) {
    throw MalformedPayloadError(std::string("invalid JSON payload: ") + e.what());
  }
}

/// "token_id:123" when the server returns ids; otherwise a stable hash of the
/// surface form.
inline TokenId token_id_of(std::string_view token) {
  constexpr std::string_view prefix = "token_id:";
  if (token.substr(0, prefix.size()) == prefix) {
    const auto digits = token.substr(prefix.size());
    if (!digits.empty() && digits.size() <= 18 &&
        std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
      return std::stoll(std::string(digits));
  }
  return static_cast<TokenId>(fnv1a(token) >> 1);
}

inline Rollout to_rollout(const Completion& c) {
  if (!c.completion_tokens) throw MalformedPayloadError("response has no usage.completion_tokens");
  if (static_cast<std::size_t>(*c.completion_tokens) != c.tokens.size())
    throw MalformedPayloadError("usage.completion_tokens (" + std::to_string(*c.completion_tokens) +
                                ") != logprobs length (" + std::to_string(c.tokens.size()) + ")");
  Rollout r;
  r.text = c.content;
  r.token_count = static_cast<std::size_t>(*c.completion_tokens);
  for (const auto& t : c.tokens) {
    if (!std::isfinite(t.logprob)) throw MalformedPayloadError("sampled token has no finite logprob");
    r.tokens.push_back(token_id_of(t.token));
    r.token_logprobs.push_back(t.logprob);
  }
  return r;
}

inline std::string normalize_surface(std::string_view s) {
  std::string out;
  for (char ch : s) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) continue;
    out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Reads the first generated position. Surface variants of yes/no (case,
/// surrounding whitespace) are pooled by log-sum-exp; absent forms are -inf.
inline ScoredPointwiseResponse scored_from_completion(const Completion& c, std::string raw) {
  if (c.tokens.empty()) throw MalformedPayloadError("response has no token logprobs");
  const auto& first = c.tokens.front();
  std::vector<Alternative> candidates = first.top;
  const bool sampled_listed = std::any_of(candidates.begin(), candidates.end(),
                                          [&](const Alternative& a) { return a.token == first.token; });
  if (!sampled_listed) candidates.push_back({first.token, first.logprob});

  ScoredPointwiseResponse out;
  out.raw_payload = std::move(raw);
  double best = kNegInf;
  bool have_best = false;
  for (const auto& a : candidates) {
    if (!have_best || a.logprob > best) {
      best = a.logprob;
      out.predicted_word = trim(a.token);
      have_best = true;
    }
    const auto norm = normalize_surface(a.token);
    if (norm == "yes") out.logp_yes = log_add(out.logp_yes, a.logprob);
    else if (norm == "no") out.logp_no = log_add(out.logp_no, a.logprob);
  }
  out.logp_yes = std::min(out.logp_yes, 0.0);
  out.logp_no = std::min(out.logp_no, 0.0);
  return out;
}

inline ScoredPointwiseResponse parse_pointwise_payload(std::string_view body) {
  return scored_from_completion(parse_completion(body), std::string(body));
}

/// The last bracketed, comma-separated list of non-negative integers in
/// `text`; brackets holding anything else are skipped.
inline std::optional<std::vector<std::int64_t>> last_integer_list(std::string_view text) {
  std::size_t close = text.size();
  while (close > 0) {
    close = text.rfind(']', close - 1);
    if (close == std::string_view::npos) break;
    const auto open = text.rfind('[', close);
    if (open == std::string_view::npos) break;
    const auto inner = text.substr(open + 1, close - open - 1);
    std::vector<std::int64_t> values;
    bool ok = true;
    std::size_t i = 0;
    auto skip_ws = [&] {
      while (i < inner.size() && std::isspace(static_cast<unsigned char>(inner[i]))) ++i;
    };
    skip_ws();
    if (i < inner.size()) {
      while (true) {
        skip_ws();
        const std::size_t start = i;
        while (i < inner.size() && inner[i] >= '0' && inner[i] <= '9') ++i;
        if (i == start || i - start > 9) {
          ok = false;
          break;
        }
        values.push_back(std::stoll(std::string(inner.substr(start, i - start))));
        skip_ws();
        if (i == inner.size()) break;
        if (inner[i] != ',') {
          ok = false;
          break;
        }
        ++i;
      }
    }
    if (ok) return values;
    if (open == 0) break;
    close = open;
  }
  return std::nullopt;
}

/// Validated permutation of 0..n-1 from a ranking completion.
inline std::vector<std::size_t> parse_ranking(std::string_view text, std::size_t n = kListwiseArity) {
  const auto list = last_integer_list(text);
  if (!list) throw ParseError("no bracketed integer list in completion");
  if (list->size() != n)
    throw ParseError("ranking has " + std::to_string(list->size()) + " entries, expected " + std::to_string(n));
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> out;
  for (auto v : *list) {
    if (v < 0 || static_cast<std::size_t>(v) >= n) throw ParseError("ranking index out of range: " + std::to_string(v));
    if (seen[static_cast<std::size_t>(v)]) throw ParseError("duplicate ranking index: " + std::to_string(v));
    seen[static_cast<std::size_t>(v)] = true;
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace wire

// ---------------------------------------------------------------------------

struct ClientStats {
  std::atomic<std::size_t> requests{0};
  std::atomic<std::size_t> retries{0};
  std::atomic<std::size_t> failures{0};
};

using Sleeper = std::function<void(double seconds)>;

inline void real_sleep(double seconds) {
  if (seconds > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

/// Reentrant client. At most `max_concurrency` requests are in flight at once
/// across all threads sharing the client.
class BackendClient {
 public:
  explicit BackendClient(BackendEndpoint endpoint, std::shared_ptr<Transport> transport = nullptr,
                         Sleeper sleeper = real_sleep)
      : endpoint_(std::move(endpoint)),
        transport_(transport ? std::move(transport) : std::make_shared<HttpTransport>()),
        sleeper_(std::move(sleeper)),
        slots_(static_cast<std::ptrdiff_t>(std::min<std::size_t>(endpoint_.max_concurrency, kMaxSlots))) {
    endpoint_.validate();
    token_ = endpoint_.resolved_token();
  }

  const BackendEndpoint& endpoint() const { return endpoint_; }
  const ClientStats& stats() const { return stats_; }

  /// n independent completions, each requested with its own seed.
  std::vector<Rollout> sample_actor(std::string_view prompt, std::size_t n, double temperature,
                                    int max_tokens, std::uint64_t seed = 0) {
    if (n < 1) throw InvalidArgument("sample_actor: n must be >= 1");
    if (max_tokens < 1) throw InvalidArgument("sample_actor: max_tokens must be >= 1");
    if (!(temperature >= 0.0)) throw InvalidArgument("sample_actor: temperature must be >= 0");
    const auto messages = prompts::to_chat_messages(prompt);
    std::vector<Rollout> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      Json body = base_body(messages, temperature, max_tokens, seed + k);
      body["logprobs"] = true;
      const auto resp = send("sample_actor", body);
      out.push_back(wire::to_rollout(wire::parse_completion(resp.body)));
    }
    return out;
  }

  ScoredPointwiseResponse score_pointwise(std::string_view prompt, std::uint64_t seed = 0) {
    Json body = base_body(prompts::to_chat_messages(prompt), 0.0, 1, seed);
    body["logprobs"] = true;
    body["top_logprobs"] = endpoint_.top_logprobs;
    const auto resp = send("score_pointwise", body);
    return wire::parse_pointwise_payload(resp.body);
  }

  /// One re-request on an invalid ranking, then ParseError.
  std::vector<std::size_t> score_listwise(std::string_view prompt, std::uint64_t seed = 0) {
    const auto messages = prompts::to_chat_messages(prompt);
    std::string last_error;
    for (int attempt = 0; attempt < 2; ++attempt) {
      const Json body = base_body(messages, 0.0, endpoint_.listwise_max_tokens, seed + static_cast<std::uint64_t>(attempt));
      const auto resp = send("score_listwise", body);
      const auto completion = wire::parse_completion(resp.body);
      try {
        return wire::parse_ranking(completion.content);
      } catch (const ParseError& e) {
        last_error = e.what();
      }
    }
    throw ParseError(endpoint_.base_url + ": invalid ranking after retry: " + last_error);
  }

 private:
  static constexpr std::size_t kMaxSlots = 1024;

  Json base_body(const std::vector<prompts::ChatMessage>& messages, double temperature, int max_tokens,
                 std::uint64_t seed) const {
    Json msgs = Json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return Json{{"model", endpoint_.model},
                {"messages", std::move(msgs)},
                {"temperature", temperature},
                {"max_tokens", max_tokens},
                {"n", 1},
                {"seed", seed & 0x7fffffffffffffffULL},
                {"return_tokens_as_token_ids", true}};
  }

  std::string next_request_id() {
    return "engagerl-" + std::to_string(fnv1a(endpoint_.base_url) & 0xffffff) + "-" +
           std::to_string(counter_.fetch_add(1));
  }

  HttpResponse attempt_once(const HttpRequest& req) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<kMaxSlots>& s;
      ~Release() { s.release(); }
    } release{slots_};
    stats_.requests.fetch_add(1);
    return transport_->post(endpoint_, req);
  }

  HttpResponse send(const char* op, const Json& body) {
    HttpRequest req;
    req.path = "/chat/completions";
    req.body = body.dump();
    const auto request_id = next_request_id();
    req.headers.emplace_back(kRequestIdHeader, request_id);
    if (token_) req.headers.emplace_back("Authorization", "Bearer " + *token_);

    const int attempts = 1 + endpoint_.max_retries;
    std::string last_error;
    bool last_timed_out = false;
    for (int a = 0; a < attempts; ++a) {
      if (a > 0) {
        stats_.retries.fetch_add(1);
        sleeper_(endpoint_.backoff_delay(a - 1));
      }
      try {
        auto resp = attempt_once(req);
        if (resp.status == 200) {
          const auto echoed = resp.header(kRequestIdHeader);
          if (!echoed.empty() && echoed != request_id)
            throw MalformedPayloadError(endpoint_.base_url + ": correlation id mismatch (sent " + request_id +
                                        ", got " + echoed + ")");
          return resp;
        }
        const bool retryable = resp.status == 429 || resp.status >= 500;
        last_error = "HTTP " + std::to_string(resp.status);
        last_timed_out = false;
        if (!retryable) {
          stats_.failures.fetch_add(1);
          throw BackendError(endpoint_.base_url + ": " + op + " rejected with " + last_error + ": " +
                             resp.body.substr(0, 200));
        }
      } catch (const TransportError& e) {
        last_error = e.what();
        last_timed_out = dynamic_cast<const TimeoutError*>(&e) != nullptr;
      }
    }
    stats_.failures.fetch_add(1);
    const auto what = endpoint_.base_url + ": " + op + " failed after " + std::to_string(attempts) +
                      " attempt(s): " + last_error;
    if (last_timed_out) throw TimeoutError(what);
    throw TransportError(what);
  }

  BackendEndpoint endpoint_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  std::optional<std::string> token_;
  std::counting_semaphore<kMaxSlots> slots_;
  std::atomic<std::uint64_t> counter_{0};
  ClientStats stats_;
};

/// Runs f(i) for i in [0, n) on up to `workers` threads. Results belong to
/// indices, not to completion order. The first exception is rethrown after
/// all workers finish.
template <typename F>
void for_each_index_concurrent(std::size_t n, std::size_t workers, F&& f) {
  if (n == 0) return;
  workers = std::clamp<std::size_t>(workers, 1, n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace engagerl::backend
