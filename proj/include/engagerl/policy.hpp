#pragma once

// Policy abstraction and a small differentiable softmax sequence policy used
// to exercise the optimizer and training loop without an external model.
//
// ToyPolicy emits symbols from a vocabulary of size V, symbol 0 being the
// stop symbol. The logit table is indexed by (context, position slot,
// symbol); the position slot is the step index when per-position logits are
// enabled and 0 otherwise. Sampling stops after emitting the stop symbol or
// at max_length symbols; the stop symbol counts towards |o|.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "engagerl/domain.hpp"
#include "engagerl/errors.hpp"
#include "engagerl/random.hpp"

namespace engagerl::policy {

enum class PolicyRole { current, old, reference };

template <typename P>
concept SequencePolicy = requires(const P& p, std::size_t context, const std::vector<TokenId>& tokens,
                                  Rng& rng) {
  { p.sample(context, 1.0, std::size_t{1}, rng) } -> std::same_as<std::vector<Rollout>>;
  { p.logprob_of(context, tokens) } -> std::same_as<std::vector<double>>;
};

struct ToyPolicyShape {
  std::size_t vocab_size = 5;
  std::size_t max_length = 8;
  std::size_t num_contexts = 1;
  bool per_position = false;
  /// Symbol rendered as a paragraph break ("\n\n"), if any.
  std::optional<TokenId> paragraph_symbol;

  bool operator==(const ToyPolicyShape&) const = default;

  void validate() const {
    if (vocab_size < 2) throw InvalidArgument("vocab_size must be >= 2");
    if (max_length < 1 || max_length > 32) throw InvalidArgument("max_length must be in [1, 32]");
    if (num_contexts < 1) throw InvalidArgument("num_contexts must be >= 1");
    if (paragraph_symbol &&
        (*paragraph_symbol <= 0 || *paragraph_symbol >= static_cast<TokenId>(vocab_size)))
      throw InvalidArgument("paragraph_symbol must be a non-stop vocabulary symbol");
  }
};

inline double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

class ToyPolicy {
 public:
  static constexpr TokenId kStop = 0;

  explicit ToyPolicy(ToyPolicyShape shape) : shape_(std::move(shape)) {
    shape_.validate();
    theta_.assign(shape_.num_contexts * slots() * shape_.vocab_size, 0.0);
  }

  const ToyPolicyShape& shape() const { return shape_; }
  std::size_t vocab_size() const { return shape_.vocab_size; }
  std::size_t max_length() const { return shape_.max_length; }
  std::size_t num_contexts() const { return shape_.num_contexts; }
  std::size_t parameter_count() const { return theta_.size(); }

  std::span<const double> parameters() const { return theta_; }
  std::span<double> parameters() { return theta_; }

  std::size_t slots() const { return shape_.per_position ? shape_.max_length : 1; }

  std::size_t index(std::size_t context, std::size_t position, TokenId symbol) const {
    return (context * slots() + slot(position)) * shape_.vocab_size + static_cast<std::size_t>(symbol);
  }

  std::span<const double> logits(std::size_t context, std::size_t position) const {
    check_context(context);
    return std::span<const double>(theta_).subspan(index(context, position, 0), shape_.vocab_size);
  }

  double& logit(std::size_t context, std::size_t position, TokenId symbol) {
    check_context(context);
    check_symbol(symbol);
    return theta_[index(context, position, symbol)];
  }

  /// Log-probabilities of the tempered step distribution.
  std::vector<double> step_logprobs(std::size_t context, std::size_t position,
                                    double temperature = 1.0) const {
    if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
    auto l = logits(context, position);
    std::vector<double> out(l.begin(), l.end());
    for (double& x : out) x /= temperature;
    const double lse = log_sum_exp(out);
    for (double& x : out) x -= lse;
    return out;
  }

  std::vector<double> step_probabilities(std::size_t context, std::size_t position,
                                         double temperature = 1.0) const {
    auto lp = step_logprobs(context, position, temperature);
    for (double& x : lp) x = std::exp(x);
    return lp;
  }

  double step_entropy(std::size_t context, std::size_t position, double temperature = 1.0) const {
    const auto lp = step_logprobs(context, position, temperature);
    double h = 0.0;
    for (double x : lp)
      if (std::isfinite(x)) h -= std::exp(x) * x;
    return h;
  }

  std::string render(std::span<const TokenId> tokens) const {
    std::string out;
    bool pending_space = false;
    for (TokenId t : tokens) {
      if (t == kStop) break;
      if (shape_.paragraph_symbol && t == *shape_.paragraph_symbol) {
        out += "\n\n";
        pending_space = false;
        continue;
      }
      if (pending_space) out += ' ';
      out += 'w';
      out += std::to_string(t);
      pending_space = true;
    }
    return out;
  }

  Rollout sample_one(std::size_t context, double temperature, Rng& rng) const {
    Rollout r;
    for (std::size_t pos = 0; pos < shape_.max_length; ++pos) {
      const auto lp = step_logprobs(context, pos, temperature);
      const double u = rng.uniform();
      double acc = 0.0;
      TokenId pick = static_cast<TokenId>(lp.size()) - 1;
      for (std::size_t v = 0; v < lp.size(); ++v) {
        acc += std::exp(lp[v]);
        if (u < acc) {
          pick = static_cast<TokenId>(v);
          break;
        }
      }
      // Never emit a symbol the distribution gives zero mass.
      while (!std::isfinite(lp[static_cast<std::size_t>(pick)]) && pick > 0) --pick;
      r.tokens.push_back(pick);
      r.token_logprobs.push_back(lp[static_cast<std::size_t>(pick)]);
      if (pick == kStop) break;
    }
    r.token_count = r.tokens.size();
    r.text = render(r.tokens);
    return r;
  }

  std::vector<Rollout> sample(std::size_t context, double temperature, std::size_t count,
                              Rng& rng) const {
    if (count < 1) throw InvalidArgument("sample count must be >= 1");
    std::vector<Rollout> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sample_one(context, temperature, rng));
    return out;
  }

  std::vector<Rollout> sample(std::size_t context, double temperature, std::size_t count,
                              std::uint64_t rng_seed) const {
    Rng rng(rng_seed);
    return sample(context, temperature, count, rng);
  }

  /// Per-token log-probabilities of `tokens` under the tempered policy.
  std::vector<double> logprob_of(std::size_t context, std::span<const TokenId> tokens,
                                 double temperature = 1.0) const {
    check_sequence(tokens);
    std::vector<double> out;
    out.reserve(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t)
      out.push_back(step_logprobs(context, t, temperature)[static_cast<std::size_t>(tokens[t])]);
    return out;
  }

  std::vector<double> logprob_of(std::size_t context, const std::vector<TokenId>& tokens) const {
    return logprob_of(context, std::span<const TokenId>(tokens), 1.0);
  }

  /// grad += sum_t coeffs[t] * d log pi(tokens[t] | context, t) / d theta.
  void accumulate_logprob_grad(std::size_t context, std::span<const TokenId> tokens,
                               std::span<const double> coeffs, std::span<double> grad,
                               double temperature = 1.0) const {
    check_sequence(tokens);
    if (coeffs.size() != tokens.size()) throw InvalidArgument("shape mismatch");
    if (grad.size() != theta_.size()) throw InvalidArgument("shape mismatch");
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (coeffs[t] == 0.0) continue;
      const auto p = step_probabilities(context, t, temperature);
      const std::size_t base = index(context, t, 0);
      const double c = coeffs[t] / temperature;
      for (std::size_t v = 0; v < p.size(); ++v) grad[base + v] -= c * p[v];
      grad[base + static_cast<std::size_t>(tokens[t])] += c;
    }
  }

  /// Gradient ascent: theta += lr * grad.
  void apply_update(std::span<const double> grad, double learning_rate) {
    if (grad.size() != theta_.size()) throw InvalidArgument("gradient shape mismatch");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    for (std::size_t i = 0; i < theta_.size(); ++i) theta_[i] += learning_rate * grad[i];
  }

  bool operator==(const ToyPolicy&) const = default;

 private:
  std::size_t slot(std::size_t position) const { return shape_.per_position ? position : 0; }

  void check_context(std::size_t context) const {
    if (context >= shape_.num_contexts) throw InvalidArgument("context out of range");
  }

  void check_symbol(TokenId s) const {
    if (s < 0 || s >= static_cast<TokenId>(shape_.vocab_size))
      throw InvalidArgument("token out of vocabulary");
  }

  void check_sequence(std::span<const TokenId> tokens) const {
    if (tokens.size() > shape_.max_length) throw InvalidArgument("sequence longer than max_length");
    for (TokenId t : tokens) check_symbol(t);
  }

  ToyPolicyShape shape_;
  std::vector<double> theta_;
};

static_assert(SequencePolicy<ToyPolicy>);

using FrozenPolicy = std::shared_ptr<const ToyPolicy>;

/// Deep, immutable copy usable as the old or reference policy.
inline FrozenPolicy snapshot(const ToyPolicy& p) { return std::make_shared<const ToyPolicy>(p); }

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::string_view kCheckpointFormat = "engagerl.toy_policy/v1";

struct Checkpoint {
  ToyPolicy policy{ToyPolicyShape{}};
  std::string rng_state;
  std::size_t step = 0;
};

inline Json checkpoint_json(const Checkpoint& c) {
  const auto& s = c.policy.shape();
  Json para = s.paragraph_symbol ? Json(*s.paragraph_symbol) : Json(nullptr);
  auto theta = c.policy.parameters();
  return Json{{"format", kCheckpointFormat},
              {"vocab_size", s.vocab_size},
              {"max_length", s.max_length},
              {"num_contexts", s.num_contexts},
              {"per_position", s.per_position},
              {"paragraph_symbol", para},
              {"step", c.step},
              {"rng_state", c.rng_state},
              {"theta", std::vector<double>(theta.begin(), theta.end())}};
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw SchemaError("unsupported checkpoint format");
    ToyPolicyShape s;
    j.at("vocab_size").get_to(s.vocab_size);
    j.at("max_length").get_to(s.max_length);
    j.at("num_contexts").get_to(s.num_contexts);
    j.at("per_position").get_to(s.per_position);
    if (!j.at("paragraph_symbol").is_null()) s.paragraph_symbol = j.at("paragraph_symbol").get<TokenId>();
    Checkpoint c{ToyPolicy(s), j.at("rng_state").get<std::string>(), j.at("step").get<std::size_t>()};
    const auto theta = j.at("theta").get<std::vector<double>>();
    if (theta.size() != c.policy.parameter_count()) throw SchemaError("theta size mismatch");
    std::copy(theta.begin(), theta.end(), c.policy.parameters().begin());
    return c;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

inline std::string serialize_checkpoint(const Checkpoint& c) { return checkpoint_json(c).dump(1) + "\n"; }

inline Checkpoint parse_checkpoint(const std::string& text) {
  try {
    return checkpoint_from_json(Json::parse(text));
  } catch (const Json::parse_error& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace engagerl::policy
