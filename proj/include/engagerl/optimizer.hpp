#pragma once

// Group-relative advantages and the clipped-surrogate objective, with the
// per-token derivative of the objective with respect to each new token
// log-probability. Any differentiable policy chains those derivatives through
// its own d logpi / d theta to obtain the parameter gradient.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "engagerl/domain.hpp"
#include "engagerl/errors.hpp"

namespace engagerl::optim {

enum class NormalizationMode { grpo, dr_grpo };

inline std::string_view to_string(NormalizationMode m) {
  return m == NormalizationMode::grpo ? "grpo" : "dr_grpo";
}

inline NormalizationMode parse_normalization(std::string_view s) {
  if (s == "grpo") return NormalizationMode::grpo;
  if (s == "dr_grpo") return NormalizationMode::dr_grpo;
  throw ConfigError("unknown normalization_mode '" + std::string(s) + "'");
}

struct OptimizerConfig {
  std::size_t group_size = 4;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double kl_coeff = 0.001;
  NormalizationMode normalization_mode = NormalizationMode::dr_grpo;
  double length_norm_constant = 512.0;

  void validate() const {
    if (group_size < 2) throw ConfigError("group_size must be >= 2");
    if (!(eps_low > 0.0 && eps_low <= eps_high && eps_high < 1.0))
      throw ConfigError("clip range requires 0 < eps_low <= eps_high < 1");
    if (!(kl_coeff >= 0.0)) throw ConfigError("kl_coeff must be >= 0");
    if (!(length_norm_constant > 0.0)) throw ConfigError("length_norm_constant must be > 0");
  }
};

inline constexpr double kStdStabilizer = 1e-8;

/// dr_grpo: R_i - mean(R). grpo: additionally divided by population std + 1e-8.
inline std::vector<double> group_advantages(std::span<const double> rewards,
                                            NormalizationMode mode) {
  const std::size_t g = rewards.size();
  if (g < 2) throw InvalidArgument("degenerate group");
  std::vector<double> adv(g, 0.0);
  if (std::all_of(rewards.begin(), rewards.end(),
                  [&](double r) { return r == rewards.front(); }))
    return adv;

  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(g);
  for (std::size_t i = 0; i < g; ++i) adv[i] = rewards[i] - mean;
  if (mode == NormalizationMode::grpo) {
    double var = 0.0;
    for (double a : adv) var += a * a;
    var /= static_cast<double>(g);
    const double scale = std::sqrt(var) + kStdStabilizer;
    for (double& a : adv) a /= scale;
  }
  // Re-center so the group sums to zero up to one rounding of the mean.
  const double drift = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(g);
  for (double& a : adv) a -= drift;
  return adv;
}

inline void require_finite(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) throw InvalidArgument("invalid logprob");
}

inline double token_ratio(double logp_new, double logp_old) {
  require_finite(logp_new, logp_old);
  return std::exp(logp_new - logp_old);
}

inline double clip_ratio(double ratio, double eps_low, double eps_high) {
  return std::clamp(ratio, 1.0 - eps_low, 1.0 + eps_high);
}

/// min(r A, clip(r, 1 - eps_low, 1 + eps_high) A).
inline double clipped_term(double ratio, double advantage, double eps_low, double eps_high) {
  return std::min(ratio * advantage, clip_ratio(ratio, eps_low, eps_high) * advantage);
}

/// True when the unclipped branch attains the min, i.e. the term depends on
/// the ratio. Ties go to the unclipped branch.
inline bool unclipped_active(double ratio, double advantage, double eps_low, double eps_high) {
  return ratio * advantage <= clip_ratio(ratio, eps_low, eps_high) * advantage;
}

/// Non-negative per-token KL estimate exp(d) - d - 1 with d = ref - new.
inline double kl_estimate(double logp_new, double logp_ref) {
  require_finite(logp_new, logp_ref);
  const double d = logp_ref - logp_new;
  return std::expm1(d) - d;
}

/// d kl_estimate / d logp_new.
inline double kl_estimate_grad(double logp_new, double logp_ref) {
  return -std::expm1(logp_ref - logp_new);
}

struct ObjectiveResult {
  double objective = 0.0;     // to maximize
  double mean_kl = 0.0;       // token-averaged KL estimate
  std::size_t clipped_tokens = 0;
  std::size_t total_tokens = 0;
  /// d objective / d new_logprobs[i][t]
  std::vector<std::vector<double>> token_grads;
};

/// Weight applied to every token of rollout i under the chosen aggregation.
inline double token_weight(std::size_t length, std::size_t group, const OptimizerConfig& cfg) {
  if (cfg.normalization_mode == NormalizationMode::grpo)
    return length == 0 ? 0.0 : 1.0 / (static_cast<double>(group) * static_cast<double>(length));
  return 1.0 / (static_cast<double>(group) * cfg.length_norm_constant);
}

/// Clipped-surrogate objective for one group, outcome advantages broadcast to
/// every token, minus beta times the per-token KL estimate.
inline ObjectiveResult group_objective(const GroupBatch& batch,
                                       const std::vector<std::vector<double>>& new_logprobs,
                                       const OptimizerConfig& cfg) {
  const std::size_t g = batch.rollouts.size();
  if (batch.advantages.size() != g || new_logprobs.size() != g || batch.ref_logprobs.size() != g)
    throw InvalidArgument("shape mismatch");
  ObjectiveResult res;
  res.token_grads.resize(g);
  double kl_sum = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    const auto& ro = batch.rollouts[i];
    const std::size_t len = ro.token_logprobs.size();
    if (new_logprobs[i].size() != len || batch.ref_logprobs[i].size() != len ||
        ro.tokens.size() != len)
      throw InvalidArgument("shape mismatch");
    const double w = token_weight(len, g, cfg);
    const double adv = batch.advantages[i];
    auto& grads = res.token_grads[i];
    grads.assign(len, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      const double lp_new = new_logprobs[i][t];
      const double ratio = token_ratio(lp_new, ro.token_logprobs[t]);
      const double kl = kl_estimate(lp_new, batch.ref_logprobs[i][t]);
      const bool active = unclipped_active(ratio, adv, cfg.eps_low, cfg.eps_high);
      res.objective += w * (clipped_term(ratio, adv, cfg.eps_low, cfg.eps_high) - cfg.kl_coeff * kl);
      // d(r A)/d logp_new = r A when the unclipped branch is active.
      const double d_surrogate = active ? ratio * adv : 0.0;
      grads[t] = w * (d_surrogate - cfg.kl_coeff * kl_estimate_grad(lp_new, batch.ref_logprobs[i][t]));
      if (!active) ++res.clipped_tokens;
      kl_sum += kl;
      ++res.total_tokens;
    }
  }
  res.mean_kl = res.total_tokens ? kl_sum / static_cast<double>(res.total_tokens) : 0.0;
  return res;
}

// ---------------------------------------------------------------------------
// Entropy diagnostics. The two flavours are reported under different names
// and are not comparable with each other.

/// Mean of per-step full-distribution entropies (toy policy).
inline double mean_step_entropy(std::span<const double> step_entropies) {
  if (step_entropies.empty()) throw InvalidArgument("empty entropy sequence");
  return std::accumulate(step_entropies.begin(), step_entropies.end(), 0.0) /
         static_cast<double>(step_entropies.size());
}

/// Mean negative sampled-token log-probability (remote backend proxy).
inline double sampled_entropy_proxy(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw InvalidArgument("empty logprob sequence");
  double s = 0.0;
  for (double lp : token_logprobs) s -= lp;
  return s / static_cast<double>(token_logprobs.size());
}

// ---------------------------------------------------------------------------
// Batch export: one JSONL record per rollout, consumable by an external
// trainer. Bump kBatchSchema on any field change.

inline constexpr std::string_view kBatchSchema = "engagerl.batch/v1";

inline Json config_json(const OptimizerConfig& c) {
  return Json{{"group_size", c.group_size},
              {"eps_low", c.eps_low},
              {"eps_high", c.eps_high},
              {"kl_coeff", c.kl_coeff},
              {"normalization_mode", std::string(to_string(c.normalization_mode))},
              {"length_norm_constant", c.length_norm_constant}};
}

inline OptimizerConfig config_from_json(const Json& j) {
  OptimizerConfig c;
  j.at("group_size").get_to(c.group_size);
  j.at("eps_low").get_to(c.eps_low);
  j.at("eps_high").get_to(c.eps_high);
  j.at("kl_coeff").get_to(c.kl_coeff);
  c.normalization_mode = parse_normalization(j.at("normalization_mode").get<std::string>());
  j.at("length_norm_constant").get_to(c.length_norm_constant);
  return c;
}

inline std::vector<Json> export_records(const GroupBatch& batch, const OptimizerConfig& cfg) {
  if (auto v = validate_batch(batch); !v) throw ValidationError("batch " + batch.sample_id + ": " + v.violations.front());
  std::vector<Json> out;
  out.reserve(batch.size());
  const Json cfg_json = config_json(cfg);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = batch.rollouts[i];
    out.push_back(Json{{"schema", kBatchSchema},
                       {"sample_id", batch.sample_id},
                       {"rollout_index", i},
                       {"tokens", r.tokens},
                       {"text", r.text},
                       {"old_logprobs", r.token_logprobs},
                       {"ref_logprobs", batch.ref_logprobs[i]},
                       {"advantages", std::vector<double>(r.token_count, batch.advantages[i])},
                       {"reward", batch.rewards[i]},
                       {"config", cfg_json}});
  }
  return out;
}

}  // namespace engagerl::optim
