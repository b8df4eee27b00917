#pragma once

// The rollout / reward / update loop. Toy mode trains the built-in softmax
// policy against a scripted oracle; remote mode drives actor and reward
// services and exports GroupBatches for an external optimizer.

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "engagerl/backend.hpp"
#include "engagerl/domain.hpp"
#include "engagerl/errors.hpp"
#include "engagerl/gradient.hpp"
#include "engagerl/jsonl.hpp"
#include "engagerl/optimizer.hpp"
#include "engagerl/policy.hpp"
#include "engagerl/prompts.hpp"
#include "engagerl/random.hpp"
#include "engagerl/reward.hpp"

namespace engagerl::trainer {

enum class RewardMode { pointwise_string, pointwise_logprob, listwise };

inline std::string_view to_string(RewardMode m) {
  switch (m) {
    case RewardMode::pointwise_string: return "pointwise_string";
    case RewardMode::pointwise_logprob: return "pointwise_logprob";
    case RewardMode::listwise: return "listwise";
  }
  return "?";
}

inline RewardMode parse_reward_mode(std::string_view s) {
  if (s == "pointwise_string") return RewardMode::pointwise_string;
  if (s == "pointwise_logprob") return RewardMode::pointwise_logprob;
  if (s == "listwise") return RewardMode::listwise;
  throw ConfigError("unknown reward_mode: " + std::string(s));
}

/// How group objectives inside one mini-batch combine into the update.
enum class BatchReduction { sum, mean };

inline BatchReduction parse_batch_reduction(std::string_view s) {
  if (s == "sum") return BatchReduction::sum;
  if (s == "mean") return BatchReduction::mean;
  throw ConfigError("unknown batch_reduction: " + std::string(s));
}

inline std::string_view to_string(BatchReduction r) { return r == BatchReduction::sum ? "sum" : "mean"; }

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t mini_batch = 768;  // rollouts per update
  std::size_t micro_batch = 32;  // rollouts per accumulation chunk
  double learning_rate = 0.1;
  RewardMode reward_mode = RewardMode::pointwise_string;
  std::size_t length_budget = reward::kDefaultLengthBudget;
  double lambda = reward::kDefaultLambda;
  bool format_penalty_on = true;
  optim::OptimizerConfig optimizer;
  std::uint64_t seed = 1;
  std::size_t max_steps = 0;  // 0: no cap beyond epochs
  std::size_t updates_per_batch = 1;
  BatchReduction batch_reduction = BatchReduction::sum;
  std::size_t eval_every = 10;
  std::size_t eval_samples_per_context = 8;
  std::size_t checkpoint_every = 10;
  bool metrics_wall_clock = false;

  std::size_t group_size() const { return optimizer.group_size; }

  void validate() const {
    optimizer.validate();
    if (group_size() < 2) throw ConfigError("group_size must be >= 2");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (mini_batch < 1 || micro_batch < 1) throw ConfigError("mini_batch and micro_batch must be >= 1");
    if (mini_batch % micro_batch != 0) throw ConfigError("micro_batch must divide mini_batch");
    if (micro_batch % group_size() != 0) throw ConfigError("group_size must divide micro_batch");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (length_budget < 1) throw ConfigError("length_budget must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (updates_per_batch < 1) throw ConfigError("updates_per_batch must be >= 1");
    if (eval_samples_per_context < 1) throw ConfigError("eval_samples_per_context must be >= 1");
  }

  reward::ComposeOptions compose_options() const { return {lambda, length_budget, format_penalty_on}; }
};

struct MetricsRecord {
  std::size_t step = 0;
  double train_reward = 0.0;
  double val_reward = std::numeric_limits<double>::quiet_NaN();  // NaN: not evaluated this step
  double mean_length = 0.0;
  double mean_kl = 0.0;
  double entropy = 0.0;
  double parse_failure_rate = 0.0;
  double clip_fraction = 0.0;
  double multi_paragraph_rate = 0.0;
  double wall_clock = 0.0;  // seconds since run start; excluded from files unless enabled
};

inline Json metrics_json(const MetricsRecord& m, bool wall_clock) {
  auto num = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
  Json j{{"step", m.step},
         {"train_reward", num(m.train_reward)},
         {"val_reward", num(m.val_reward)},
         {"mean_length", num(m.mean_length)},
         {"mean_kl", num(m.mean_kl)},
         {"entropy", num(m.entropy)},
         {"parse_failure_rate", num(m.parse_failure_rate)},
         {"clip_fraction", num(m.clip_fraction)},
         {"multi_paragraph_rate", num(m.multi_paragraph_rate)}};
  if (wall_clock) j["wall_clock"] = m.wall_clock;
  return j;
}

/// Shortest round-trip decimal; empty for non-finite values.
inline std::string format_number(double x) {
  if (!std::isfinite(x)) return {};
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string metrics_csv_header(bool wall_clock) {
  std::string h = "step,train_reward,val_reward,mean_length,mean_kl,entropy,parse_failure_rate,clip_fraction,multi_paragraph_rate";
  if (wall_clock) h += ",wall_clock";
  return h;
}

inline std::string metrics_csv_row(const MetricsRecord& m, bool wall_clock) {
  std::string row = std::to_string(m.step);
  for (double x : {m.train_reward, m.val_reward, m.mean_length, m.mean_kl, m.entropy, m.parse_failure_rate,
                   m.clip_fraction, m.multi_paragraph_rate})
    row += "," + format_number(x);
  if (wall_clock) row += "," + format_number(m.wall_clock);
  return row;
}

/// Appends each record to metrics.jsonl and metrics.csv as it arrives, so an
/// interrupted run keeps every completed step.
class MetricsSink {
 public:
  MetricsSink(const std::filesystem::path& dir, bool wall_clock) : wall_clock_(wall_clock) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    jsonl_.open(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    csv_.open(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!jsonl_ || !csv_) throw IoError("cannot open metrics files in " + dir.string());
    csv_ << metrics_csv_header(wall_clock_) << '\n';
    csv_.flush();
  }

  void write(const MetricsRecord& m) {
    jsonl_ << metrics_json(m, wall_clock_).dump() << '\n';
    csv_ << metrics_csv_row(m, wall_clock_) << '\n';
    jsonl_.flush();
    csv_.flush();
    if (!jsonl_ || !csv_) throw IoError("metrics write failed");
  }

 private:
  bool wall_clock_;
  std::ofstream jsonl_;
  std::ofstream csv_;
};

/// Trailing moving average; the first window-1 entries average the available
/// prefix.
inline std::vector<double> smooth_metrics(std::span<const double> series, std::size_t window = 50) {
  if (window < 1) throw InvalidArgument("window must be >= 1");
  std::vector<double> out(series.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    sum += series[i];
    if (i >= window) sum -= series[i - window];
    const std::size_t n = std::min(i + 1, window);
    out[i] = window == 1 ? series[i] : sum / static_cast<double>(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy environment

/// Contexts are persona ids. The pointwise oracle looks for the persona's
/// target symbol; the listwise oracle ranks five persona "job" symbols by how
/// often each occurs.
struct ToyEnvironment {
  policy::ToyPolicyShape shape{10, 16, 4, true, std::nullopt};
  /// Initial logit of the stop symbol: the toy analogue of asking for a
  /// concise answer.
  double stop_bias = 1.5;
  std::vector<TokenId> targets;
  /// Logprob analogue: reward-model margin = slope * occurrences - offset.
  double margin_per_occurrence = 0.25;
  double margin_offset = 1.0;
  std::vector<std::array<TokenId, kListwiseArity>> list_symbols;
  std::vector<std::array<ActionLabel, kListwiseArity>> list_labels;
  /// Added to the base reward of multi-paragraph rollouts.
  double paragraph_bonus = 0.0;
  std::vector<std::size_t> train_contexts;
  std::vector<std::size_t> val_contexts;

  void validate() const {
    shape.validate();
    const auto c = shape.num_contexts;
    if (targets.size() != c) throw ConfigError("toy environment needs one target per context");
    if (list_symbols.size() != c || list_labels.size() != c)
      throw ConfigError("toy environment needs one listwise set per context");
    auto check = [&](TokenId s) {
      if (s <= policy::ToyPolicy::kStop || s >= static_cast<TokenId>(shape.vocab_size) ||
          (shape.paragraph_symbol && *shape.paragraph_symbol == s))
        throw ConfigError("toy symbol out of range or reserved: " + std::to_string(s));
    };
    for (auto t : targets) check(t);
    for (const auto& set : list_symbols)
      for (auto s : set) check(s);
    if (train_contexts.empty()) throw ConfigError("toy environment has no training samples");
    for (auto x : train_contexts)
      if (x >= c) throw ConfigError("training sample context out of range");
    for (auto x : val_contexts)
      if (x >= c) throw ConfigError("validation sample context out of range");
  }

  policy::ToyPolicy initial_policy() const {
    policy::ToyPolicy p(shape);
    for (std::size_t ctx = 0; ctx < shape.num_contexts; ++ctx)
      for (std::size_t pos = 0; pos < p.slots(); ++pos) p.logit(ctx, pos, policy::ToyPolicy::kStop) = stop_bias;
    return p;
  }
};

struct ToyEnvironmentOptions {
  std::size_t vocab_size = 10;
  std::size_t max_length = 16;
  std::size_t num_contexts = 4;
  bool per_position = true;
  std::optional<TokenId> paragraph_symbol;
  double stop_bias = 1.5;
  double margin_per_occurrence = 0.25;
  double margin_offset = 1.0;
  double paragraph_bonus = 0.0;
  std::size_t train_size = 1000;
  std::size_t val_size = 64;
  std::uint64_t data_seed = 1;
};

/// Token-finding environment: context c's target is the c-th non-reserved
/// symbol; its five listwise symbols are consecutive non-reserved symbols
/// with a seeded mixed label assignment.
inline ToyEnvironment make_token_finding(const ToyEnvironmentOptions& o) {
  ToyEnvironment env;
  env.shape = {o.vocab_size, o.max_length, o.num_contexts, o.per_position, o.paragraph_symbol};
  env.stop_bias = o.stop_bias;
  env.margin_per_occurrence = o.margin_per_occurrence;
  env.margin_offset = o.margin_offset;
  env.paragraph_bonus = o.paragraph_bonus;
  std::vector<TokenId> usable;
  for (TokenId s = 1; s < static_cast<TokenId>(o.vocab_size); ++s)
    if (!o.paragraph_symbol || *o.paragraph_symbol != s) usable.push_back(s);
  if (usable.size() < kListwiseArity) throw ConfigError("toy vocabulary too small for listwise symbols");
  Rng rng(derive_seed(o.data_seed, 0x70E));
  for (std::size_t c = 0; c < o.num_contexts; ++c) {
    env.targets.push_back(usable[c % usable.size()]);
    std::array<TokenId, kListwiseArity> syms{};
    for (std::size_t k = 0; k < kListwiseArity; ++k) syms[k] = usable[(c + k) % usable.size()];
    std::array<ActionLabel, kListwiseArity> labels{ActionLabel::apply, ActionLabel::view, ActionLabel::view,
                                                   ActionLabel::skip, ActionLabel::skip};
    rng.shuffle(labels.begin(), labels.end());
    env.list_symbols.push_back(syms);
    env.list_labels.push_back(labels);
  }
  for (std::size_t i = 0; i < o.train_size; ++i) env.train_contexts.push_back(rng.below(o.num_contexts));
  for (std::size_t i = 0; i < o.val_size; ++i) env.val_contexts.push_back(i % o.num_contexts);
  env.validate();
  return env;
}

inline std::size_t count_symbol(std::span<const TokenId> tokens, TokenId s) {
  return static_cast<std::size_t>(std::count(tokens.begin(), tokens.end(), s));
}

/// Ranking the toy oracle reads off a rollout: the five symbols by
/// descending occurrence count, ties by position in the list.
inline std::vector<std::size_t> toy_ranking(const ToyEnvironment& env, std::size_t ctx, std::span<const TokenId> tokens) {
  std::array<std::size_t, kListwiseArity> counts{};
  for (std::size_t k = 0; k < kListwiseArity; ++k) counts[k] = count_symbol(tokens, env.list_symbols[ctx][k]);
  std::vector<std::size_t> order(kListwiseArity);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  return order;
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Base reward from the scripted oracle, before length and format terms.
inline reward::Scored toy_base_reward(const ToyEnvironment& env, RewardMode mode, std::size_t ctx, const Rollout& r) {
  reward::Scored s;
  switch (mode) {
    case RewardMode::pointwise_string: {
      const bool present = count_symbol(r.tokens, env.targets[ctx]) > 0;
      s = reward::pointwise_string_reward(present ? "yes" : "no", 1);
      break;
    }
    case RewardMode::pointwise_logprob: {
      const double m = env.margin_per_occurrence * static_cast<double>(count_symbol(r.tokens, env.targets[ctx])) -
                       env.margin_offset;
      s = reward::pointwise_logprob_reward(-softplus(-m), -softplus(m), 1);
      break;
    }
    case RewardMode::listwise: {
      const auto order = toy_ranking(env, ctx, r.tokens);
      s.value = reward::listwise_reward(order, env.list_labels[ctx]);
      break;
    }
  }
  if (env.paragraph_bonus != 0.0 && reward::paragraph_count(r.text) >= 2) s.value += env.paragraph_bonus;
  return s;
}

inline RewardBreakdown score_toy(const ToyEnvironment& env, RewardMode mode, std::size_t ctx, const Rollout& r,
                                 const reward::ComposeOptions& opts) {
  const auto base = toy_base_reward(env, mode, ctx, r);
  return reward::compose_total(base.value, r.token_count, r.text, opts, base.flags);
}

/// Exact probability that the policy emits `symbol` at least once before
/// stopping: sum over positions of P(no stop and no symbol so far) * P(symbol).
inline double presence_probability(const policy::ToyPolicy& p, std::size_t ctx, TokenId symbol) {
  double alive = 1.0, hit = 0.0;
  for (std::size_t t = 0; t < p.max_length(); ++t) {
    const auto probs = p.step_probabilities(ctx, t);
    const double ps = probs[static_cast<std::size_t>(symbol)];
    hit += alive * ps;
    alive *= 1.0 - ps - probs[policy::ToyPolicy::kStop];
  }
  return hit;
}

/// Exact expected rollout length (stop symbol included).
inline double expected_length(const policy::ToyPolicy& p, std::size_t ctx) {
  double alive = 1.0, len = 0.0;
  for (std::size_t t = 0; t < p.max_length(); ++t) {
    len += alive;
    alive *= 1.0 - p.step_probabilities(ctx, t)[policy::ToyPolicy::kStop];
  }
  return len;
}

/// Chance level of the pointwise-string oracle under `p`, averaged over the
/// given contexts. Exact when no length or format term can fire.
inline double chance_level(const ToyEnvironment& env, const policy::ToyPolicy& p, std::span<const std::size_t> contexts) {
  if (contexts.empty()) throw InvalidArgument("no contexts");
  double s = 0.0;
  for (auto c : contexts) s += presence_probability(p, c, env.targets[c]);
  return s / static_cast<double>(contexts.size());
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalSummary {
  std::size_t count = 0;
  double mean_reward = 0.0;
  double stderr_reward = 0.0;  // bootstrap
  double mean_length = 0.0;
  double parse_failure_rate = 0.0;
};

/// Bootstrap standard error of the mean.
inline double bootstrap_stderr(std::span<const double> xs, std::size_t resamples, std::uint64_t seed) {
  if (xs.size() < 2 || resamples < 2) return 0.0;
  Rng rng(seed);
  std::vector<double> means;
  means.reserve(resamples);
  for (std::size_t b = 0; b < resamples; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += xs[rng.below(xs.size())];
    means.push_back(s / static_cast<double>(xs.size()));
  }
  const double m = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
  double v = 0.0;
  for (double x : means) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(means.size() - 1));
}

inline EvalSummary summarize(std::span<const double> rewards, std::span<const double> lengths, std::size_t parse_failures,
                             std::size_t resamples, std::uint64_t seed) {
  if (rewards.empty()) throw InvalidArgument("validation set is empty");
  EvalSummary s;
  s.count = rewards.size();
  s.mean_reward = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
  s.mean_length = lengths.empty() ? 0.0
                                  : std::accumulate(lengths.begin(), lengths.end(), 0.0) / static_cast<double>(lengths.size());
  s.parse_failure_rate = static_cast<double>(parse_failures) / static_cast<double>(rewards.size());
  s.stderr_reward = bootstrap_stderr(rewards, resamples, seed);
  return s;
}

/// Samples `per_context` rollouts for every validation context from a fixed
/// seed; no parameters change. Rewards are per sample (mean over its rollouts).
inline EvalSummary evaluate(const policy::ToyPolicy& p, const ToyEnvironment& env, std::span<const std::size_t> contexts,
                            const TrainConfig& cfg, std::size_t bootstrap_resamples = 0) {
  if (contexts.empty()) throw InvalidArgument("validation set is empty");
  Rng rng(derive_seed(cfg.seed, 0xE7A1));
  const auto opts = cfg.compose_options();
  std::vector<double> rewards, lengths;
  std::size_t failures = 0, rollouts = 0;
  for (auto c : contexts) {
    double sum = 0.0;
    for (const auto& r : p.sample(c, 1.0, cfg.eval_samples_per_context, rng)) {
      const auto b = score_toy(env, cfg.reward_mode, c, r, opts);
      sum += b.total;
      lengths.push_back(static_cast<double>(r.token_count));
      if (b.flags.has(RewardFlag::parse_failure)) ++failures;
      ++rollouts;
    }
    rewards.push_back(sum / static_cast<double>(cfg.eval_samples_per_context));
  }
  auto s = summarize(rewards, lengths, 0, bootstrap_resamples, derive_seed(cfg.seed, 0xB007));
  s.parse_failure_rate = static_cast<double>(failures) / static_cast<double>(rollouts);
  return s;
}

// ---------------------------------------------------------------------------
// Toy training

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics + checkpoint files
  const std::atomic<bool>* stop = nullptr;       // checked between steps
  std::function<void(const MetricsRecord&)> on_step;
};

struct TrainResult {
  policy::Checkpoint checkpoint;
  std::vector<MetricsRecord> history;
  bool completed = false;
  std::size_t total_steps = 0;
  /// Largest |ratio - 1| seen on the first update pass of any step. Exactly
  /// zero: every mini-batch is scored against its own fresh snapshot.
  double first_pass_max_ratio_dev = 0.0;
};

inline std::size_t planned_steps(const TrainConfig& cfg, const ToyEnvironment& env) {
  const std::size_t groups_per_step = cfg.mini_batch / cfg.group_size();
  const std::size_t groups_per_epoch = env.train_contexts.size();
  const std::size_t per_epoch = std::max<std::size_t>(1, groups_per_epoch / std::max<std::size_t>(1, groups_per_step));
  std::size_t total = per_epoch * cfg.epochs;
  if (cfg.max_steps) total = std::min(total, cfg.max_steps);
  return total;
}

inline void save_checkpoint(const std::filesystem::path& dir, const policy::Checkpoint& c) {
  write_file_atomic(dir / "checkpoint.json", policy::serialize_checkpoint(c));
}

/// Group built from one context: rollouts from the snapshot, composed
/// rewards, advantages and reference log-probabilities.
struct ToyGroup {
  std::size_t context = 0;
  GroupBatch batch;
  std::vector<RewardBreakdown> breakdowns;
};

inline ToyGroup make_toy_group(const ToyEnvironment& env, const TrainConfig& cfg, const policy::ToyPolicy& old,
                               const policy::ToyPolicy& ref, std::size_t ctx, Rng& rng, std::size_t serial) {
  ToyGroup g;
  g.context = ctx;
  g.batch.sample_id = "toy-" + std::to_string(serial);
  g.batch.rollouts = old.sample(ctx, 1.0, cfg.group_size(), rng);
  const auto opts = cfg.compose_options();
  for (const auto& r : g.batch.rollouts) {
    g.breakdowns.push_back(score_toy(env, cfg.reward_mode, ctx, r, opts));
    g.batch.rewards.push_back(g.breakdowns.back().total);
    g.batch.ref_logprobs.push_back(ref.logprob_of(ctx, r.tokens));
  }
  g.batch.advantages = optim::group_advantages(g.batch.rewards, cfg.optimizer.normalization_mode);
  return g;
}

inline TrainResult run_toy_training(const TrainConfig& cfg, const ToyEnvironment& env, const RunOptions& opts = {}) {
  cfg.validate();
  env.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  policy::ToyPolicy current = env.initial_policy();
  const policy::FrozenPolicy ref = policy::snapshot(current);

  std::optional<MetricsSink> sink;
  if (opts.out_dir) sink.emplace(*opts.out_dir, cfg.metrics_wall_clock);

  TrainResult result;
  result.total_steps = planned_steps(cfg, env);
  const std::size_t groups_per_step = cfg.mini_batch / cfg.group_size();
  const std::size_t groups_per_micro = cfg.micro_batch / cfg.group_size();
  std::vector<std::size_t> order(env.train_contexts.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::size_t serial = 0;

  auto checkpoint_now = [&](std::size_t step) {
    result.checkpoint = policy::Checkpoint{current, rng.state(), step};
    if (opts.out_dir) save_checkpoint(*opts.out_dir, result.checkpoint);
  };
  checkpoint_now(0);

  for (std::size_t step = 1; step <= result.total_steps; ++step) {
    if (opts.stop && opts.stop->load()) break;

    const policy::FrozenPolicy old = policy::snapshot(current);
    std::vector<ToyGroup> groups;
    groups.reserve(groups_per_step);
    for (std::size_t k = 0; k < groups_per_step; ++k) {
      if (cursor == order.size()) {
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      const std::size_t ctx = env.train_contexts[order[cursor++]];
      groups.push_back(make_toy_group(env, cfg, *old, *ref, ctx, rng, serial++));
    }

    MetricsRecord m;
    m.step = step;
    std::size_t rollouts = 0, parse_failures = 0, multi_para = 0;
    double length_sum = 0.0, reward_sum = 0.0, entropy_sum = 0.0;
    for (const auto& g : groups) {
      for (std::size_t i = 0; i < g.batch.size(); ++i) {
        const auto& r = g.batch.rollouts[i];
        reward_sum += g.breakdowns[i].total;
        length_sum += static_cast<double>(r.token_count);
        if (g.breakdowns[i].flags.has(RewardFlag::parse_failure)) ++parse_failures;
        if (reward::paragraph_count(r.text) >= 2) ++multi_para;
        std::vector<double> ent;
        for (std::size_t t = 0; t < r.tokens.size(); ++t) ent.push_back(old->step_entropy(g.context, t));
        entropy_sum += optim::mean_step_entropy(ent);
        ++rollouts;
      }
    }

    const double scale = cfg.batch_reduction == BatchReduction::mean ? 1.0 / static_cast<double>(groups.size()) : 1.0;
    for (std::size_t pass = 0; pass < cfg.updates_per_batch; ++pass) {
      std::vector<double> grad(current.parameter_count(), 0.0);
      double kl_tokens = 0.0, kl_weighted = 0.0;
      std::size_t clipped = 0, tokens = 0;
      for (std::size_t start = 0; start < groups.size(); start += groups_per_micro) {
        std::vector<double> micro(current.parameter_count(), 0.0);
        const std::size_t end = std::min(groups.size(), start + groups_per_micro);
        for (std::size_t gi = start; gi < end; ++gi) {
          const auto& g = groups[gi];
          const auto og = objective_and_gradient(current, g.context, g.batch, cfg.optimizer);
          for (std::size_t p = 0; p < micro.size(); ++p) micro[p] += og.grad[p];
          kl_weighted += og.result.mean_kl * static_cast<double>(og.result.total_tokens);
          kl_tokens += static_cast<double>(og.result.total_tokens);
          clipped += og.result.clipped_tokens;
          tokens += og.result.total_tokens;
          if (pass == 0) {
            for (std::size_t i = 0; i < g.batch.size(); ++i) {
              const auto lp = current.logprob_of(g.context, g.batch.rollouts[i].tokens);
              for (std::size_t t = 0; t < lp.size(); ++t)
                result.first_pass_max_ratio_dev = std::max(
                    result.first_pass_max_ratio_dev,
                    std::abs(optim::token_ratio(lp[t], g.batch.rollouts[i].token_logprobs[t]) - 1.0));
            }
          }
        }
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += micro[p];
      }
      if (pass == 0) {
        m.mean_kl = kl_tokens > 0 ? kl_weighted / kl_tokens : 0.0;
        m.clip_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
      }
      if (scale != 1.0)
        for (double& x : grad) x *= scale;
      current.apply_update(grad, cfg.learning_rate);
    }

    m.train_reward = reward_sum / static_cast<double>(rollouts);
    m.mean_length = length_sum / static_cast<double>(rollouts);
    m.entropy = entropy_sum / static_cast<double>(rollouts);
    m.parse_failure_rate = static_cast<double>(parse_failures) / static_cast<double>(rollouts);
    m.multi_paragraph_rate = static_cast<double>(multi_para) / static_cast<double>(rollouts);
    if (!env.val_contexts.empty() && cfg.eval_every && (step % cfg.eval_every == 0 || step == result.total_steps))
      m.val_reward = evaluate(current, env, env.val_contexts, cfg).mean_reward;
    m.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    result.history.push_back(m);
    if (sink) sink->write(m);
    if (cfg.checkpoint_every && step % cfg.checkpoint_every == 0) checkpoint_now(step);
    else result.checkpoint = policy::Checkpoint{current, rng.state(), step};
    if (opts.on_step) opts.on_step(m);
  }

  const std::size_t done = result.history.empty() ? 0 : result.history.back().step;
  checkpoint_now(done);
  result.completed = done == result.total_steps;
  return result;
}

// ---------------------------------------------------------------------------
// Remote rollouts

using Sample = std::variant<PointwiseSample, ListwiseSample>;

inline const MemberContext& context_of(const Sample& s) {
  return std::visit([](const auto& x) -> const MemberContext& { return x.context; }, s);
}

struct RemoteConfig {
  RewardMode reward_mode = RewardMode::pointwise_string;
  double temperature = 1.0;
  int max_tokens = 256;
  bool explicit_length_prompt = true;
  reward::ComposeOptions compose;
  optim::OptimizerConfig optimizer;
  std::uint64_t seed = 1;
  std::size_t workers = 4;

  void validate() const {
    optimizer.validate();
    if (optimizer.group_size < 2) throw ConfigError("group_size must be >= 2");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
  }
};

/// Scores one synopsis with the reward model. Listwise parse failures and
/// unanswerable (blank) synopses give reward 0 flagged parse_failure; other
/// backend errors propagate.
inline RewardBreakdown score_synopsis(backend::BackendClient& reward_model, RewardMode mode, const Sample& sample,
                                      const std::string& text, std::size_t token_count,
                                      const reward::ComposeOptions& opts, std::uint64_t seed = 0) {
  reward::Scored base;
  if (detail::blank(text)) {
    base = {0.0, {RewardFlag::parse_failure}};
  } else if (mode == RewardMode::listwise) {
    const auto* s = std::get_if<ListwiseSample>(&sample);
    if (!s) throw InvalidArgument("listwise reward needs listwise samples");
    try {
      const auto order = reward_model.score_listwise(prompts::render_listwise_prompt(text, s->target_jobs), seed);
      base.value = reward::listwise_reward(order, s->labels);
    } catch (const ParseError&) {
      base = {0.0, {RewardFlag::parse_failure}};
    }
  } else {
    const auto* s = std::get_if<PointwiseSample>(&sample);
    if (!s) throw InvalidArgument("pointwise reward needs pointwise samples");
    if (!s->target_job) throw InvalidArgument("pointwise sample has no target job");
    const auto scored = reward_model.score_pointwise(prompts::render_pointwise_prompt(text, *s->target_job), seed);
    base = mode == RewardMode::pointwise_string ? reward::pointwise_string_reward(scored.predicted_word, s->label)
                                                : reward::pointwise_logprob_reward(scored.logp_yes, scored.logp_no, s->label);
  }
  return reward::compose_total(base.value, token_count, text, opts, base.flags);
}

struct RemoteSampleResult {
  std::optional<GroupBatch> batch;
  std::vector<RewardBreakdown> breakdowns;
  std::string error;
};

struct RemoteSummary {
  std::size_t samples = 0;
  std::size_t failed_samples = 0;
  std::size_t rollouts = 0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  double parse_failure_rate = 0.0;
  double logprob_missing_rate = 0.0;
  double entropy_proxy = 0.0;
  double failure_rate() const { return samples ? static_cast<double>(failed_samples) / static_cast<double>(samples) : 0.0; }
};

inline Json summary_json(const RemoteSummary& s) {
  return Json{{"samples", s.samples},
              {"failed_samples", s.failed_samples},
              {"failure_rate", s.failure_rate()},
              {"rollouts", s.rollouts},
              {"mean_reward", s.mean_reward},
              {"mean_length", s.mean_length},
              {"parse_failure_rate", s.parse_failure_rate},
              {"logprob_missing_rate", s.logprob_missing_rate},
              {"entropy_proxy", s.entropy_proxy}};
}

struct RemoteResult {
  std::vector<RemoteSampleResult> per_sample;
  RemoteSummary summary;
  std::vector<std::string> errors;

  /// Batch-export JSONL for every successful sample, in sample order.
  std::string export_jsonl(const optim::OptimizerConfig& cfg) const {
    std::string out;
    for (const auto& s : per_sample)
      if (s.batch)
        for (const auto& rec : optim::export_records(*s.batch, cfg)) out += rec.dump() + "\n";
    return out;
  }
};

inline std::string sample_id_of(const Sample& s, std::size_t index) {
  return context_of(s).member_id + "#" + std::to_string(index);
}

/// Actor rollouts, reward-model scores, composed totals and advantages for
/// every sample; no policy update. Reference log-probabilities are the
/// actor's own sampling log-probabilities.
inline RemoteResult run_remote_rollout(const RemoteConfig& cfg, backend::BackendClient& actor,
                                       backend::BackendClient& reward_model, const std::vector<Sample>& samples) {
  cfg.validate();
  RemoteResult res;
  res.per_sample.resize(samples.size());
  const std::size_t g = cfg.optimizer.group_size;
  backend::for_each_index_concurrent(samples.size(), cfg.workers, [&](std::size_t i) {
    auto& out = res.per_sample[i];
    try {
      const auto prompt = prompts::render_actor_prompt(context_of(samples[i]), cfg.explicit_length_prompt);
      const std::uint64_t seed = derive_seed(cfg.seed, i);
      auto rollouts = actor.sample_actor(prompt, g, cfg.temperature, cfg.max_tokens, seed);
      GroupBatch b;
      b.sample_id = sample_id_of(samples[i], i);
      for (std::size_t k = 0; k < rollouts.size(); ++k) {
        const auto& r = rollouts[k];
        out.breakdowns.push_back(
            score_synopsis(reward_model, cfg.reward_mode, samples[i], r.text, r.token_count, cfg.compose, seed + k));
        b.rewards.push_back(out.breakdowns.back().total);
        b.ref_logprobs.push_back(r.token_logprobs);
      }
      b.rollouts = std::move(rollouts);
      b.advantages = optim::group_advantages(b.rewards, cfg.optimizer.normalization_mode);
      out.batch = std::move(b);
    } catch (const BackendError& e) {
      out.error = e.what();
      out.breakdowns.clear();
    } catch (const InvalidArgument& e) {
      out.error = e.what();
      out.breakdowns.clear();
    }
  });

  auto& s = res.summary;
  s.samples = samples.size();
  double reward_sum = 0.0, length_sum = 0.0, ent_sum = 0.0;
  std::size_t parse = 0, missing = 0, ent_n = 0;
  for (std::size_t i = 0; i < res.per_sample.size(); ++i) {
    const auto& p = res.per_sample[i];
    if (!p.batch) {
      ++s.failed_samples;
      res.errors.push_back("sample " + std::to_string(i) + ": " + p.error);
      continue;
    }
    for (std::size_t k = 0; k < p.batch->size(); ++k) {
      const auto& r = p.batch->rollouts[k];
      reward_sum += p.breakdowns[k].total;
      length_sum += static_cast<double>(r.token_count);
      if (p.breakdowns[k].flags.has(RewardFlag::parse_failure)) ++parse;
      if (p.breakdowns[k].flags.has(RewardFlag::logprob_missing_both)) ++missing;
      if (!r.token_logprobs.empty()) {
        ent_sum += optim::sampled_entropy_proxy(r.token_logprobs);
        ++ent_n;
      }
      ++s.rollouts;
    }
  }
  if (s.rollouts) {
    const double n = static_cast<double>(s.rollouts);
    s.mean_reward = reward_sum / n;
    s.mean_length = length_sum / n;
    s.parse_failure_rate = static_cast<double>(parse) / n;
    s.logprob_missing_rate = static_cast<double>(missing) / n;
  }
  if (ent_n) s.entropy_proxy = ent_sum / static_cast<double>(ent_n);
  return res;
}

/// Per-sample mean reward from a batch export, in first-seen sample order.
inline EvalSummary evaluate_export(const std::string& jsonl, std::size_t bootstrap_resamples, std::uint64_t seed) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, std::size_t>> per_sample;
  std::vector<double> lengths;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto end = jsonl.find('\n', pos);
    if (end == std::string::npos) end = jsonl.size();
    const auto line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (detail::blank(line)) continue;
    try {
      const auto j = Json::parse(line);
      if (j.at("schema").get<std::string>() != optim::kBatchSchema) throw SchemaError("unknown batch schema", lineno);
      const auto id = j.at("sample_id").get<std::string>();
      auto [it, fresh] = per_sample.try_emplace(id, 0.0, 0);
      if (fresh) order.push_back(id);
      it->second.first += j.at("reward").get<double>();
      it->second.second += 1;
      lengths.push_back(static_cast<double>(j.at("tokens").size()));
    } catch (const Json::exception& e) {
      throw SchemaError(e.what(), lineno);
    }
  }
  std::vector<double> rewards;
  for (const auto& id : order) {
    const auto& [sum, n] = per_sample.at(id);
    rewards.push_back(sum / static_cast<double>(n));
  }
  return summarize(rewards, lengths, 0, bootstrap_resamples, seed);
}

}  // namespace engagerl::trainer
