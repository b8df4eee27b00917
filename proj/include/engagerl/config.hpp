#pragma once

// Command-line / config-file bindings. One INI file carries a section per
// subcommand ([train-toy], [gen-data], ...); keys are the long flag names
// without the leading dashes, and flags given on the command line win.

#include <CLI11.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "engagerl/backend.hpp"
#include "engagerl/dataset.hpp"
#include "engagerl/trainer.hpp"

namespace engagerl::config {

inline const std::map<std::string, trainer::RewardMode> kRewardModes{
    {"pointwise_string", trainer::RewardMode::pointwise_string},
    {"pointwise_logprob", trainer::RewardMode::pointwise_logprob},
    {"listwise", trainer::RewardMode::listwise}};

inline const std::map<std::string, optim::NormalizationMode> kNormalizationModes{
    {"grpo", optim::NormalizationMode::grpo}, {"dr_grpo", optim::NormalizationMode::dr_grpo}};

inline const std::map<std::string, trainer::BatchReduction> kBatchReductions{
    {"sum", trainer::BatchReduction::sum}, {"mean", trainer::BatchReduction::mean}};

template <typename E>
CLI::Option* add_enum_option(CLI::App& app, const std::string& name, E& target, const std::map<std::string, E>& names,
                             const std::string& description) {
  return app
      .add_option_function<std::string>(
          name, [&target, &names](const std::string& v) { target = names.at(v); }, description)
      ->check(CLI::IsMember(names));
}

inline void bind_optimizer(CLI::App& app, optim::OptimizerConfig& o) {
  app.add_option("--group-size", o.group_size, "Rollouts per context (G)")->capture_default_str();
  app.add_option("--eps-low", o.eps_low, "Lower ratio clip")->capture_default_str();
  app.add_option("--eps-high", o.eps_high, "Upper ratio clip")->capture_default_str();
  app.add_option("--kl-coeff", o.kl_coeff, "KL penalty coefficient")->capture_default_str();
  add_enum_option(app, "--normalization", o.normalization_mode, kNormalizationModes, "grpo or dr_grpo");
  app.add_option("--length-norm-constant", o.length_norm_constant, "Dr.GRPO constant C")->capture_default_str();
}

inline void bind_reward_mode(CLI::App& app, trainer::RewardMode& m) {
  add_enum_option(app, "--reward-mode", m, kRewardModes, "pointwise_string, pointwise_logprob or listwise");
}

inline void bind_compose(CLI::App& app, reward::ComposeOptions& c) {
  app.add_option("--length-budget", c.budget, "Token budget before the length loss applies")->capture_default_str();
  app.add_option("--lambda", c.lambda, "Length loss weight")->capture_default_str();
  app.add_option("--format-penalty", c.apply_format, "Apply the multi-paragraph penalty")->capture_default_str();
}

inline void bind_train(CLI::App& app, trainer::TrainConfig& t) {
  app.add_option("--epochs", t.epochs)->capture_default_str();
  app.add_option("--mini-batch", t.mini_batch, "Rollouts per update")->capture_default_str();
  app.add_option("--micro-batch", t.micro_batch, "Rollouts per accumulation chunk")->capture_default_str();
  app.add_option("--learning-rate", t.learning_rate)->capture_default_str();
  bind_reward_mode(app, t.reward_mode);
  app.add_option("--length-budget", t.length_budget)->capture_default_str();
  app.add_option("--lambda", t.lambda)->capture_default_str();
  app.add_option("--format-penalty", t.format_penalty_on)->capture_default_str();
  bind_optimizer(app, t.optimizer);
  app.add_option("--seed", t.seed)->capture_default_str();
  app.add_option("--max-steps", t.max_steps, "0 for no cap")->capture_default_str();
  app.add_option("--updates-per-batch", t.updates_per_batch)->capture_default_str();
  add_enum_option(app, "--batch-reduction", t.batch_reduction, kBatchReductions, "sum or mean over groups");
  app.add_option("--eval-every", t.eval_every, "0 disables validation")->capture_default_str();
  app.add_option("--eval-samples", t.eval_samples_per_context)->capture_default_str();
  app.add_option("--checkpoint-every", t.checkpoint_every)->capture_default_str();
  app.add_option("--wall-clock", t.metrics_wall_clock, "Record wall-clock seconds in metrics")->capture_default_str();
}

inline void bind_toy_env(CLI::App& app, trainer::ToyEnvironmentOptions& e) {
  app.add_option("--vocab-size", e.vocab_size)->capture_default_str();
  app.add_option("--max-length", e.max_length)->capture_default_str();
  app.add_option("--num-contexts", e.num_contexts)->capture_default_str();
  app.add_option("--per-position", e.per_position)->capture_default_str();
  app.add_option_function<int>(
         "--paragraph-symbol",
         [&e](const int& s) { e.paragraph_symbol = s < 0 ? std::nullopt : std::optional<TokenId>(s); },
         "Symbol rendered as a paragraph break (-1: none)")
      ->default_str("-1");
  app.add_option("--stop-bias", e.stop_bias, "Initial stop-symbol logit")->capture_default_str();
  app.add_option("--margin-per-occurrence", e.margin_per_occurrence)->capture_default_str();
  app.add_option("--margin-offset", e.margin_offset)->capture_default_str();
  app.add_option("--paragraph-bonus", e.paragraph_bonus)->capture_default_str();
  app.add_option("--train-size", e.train_size)->capture_default_str();
  app.add_option("--val-size", e.val_size)->capture_default_str();
  app.add_option("--data-seed", e.data_seed)->capture_default_str();
}

inline void bind_generator(CLI::App& app, dataset::GeneratorConfig& g) {
  app.add_option("--seed", g.seed)->capture_default_str();
  app.add_option("--member-count", g.member_count)->capture_default_str();
  app.add_option("--min-jobs", g.min_jobs_per_member)->capture_default_str();
  app.add_option("--max-jobs", g.max_jobs_per_member)->capture_default_str();
  app.add_option("--p-apply", g.p_apply)->capture_default_str();
  app.add_option("--p-view", g.p_view)->capture_default_str();
  app.add_option("--p-skip", g.p_skip)->capture_default_str();
  app.add_option("--persona-count", g.persona_count)->capture_default_str();
  app.add_option("--persona-affinity", g.persona_affinity)->capture_default_str();
  app.add_option("--observation-days", g.observation_days)->capture_default_str();
  app.add_option("--validation-days", g.validation_days)->capture_default_str();
  app.add_option("--context-tokens", g.context_tokens)->capture_default_str();
  app.add_option("--catalog-size", g.catalog_size, "0: 60 jobs per persona")->capture_default_str();
  app.add_option("--start-timestamp", g.start_timestamp)->capture_default_str();
}

/// Endpoint options under a prefix ("actor" or "reward"): --actor-url etc.
/// The secret only ever comes from the environment.
inline void bind_endpoint(CLI::App& app, const std::string& prefix, backend::BackendEndpoint& e) {
  const std::string p = "--" + prefix + "-";
  app.add_option(p + "url", e.base_url, "Base URL, e.g. http://host:8000/v1");
  app.add_option(p + "model", e.model);
  app.add_option(p + "timeout", e.timeout_seconds)->capture_default_str();
  app.add_option(p + "retries", e.max_retries)->capture_default_str();
  app.add_option(p + "key-env", e.api_key_env, "Environment variable holding the bearer token")->capture_default_str();
  app.add_option(p + "top-logprobs", e.top_logprobs)->capture_default_str();
  app.add_option(p + "concurrency", e.max_concurrency)->capture_default_str();
  app.add_option(p + "listwise-max-tokens", e.listwise_max_tokens)->capture_default_str();
}

/// Settings of one toy training run.
struct ToyRunSettings {
  trainer::TrainConfig train;
  trainer::ToyEnvironmentOptions env;
  std::filesystem::path out_dir = "runs/toy";

  void validate() const {
    train.validate();
    if (env.train_size < 1) throw ConfigError("train_size must be >= 1");
  }
};

inline void bind_toy_run(CLI::App& app, ToyRunSettings& s) {
  bind_train(app, s.train);
  bind_toy_env(app, s.env);
  app.add_option("--out", s.out_dir, "Run directory")->capture_default_str();
}

inline Json train_config_json(const trainer::TrainConfig& t) {
  return Json{{"epochs", t.epochs},
              {"mini_batch", t.mini_batch},
              {"micro_batch", t.micro_batch},
              {"learning_rate", t.learning_rate},
              {"reward_mode", trainer::to_string(t.reward_mode)},
              {"length_budget", t.length_budget},
              {"lambda", t.lambda},
              {"format_penalty_on", t.format_penalty_on},
              {"optimizer", optim::config_json(t.optimizer)},
              {"seed", t.seed},
              {"max_steps", t.max_steps},
              {"updates_per_batch", t.updates_per_batch},
              {"batch_reduction", trainer::to_string(t.batch_reduction)},
              {"eval_every", t.eval_every},
              {"eval_samples_per_context", t.eval_samples_per_context},
              {"checkpoint_every", t.checkpoint_every},
              {"metrics_wall_clock", t.metrics_wall_clock}};
}

inline Json toy_env_json(const trainer::ToyEnvironmentOptions& e) {
  return Json{{"vocab_size", e.vocab_size},
              {"max_length", e.max_length},
              {"num_contexts", e.num_contexts},
              {"per_position", e.per_position},
              {"paragraph_symbol", e.paragraph_symbol ? Json(*e.paragraph_symbol) : Json(nullptr)},
              {"stop_bias", e.stop_bias},
              {"margin_per_occurrence", e.margin_per_occurrence},
              {"margin_offset", e.margin_offset},
              {"paragraph_bonus", e.paragraph_bonus},
              {"train_size", e.train_size},
              {"val_size", e.val_size},
              {"data_seed", e.data_seed}};
}

inline Json generator_json(const dataset::GeneratorConfig& g) {
  return Json{{"seed", g.seed},
              {"member_count", g.member_count},
              {"min_jobs_per_member", g.min_jobs_per_member},
              {"max_jobs_per_member", g.max_jobs_per_member},
              {"p_apply", g.p_apply},
              {"p_view", g.p_view},
              {"p_skip", g.p_skip},
              {"persona_count", g.persona_count},
              {"persona_affinity", g.persona_affinity},
              {"observation_days", g.observation_days},
              {"validation_days", g.validation_days},
              {"context_tokens", g.context_tokens},
              {"catalog_size", g.catalog_size},
              {"start_timestamp", g.start_timestamp}};
}

/// Enables the --config option on `app`. Unknown config keys are errors.
inline void prepare_app(CLI::App& app) {
  app.set_config("--config", "", "INI file with one section per subcommand");
  app.allow_config_extras(CLI::config_extras_mode::error);
}

/// Loads the [train-toy] section of a config file, as the CLI would with no
/// flag overrides.
inline ToyRunSettings load_toy_settings(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  CLI::App app{"engagerl"};
  prepare_app(app);
  ToyRunSettings s;
  auto* sub = app.add_subcommand("train-toy");
  bind_toy_run(*sub, s);
  const std::string p = path.string();
  std::vector<std::string> args{"train-toy", p, "--config"};  // CLI11 wants reversed order
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    throw ConfigError(p + ": " + e.what());
  }
  s.validate();
  return s;
}

}  // namespace engagerl::config
