#pragma once

// The engagerl command-line tool. run_cli() is the whole program; the
// executable's main only forwards to it.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "engagerl/backend.hpp"
#include "engagerl/config.hpp"
#include "engagerl/dataset.hpp"
#include "engagerl/errors.hpp"
#include "engagerl/jsonl.hpp"
#include "engagerl/mock_backend.hpp"
#include "engagerl/policy.hpp"
#include "engagerl/trainer.hpp"

#ifndef ENGAGERL_VERSION
#define ENGAGERL_VERSION "0.0.0"
#endif

namespace engagerl::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitBackend = 4;
inline constexpr int kExitValidation = 5;
inline constexpr int kExitInterrupted = 130;

inline constexpr std::string_view kManifestSchema = "engagerl.manifest/v1";
inline constexpr std::string_view kVersion = ENGAGERL_VERSION;

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Reproducibility record of one run directory. Written atomically when the
/// run starts and rewritten when it ends.
struct RunManifest {
  std::string command;
  Json config = Json::object();
  Json seeds = Json::object();
  Json artifacts = Json::object();
  Json results = Json::object();
  std::string status = "running";
  std::string started_at;
  std::string finished_at;

  Json to_json() const {
    return Json{{"schema", kManifestSchema},
                {"command", command},
                {"version", kVersion},
                {"status", status},
                {"started_at", started_at},
                {"finished_at", finished_at.empty() ? Json(nullptr) : Json(finished_at)},
                {"config", config},
                {"seeds", seeds},
                {"artifacts", artifacts},
                {"results", results}};
  }

  void write(const fs::path& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_file_atomic(dir / "manifest.json", to_json().dump(2) + "\n");
  }

  void start(const fs::path& dir) {
    started_at = utc_now();
    status = "running";
    write(dir);
  }

  void finish(const fs::path& dir, std::string final_status) {
    status = std::move(final_status);
    finished_at = utc_now();
    write(dir);
  }
};

// ---------------------------------------------------------------------------
// Signals

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

extern "C" inline void engagerl_on_signal(int) { stop_flag().store(true); }

/// Routes SIGINT/SIGTERM to the stop flag for the lifetime of the guard.
class SignalGuard {
 public:
  SignalGuard() {
    stop_flag().store(false);
    prev_int_ = std::signal(SIGINT, engagerl_on_signal);
    prev_term_ = std::signal(SIGTERM, engagerl_on_signal);
  }
  ~SignalGuard() {
    std::signal(SIGINT, prev_int_);
    std::signal(SIGTERM, prev_term_);
  }
  SignalGuard(const SignalGuard&) = delete;
  SignalGuard& operator=(const SignalGuard&) = delete;

 private:
  void (*prev_int_)(int) = SIG_DFL;
  void (*prev_term_)(int) = SIG_DFL;
};

// ---------------------------------------------------------------------------
// Shared pieces

struct BackendOptions {
  backend::BackendEndpoint actor;
  backend::BackendEndpoint reward;
  std::optional<fs::path> mock_fixture;
};

struct Backends {
  std::shared_ptr<backend::MockResponder> responder;
  std::unique_ptr<backend::BackendClient> actor;
  std::unique_ptr<backend::BackendClient> reward;
};

inline Backends make_backends(BackendOptions o, bool need_actor) {
  Backends b;
  if (o.mock_fixture) {
    b.responder = backend::MockResponder::from_file(*o.mock_fixture);
    for (auto* e : {&o.actor, &o.reward}) {
      if (e->base_url.empty()) e->base_url = "mock://" + o.mock_fixture->filename().string();
      if (e->model.empty()) e->model = e == &o.actor ? "mock-actor" : "mock-judge";
    }
    b.actor = std::make_unique<backend::BackendClient>(o.actor, std::make_shared<backend::MockTransport>(b.responder));
    b.reward = std::make_unique<backend::BackendClient>(o.reward, std::make_shared<backend::MockTransport>(b.responder));
    return b;
  }
  if (need_actor) b.actor = std::make_unique<backend::BackendClient>(o.actor);
  b.reward = std::make_unique<backend::BackendClient>(o.reward);
  return b;
}

inline void bind_backends(CLI::App& app, BackendOptions& o, bool with_actor) {
  if (with_actor) config::bind_endpoint(app, "actor", o.actor);
  config::bind_endpoint(app, "reward", o.reward);
  app.add_option("--mock", o.mock_fixture, "Serve both endpoints from a mock fixture (JSON)");
}

inline Json backend_json(const BackendOptions& o, bool with_actor) {
  Json j{{"reward", backend::endpoint_json(o.reward)}};
  if (with_actor) j["actor"] = backend::endpoint_json(o.actor);
  j["mock_fixture"] = o.mock_fixture ? Json(o.mock_fixture->string()) : Json(nullptr);
  return j;
}

template <typename T>
std::vector<T> read_samples(const fs::path& path) {
  auto samples = read_jsonl<T>(path);
  if (samples.empty()) throw ValidationError(path.string() + ": sample file is empty");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto v = validate_sample(samples[i]);
    if (!v.ok()) throw ValidationError(path.string() + ": sample " + std::to_string(i + 1) + ": " + v.violations.front());
  }
  return samples;
}

inline std::vector<trainer::Sample> load_samples(const fs::path& path, trainer::RewardMode mode) {
  std::vector<trainer::Sample> out;
  if (mode == trainer::RewardMode::listwise) {
    for (auto& s : read_samples<ListwiseSample>(path)) out.emplace_back(std::move(s));
  } else {
    for (auto& s : read_samples<PointwiseSample>(path)) out.emplace_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenDataOptions {
  dataset::GeneratorConfig generator;
  fs::path out_dir = "data";
  unsigned threads = 1;
};

inline int cmd_gen_data(const GenDataOptions& o, std::ostream& out) {
  o.generator.validate();
  if (o.threads < 1) throw ConfigError("threads must be >= 1");
  RunManifest m;
  m.command = "gen-data";
  m.config = Json{{"generator", config::generator_json(o.generator)}, {"threads", o.threads}};
  m.seeds = Json{{"generator", o.generator.seed}};
  m.start(o.out_dir);
  const auto d = dataset::build_dataset(o.generator, o.threads);
  dataset::write_dataset(o.out_dir, d);
  for (auto f : dataset::kDatasetFiles) m.artifacts[std::string(f)] = std::string(f);
  m.results = Json{{"members", d.logs.size()},
                   {"train_pointwise", d.train_pointwise.size()},
                   {"train_listwise", d.train_listwise.size()},
                   {"val_pointwise", d.val_pointwise.size()},
                   {"val_listwise", d.val_listwise.size()},
                   {"cutoff", d.cutoff},
                   {"leakage_violations", dataset::leakage_audit(d).size()}};
  m.finish(o.out_dir, "complete");
  out << "wrote " << o.out_dir.string() << ": " << m.results.dump() << "\n";
  return kExitOk;
}

struct TrainToyOptions {
  config::ToyRunSettings settings;
  std::size_t interrupt_after = 0;  // debug: raise SIGINT after this step
};

inline int cmd_train_toy(const TrainToyOptions& o, std::ostream& out) {
  const auto& s = o.settings;
  s.validate();
  const auto env = trainer::make_token_finding(s.env);
  RunManifest m;
  m.command = "train-toy";
  m.config = Json{{"train", config::train_config_json(s.train)}, {"environment", config::toy_env_json(s.env)}};
  m.seeds = Json{{"train", s.train.seed}, {"data", s.env.data_seed}};
  m.artifacts = Json{{"metrics_jsonl", "metrics.jsonl"}, {"metrics_csv", "metrics.csv"}, {"checkpoint", "checkpoint.json"}};
  m.start(s.out_dir);

  SignalGuard guard;
  trainer::RunOptions ro;
  ro.out_dir = s.out_dir;
  ro.stop = &stop_flag();
  ro.on_step = [&](const trainer::MetricsRecord& r) {
    if (o.interrupt_after && r.step == o.interrupt_after) std::raise(SIGINT);
  };
  trainer::TrainResult r;
  try {
    r = trainer::run_toy_training(s.train, env, ro);
  } catch (...) {
    m.finish(s.out_dir, "failed");
    throw;
  }

  const double chance = trainer::chance_level(env, env.initial_policy(), env.val_contexts);
  std::vector<double> train;
  for (const auto& h : r.history) train.push_back(h.train_reward);
  const auto smooth = trainer::smooth_metrics(train, 50);
  m.results = Json{{"steps_completed", r.history.size()},
                   {"steps_planned", r.total_steps},
                   {"chance_level", chance},
                   {"final_train_reward_smoothed", smooth.empty() ? Json(nullptr) : Json(smooth.back())},
                   {"final_val_reward", r.history.empty() || !std::isfinite(r.history.back().val_reward)
                                            ? Json(nullptr)
                                            : Json(r.history.back().val_reward)},
                   {"checkpoint_step", r.checkpoint.step}};
  m.finish(s.out_dir, r.completed ? "complete" : "interrupted");
  out << (r.completed ? "completed " : "interrupted after ") << r.history.size() << " of " << r.total_steps
      << " steps; " << m.results.dump() << "\n";
  return r.completed ? kExitOk : kExitInterrupted;
}

struct ExportOptions {
  fs::path samples;
  fs::path out_dir = "export";
  std::size_t limit = 0;
  trainer::RemoteConfig remote;
  BackendOptions backends;
};

inline int cmd_export_batches(const ExportOptions& o, std::ostream& out, std::ostream& err) {
  o.remote.validate();
  auto samples = load_samples(o.samples, o.remote.reward_mode);
  if (o.limit && samples.size() > o.limit) samples.resize(o.limit);
  auto b = make_backends(o.backends, true);
  RunManifest m;
  m.command = "export-batches";
  m.config = Json{{"samples", o.samples.string()},
                  {"limit", o.limit},
                  {"reward_mode", trainer::to_string(o.remote.reward_mode)},
                  {"temperature", o.remote.temperature},
                  {"max_tokens", o.remote.max_tokens},
                  {"concise_prompt", o.remote.explicit_length_prompt},
                  {"length_budget", o.remote.compose.budget},
                  {"lambda", o.remote.compose.lambda},
                  {"format_penalty", o.remote.compose.apply_format},
                  {"optimizer", optim::config_json(o.remote.optimizer)},
                  {"workers", o.remote.workers},
                  {"backends", backend_json(o.backends, true)}};
  m.seeds = Json{{"rollout", o.remote.seed}};
  m.artifacts = Json{{"batches", "batches.jsonl"}, {"summary", "summary.json"}};
  m.start(o.out_dir);
  const auto res = trainer::run_remote_rollout(o.remote, *b.actor, *b.reward, samples);
  write_file_atomic(o.out_dir / "batches.jsonl", res.export_jsonl(o.remote.optimizer));
  const auto summary = trainer::summary_json(res.summary);
  write_file_atomic(o.out_dir / "summary.json", summary.dump(2) + "\n");
  for (const auto& e : res.errors) err << "warning: " << e << "\n";
  m.results = summary;
  const bool all_failed = res.summary.failed_samples == res.summary.samples;
  m.finish(o.out_dir, all_failed ? "failed" : "complete");
  out << summary.dump() << "\n";
  if (all_failed) throw BackendError("every sample failed; first error: " + res.errors.front());
  return kExitOk;
}

struct ScoreOptions {
  fs::path summaries;
  fs::path samples;
  fs::path out_dir = "scores";
  trainer::RewardMode mode = trainer::RewardMode::pointwise_string;
  reward::ComposeOptions compose;
  std::uint64_t seed = 0;
  BackendOptions backends;
};

struct SummaryLine {
  std::string text;
  std::optional<std::size_t> token_count;
};

inline void from_json(const Json& j, SummaryLine& s) {
  j.at("text").get_to(s.text);
  if (j.contains("token_count")) s.token_count = j.at("token_count").get<std::size_t>();
}

/// Whitespace-delimited word count, used when a summary carries no
/// token_count.
inline std::size_t word_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

inline int cmd_score(const ScoreOptions& o, std::ostream& out) {
  const auto summaries = read_jsonl<SummaryLine>(o.summaries);
  const auto samples = load_samples(o.samples, o.mode);
  if (summaries.size() != samples.size())
    throw ValidationError("summaries and samples are misaligned: " + std::to_string(summaries.size()) + " vs " +
                          std::to_string(samples.size()) + " records");
  auto b = make_backends(o.backends, false);
  RunManifest m;
  m.command = "score";
  m.config = Json{{"summaries", o.summaries.string()},
                  {"samples", o.samples.string()},
                  {"reward_mode", trainer::to_string(o.mode)},
                  {"length_budget", o.compose.budget},
                  {"lambda", o.compose.lambda},
                  {"format_penalty", o.compose.apply_format},
                  {"backends", backend_json(o.backends, false)}};
  m.seeds = Json{{"score", o.seed}};
  m.artifacts = Json{{"breakdowns", "breakdowns.jsonl"}};
  m.start(o.out_dir);
  std::string lines;
  double total = 0.0;
  std::size_t parse = 0, formatted = 0, over = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = summaries[i];
    const std::size_t tokens = s.token_count ? *s.token_count : word_count(s.text);
    const auto br = trainer::score_synopsis(*b.reward, o.mode, samples[i], s.text, tokens, o.compose, o.seed + i);
    lines += Json{{"index", i}, {"member_id", trainer::context_of(samples[i]).member_id}, {"token_count", tokens},
                  {"breakdown", br}}
                 .dump() +
             "\n";
    total += br.total;
    parse += br.flags.has(RewardFlag::parse_failure);
    formatted += br.format_penalty != 0.0;
    over += br.length_penalty != 0.0;
  }
  write_file_atomic(o.out_dir / "breakdowns.jsonl", lines);
  const double n = static_cast<double>(samples.size());
  m.results = Json{{"count", samples.size()},
                   {"mean_total", total / n},
                   {"parse_failure_rate", static_cast<double>(parse) / n},
                   {"format_penalty_rate", static_cast<double>(formatted) / n},
                   {"over_budget_rate", static_cast<double>(over) / n}};
  m.finish(o.out_dir, "complete");
  out << m.results.dump() << "\n";
  return kExitOk;
}

struct EvalOptions {
  std::optional<fs::path> export_file;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> train_config;  // [train-toy] section describing the environment
  std::uint64_t seed = 1;
  std::size_t bootstrap = 1000;
  std::optional<fs::path> out_file;
};

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (static_cast<bool>(o.export_file) == static_cast<bool>(o.checkpoint))
    throw ConfigError("eval needs exactly one of --export or --checkpoint");
  trainer::EvalSummary s;
  Json source;
  if (o.export_file) {
    s = trainer::evaluate_export(read_file(*o.export_file), o.bootstrap, derive_seed(o.seed, 0xB007));
    source = Json{{"export", o.export_file->string()}};
  } else {
    if (!o.train_config) throw ConfigError("eval --checkpoint needs --train-config");
    auto toy = config::load_toy_settings(*o.train_config);
    toy.train.seed = o.seed;
    const auto cp = policy::parse_checkpoint(read_file(*o.checkpoint));
    const auto env = trainer::make_token_finding(toy.env);
    if (!(cp.policy.shape() == env.shape))
      throw ConfigError("checkpoint policy shape does not match the configured environment");
    s = trainer::evaluate(cp.policy, env, env.val_contexts, toy.train, o.bootstrap);
    source = Json{{"checkpoint", o.checkpoint->string()}, {"step", cp.step}};
  }
  const Json j{{"source", source},
               {"count", s.count},
               {"mean_reward", s.mean_reward},
               {"stderr", s.stderr_reward},
               {"mean_length", s.mean_length},
               {"parse_failure_rate", s.parse_failure_rate},
               {"bootstrap_resamples", o.bootstrap}};
  if (o.out_file) write_file_atomic(*o.out_file, j.dump(2) + "\n");
  out << "mean_reward " << trainer::format_number(s.mean_reward) << " +/- " << trainer::format_number(s.stderr_reward)
      << " (n=" << s.count << ", mean_length " << trainer::format_number(s.mean_length) << ")\n";
  return kExitOk;
}

struct SmoothOptions {
  fs::path metrics;
  std::string column = "train_reward";
  std::size_t window = 50;
  std::optional<fs::path> out_file;
};

inline int cmd_smooth_metrics(const SmoothOptions& o, std::ostream& out) {
  if (o.window < 1) throw ConfigError("window must be >= 1");
  const auto records = read_jsonl<Json>(o.metrics);
  std::vector<double> steps, values;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.contains(o.column)) throw SchemaError("metrics have no column '" + o.column + "'", i + 1);
    if (r.at(o.column).is_null()) continue;
    steps.push_back(r.at("step").get<double>());
    values.push_back(r.at(o.column).get<double>());
  }
  const auto smooth = trainer::smooth_metrics(values, o.window);
  std::string csv = "step," + o.column + ",smoothed\n";
  for (std::size_t i = 0; i < values.size(); ++i)
    csv += trainer::format_number(steps[i]) + "," + trainer::format_number(values[i]) + "," +
           trainer::format_number(smooth[i]) + "\n";
  if (o.out_file) write_file_atomic(*o.out_file, csv);
  else out << csv;
  return kExitOk;
}

struct MockServerOptions {
  fs::path fixture;
  std::string host = "127.0.0.1";
  int port = 0;
};

inline int cmd_mock_server(const MockServerOptions& o, std::ostream& out) {
  SignalGuard guard;
  backend::MockServer server(backend::MockResponder::from_file(o.fixture), o.host, o.port);
  out << server.base_url() << std::endl;
  while (!stop_flag().load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Maps an exception to the documented exit codes.
inline int exit_code_for(const std::exception_ptr& ep, std::ostream& err) {
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const SchemaError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InvalidArgument& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Reward, rollout and training harness for LLM member-synopsis generation", "engagerl"};
  config::prepare_app(app);
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate synthetic engagement logs and training samples");
  config::bind_generator(*gen_cmd, gen.generator);
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->capture_default_str();
  gen_cmd->add_option("--threads", gen.threads)->capture_default_str();

  TrainToyOptions train;
  auto* train_cmd = app.add_subcommand("train-toy", "Train the toy policy against the scripted oracle");
  config::bind_toy_run(*train_cmd, train.settings);
  train_cmd->add_option("--interrupt-after", train.interrupt_after)->group("");

  ExportOptions exp;
  exp.remote.optimizer = optim::OptimizerConfig{};
  auto* exp_cmd = app.add_subcommand("export-batches", "Sample, score and export GroupBatches via remote endpoints");
  exp_cmd->add_option("--samples", exp.samples, "Pointwise or listwise sample JSONL")->required();
  exp_cmd->add_option("--out", exp.out_dir, "Output directory")->capture_default_str();
  exp_cmd->add_option("--limit", exp.limit, "Use at most this many samples (0: all)")->capture_default_str();
  config::bind_reward_mode(*exp_cmd, exp.remote.reward_mode);
  exp_cmd->add_option("--temperature", exp.remote.temperature)->capture_default_str();
  exp_cmd->add_option("--max-tokens", exp.remote.max_tokens)->capture_default_str();
  exp_cmd->add_option("--concise-prompt", exp.remote.explicit_length_prompt, "Ask the actor for a short answer")
      ->capture_default_str();
  exp_cmd->add_option("--seed", exp.remote.seed)->capture_default_str();
  exp_cmd->add_option("--workers", exp.remote.workers)->capture_default_str();
  config::bind_compose(*exp_cmd, exp.remote.compose);
  config::bind_optimizer(*exp_cmd, exp.remote.optimizer);
  bind_backends(*exp_cmd, exp.backends, true);

  ScoreOptions score;
  auto* score_cmd = app.add_subcommand("score", "Score summaries against their samples with the reward model");
  score_cmd->add_option("--summaries", score.summaries, "JSONL of {text, token_count}")->required();
  score_cmd->add_option("--samples", score.samples, "Aligned sample JSONL")->required();
  score_cmd->add_option("--out", score.out_dir, "Output directory")->capture_default_str();
  config::bind_reward_mode(*score_cmd, score.mode);
  config::bind_compose(*score_cmd, score.compose);
  score_cmd->add_option("--seed", score.seed)->capture_default_str();
  bind_backends(*score_cmd, score.backends, false);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Validation reward of an export or a toy checkpoint");
  eval_cmd->add_option("--export", ev.export_file, "Batch export JSONL");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Toy policy checkpoint");
  eval_cmd->add_option("--bootstrap", ev.bootstrap, "Bootstrap resamples for the standard error")->capture_default_str();
  eval_cmd->add_option("--summary-out", ev.out_file, "Also write the summary as JSON");
  eval_cmd->add_option("--train-config", ev.train_config, "Config file whose [train-toy] section built the checkpoint");
  eval_cmd->add_option("--seed", ev.seed, "Sampling and bootstrap seed")->capture_default_str();

  SmoothOptions sm;
  auto* smooth_cmd = app.add_subcommand("smooth-metrics", "Trailing moving average of one metrics column");
  smooth_cmd->add_option("--metrics", sm.metrics, "metrics.jsonl")->required();
  smooth_cmd->add_option("--column", sm.column)->capture_default_str();
  smooth_cmd->add_option("--window", sm.window)->capture_default_str();
  smooth_cmd->add_option("--out", sm.out_file, "CSV output (default: stdout)");

  MockServerOptions ms;
  auto* mock_cmd = app.add_subcommand("mock-server", "Serve a mock completion endpoint until interrupted");
  mock_cmd->add_option("--fixture", ms.fixture)->required();
  mock_cmd->add_option("--host", ms.host)->capture_default_str();
  mock_cmd->add_option("--port", ms.port, "0 picks a free port")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();  // program name
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, x;
    const int rc = app.exit(e, o, x);
    out << o.str();
    err << x.str();
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (train_cmd->parsed()) return cmd_train_toy(train, out);
    if (exp_cmd->parsed()) return cmd_export_batches(exp, out, err);
    if (score_cmd->parsed()) return cmd_score(score, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (smooth_cmd->parsed()) return cmd_smooth_metrics(sm, out);
    if (mock_cmd->parsed()) return cmd_mock_server(ms, out);
  } catch (...) {
    return exit_code_for(std::current_exception(), err);
  }
  return kExitFailure;
}

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_cli(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace engagerl::cli
