// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Each check collects reasons so a failure explains itself.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "engagerl/backend.hpp"
#include "engagerl/config.hpp"
#include "engagerl/dataset.hpp"
#include "engagerl/gradient.hpp"
#include "engagerl/jsonl.hpp"
#include "engagerl/mock_backend.hpp"
#include "engagerl/reward.hpp"
#include "engagerl/trainer.hpp"
#include "oracles.hpp"
#include "toy_instances.hpp"

namespace {

using namespace engagerl;
namespace fs = std::filesystem;

const fs::path kData = ENGAGERL_TEST_DATA_DIR;
const fs::path kConfigs = ENGAGERL_CONFIG_DIR;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr auto A = ActionLabel::apply;
constexpr auto V = ActionLabel::view;
constexpr auto S = ActionLabel::skip;

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++count_;
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream os;
    os.precision(17);
    os << what << ": got " << got << ", want " << want << " +/- " << tol;
    expect(std::fabs(got - want) <= tol, os.str());
  }
  void note(const std::string& s) { notes_.push_back(s); }

  bool ok() const { return failed_ == 0 && count_ > 0; }
  std::size_t count() const { return count_; }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  std::size_t count_ = 0;
  std::size_t failed_ = 0;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<ActionLabel> labels_from_code(std::size_t code) {
  std::vector<ActionLabel> out;
  for (std::size_t i = 0; i < 5; ++i, code /= 3) out.push_back(kAllActions[code % 3]);
  return out;
}

bool all_same(const std::vector<ActionLabel>& l) {
  return std::all_of(l.begin(), l.end(), [&](ActionLabel x) { return x == l.front(); });
}

// ---------------------------------------------------------------------------

void reward_oracles(Check& c) {
  using namespace reward;
  const auto t0 = std::chrono::steady_clock::now();

  c.expect(pointwise_string_reward("yes", 1).value == 1.0, "string yes/1");
  c.expect(pointwise_string_reward("No", 1).value == 0.0, "string No/1");
  c.expect(pointwise_string_reward("no", 0).value == 1.0, "string no/0");
  const auto maybe = pointwise_string_reward("maybe", 0);
  c.expect(maybe.value == 0.0 && maybe.flags.has(RewardFlag::parse_failure), "string maybe -> parse_failure");

  c.near(pointwise_logprob_reward(-0.1, -2.4, 1).value, 2.3, 1e-12, "logprob margin");
  c.expect(pointwise_logprob_reward(-0.01, -10.0, 0).value == -4.0, "logprob lower clip");
  c.expect(pointwise_logprob_reward(-kInf, -1.0, 1).value == -4.0, "logprob yes missing");
  c.expect(pointwise_logprob_reward(-1.0, -kInf, 1).value == 6.0, "logprob no missing");
  const auto both = pointwise_logprob_reward(-kInf, -kInf, 1);
  c.expect(both.value == 0.0 && both.flags.has(RewardFlag::logprob_missing_both), "logprob both missing");

  c.expect(label_entropy(std::vector{S, S, S, S, S}) == 0.0, "entropy uniform");
  c.near(label_entropy(std::vector{A, A, V, S, S}), 1.05492, 1e-5, "entropy mixed");
  c.near(label_entropy(std::vector{A, V, S}), std::log(3.0), 1e-12, "entropy max");

  const std::vector labels{A, V, S, S, V};
  const std::vector<std::size_t> identity{0, 1, 2, 3, 4};
  c.near(ndcg(identity, labels), 0.98146, 1e-4, "ndcg identity");
  c.expect(ndcg(std::vector<std::size_t>{0, 1, 4, 2, 3}, labels) == 1.0, "ndcg ideal");
  c.near(ndcg(std::vector<std::size_t>{4, 3, 2, 1, 0}, std::vector{A, S, S, S, S}), 0.38685, 1e-4, "ndcg reversed");
  c.near(listwise_reward(identity, std::vector{A, A, V, S, S}), 1.05492, 1e-4, "listwise ideal");
  c.expect(listwise_reward(std::vector<std::size_t>{3, 1, 4, 0, 2}, std::vector{V, V, V, V, V}) == 0.0,
           "listwise uniform");
  c.near(listwise_reward(identity, labels), oracle::entropy(labels) * oracle::ndcg(identity, labels), 1e-12,
         "listwise H*NDCG");

  c.expect(length_penalty(100) == 0.0 && length_penalty(150) == 0.0, "length within budget");
  c.expect(length_penalty(160) == -100.0, "length over budget");
  c.expect(format_penalty("One paragraph of text.") == 0.0, "format single");
  c.expect(format_penalty("Summary.\n\nRelevance Ranking:\n1. Job A") == -1.0, "format multi");
  c.expect(format_penalty("Line one.\nLine two.") == 0.0, "format single newline");
  c.near(compose_total(1.0, 160, "One paragraph.", {1e-5, 150, true}).total, 0.999, 1e-12, "compose length");
  c.near(compose_total(0.9, 140, "First.\n\nSecond.", {1e-5, 150, true}).total, -0.1, 1e-12, "compose format");
  c.expect(compose_total(0.0, 150, "One paragraph.").total == 0.0, "compose zero");

  Rng rng(20240601);
  std::size_t checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ActionLabel> l;
    do {
      l.clear();
      for (int i = 0; i < 5; ++i) l.push_back(kAllActions[rng.below(3)]);
    } while (std::all_of(l.begin(), l.end(), [](ActionLabel x) { return x == S; }));
    std::vector<std::size_t> order{0, 1, 2, 3, 4};
    do {
      const double got = ndcg(order, l);
      c.expect(std::fabs(got - oracle::ndcg(order, l)) <= 1e-9, "ndcg vs brute force");
      ++checked;
    } while (std::next_permutation(order.begin(), order.end()));
  }
  c.expect(checked == 2400, "2400 orderings checked");
  const double secs = seconds_since(t0);
  c.expect(secs < 5.0, "runtime < 5 s");
  c.note(std::to_string(checked) + " NDCG orderings");
}

void entropy_properties(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const double ln3 = std::log(3.0);
  for (std::size_t code = 0; code < 243; ++code) {
    auto l = labels_from_code(code);
    const double h = reward::label_entropy(l);
    c.expect(h >= 0.0 && h <= ln3 + 1e-15, "H in [0, ln 3]");
    c.expect((h == 0.0) == all_same(l), "H = 0 iff uniform");
    c.expect(std::fabs(h - oracle::entropy(l)) <= 1e-12, "H matches counting oracle");
    std::sort(l.begin(), l.end());
    do {
      c.expect(reward::label_entropy(l) == h, "permutation invariance");
    } while (std::next_permutation(l.begin(), l.end()));
  }
  c.expect(seconds_since(t0) < 1.0, "runtime < 1 s");
}

void logprob_clipping(Check& c) {
  Rng rng(77);
  const reward::ClipInterval clip;
  std::size_t inf_cases = 0;
  auto draw = [&] {
    switch (rng.below(8)) {
      case 0: return -kInf;
      case 1: return 0.0;
      default: return -30.0 * rng.uniform();
    }
  };
  for (int i = 0; i < 10000; ++i) {
    const double ly = draw(), ln = draw();
    const int y = static_cast<int>(rng.below(2));
    const auto r = reward::pointwise_logprob_reward(ly, ln, y);
    c.expect(r.value >= clip.low && r.value <= clip.high, "reward within [-4, 6]");
    const bool ymiss = ly == -kInf, nmiss = ln == -kInf;
    if (!ymiss && !nmiss) {
      c.expect(reward::logprob_margin(ly, ln, 1) == -reward::logprob_margin(ly, ln, 0), "antisymmetry pre-clip");
      const double m = reward::logprob_margin(ly, ln, y);
      c.expect(r.value == std::clamp(m, clip.low, clip.high), "clip of margin");
    } else if (ymiss != nmiss) {
      ++inf_cases;
      // A missing side drives the margin to -inf or +inf depending on y.
      const bool toward_high = (y == 1) == nmiss;
      c.expect(r.value == (toward_high ? clip.high : clip.low), "-inf yields exactly a bound");
    } else {
      c.expect(r.value == 0.0 && r.flags.has(RewardFlag::logprob_missing_both), "both missing neutral");
    }
  }
  c.note(std::to_string(inf_cases) + " single -inf injections");
}

void gradient_check(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(4242);
  std::size_t n = 0;
  double worst = 0.0;
  for (auto mode : {optim::NormalizationMode::grpo, optim::NormalizationMode::dr_grpo})
    for (double beta : {0.0, 0.001})
      for (int k = 0; k < 30; ++k) {
        auto inst = testutil::random_instance(rng, mode, beta);
        const auto analytic = objective_and_gradient(inst.current, inst.context, inst.batch, inst.cfg);
        std::vector<double> theta(inst.current.parameters().begin(), inst.current.parameters().end());
        auto f = [&](const std::vector<double>& x) {
          auto p = inst.current;
          std::copy(x.begin(), x.end(), p.parameters().begin());
          return objective_value(p, inst.context, inst.batch, inst.cfg);
        };
        const double err = oracle::relative_error(analytic.grad, oracle::central_difference(f, theta, 1e-5));
        worst = std::max(worst, err);
        c.expect(err < 1e-4, "relative error < 1e-4");
        ++n;
      }
  c.expect(n >= 100, "at least 100 instances");
  c.expect(seconds_since(t0) < 30.0, "runtime < 30 s");
  std::ostringstream os;
  os << n << " instances, worst relative error " << worst;
  c.note(os.str());
}

void zero_update_fixed_point(Check& c) {
  Rng rng(5);
  double max_norm = 0.0, max_obj = 0.0, reinforce_norm = 0.0;
  for (auto mode : {optim::NormalizationMode::grpo, optim::NormalizationMode::dr_grpo})
    for (int k = 0; k < 100; ++k) {
      auto inst = testutil::random_instance(rng, mode, 0.001);
      // pi_theta = pi_old = pi_ref.
      for (std::size_t i = 0; i < inst.batch.size(); ++i) {
        const auto lp = inst.current.logprob_of(inst.context, inst.batch.rollouts[i].tokens);
        inst.batch.rollouts[i].token_logprobs = lp;
        inst.batch.ref_logprobs[i] = lp;
      }
      const auto any = objective_and_gradient(inst.current, inst.context, inst.batch, inst.cfg);
      // Arbitrary rewards: the surrogate value vanishes under per-rollout
      // averaging, and for equal-length groups in both modes.
      bool equal_lengths = true;
      for (const auto& r : inst.batch.rollouts) equal_lengths &= r.token_count == inst.batch.rollouts[0].token_count;
      if (mode == optim::NormalizationMode::grpo || equal_lengths) {
        c.expect(std::fabs(any.result.objective) < 1e-12, "objective 0 for arbitrary rewards");
        max_obj = std::max(max_obj, std::fabs(any.result.objective));
      }
      c.expect(any.result.mean_kl == 0.0, "KL 0");
      reinforce_norm = std::max(reinforce_norm, oracle::norm(any.grad));

      // Stationary group: equal rewards, so advantages are zero.
      const double r = rng.uniform() * 3.0 - 1.0;
      std::fill(inst.batch.rewards.begin(), inst.batch.rewards.end(), r);
      inst.batch.advantages = optim::group_advantages(inst.batch.rewards, mode);
      const auto fixed = objective_and_gradient(inst.current, inst.context, inst.batch, inst.cfg);
      c.expect(fixed.result.objective == 0.0, "fixed-point objective 0");
      const double norm = oracle::norm(fixed.grad);
      max_norm = std::max(max_norm, norm);
      c.expect(norm < 1e-10, "fixed-point gradient norm < 1e-10");
    }
  std::ostringstream os;
  os << "stationary groups: max |grad| " << max_norm << "; arbitrary rewards: max |objective| " << max_obj
     << ", max |grad| " << reinforce_norm << " (policy-gradient term)";
  c.note(os.str());
}

config::ToyRunSettings load(const char* name) { return config::load_toy_settings(kConfigs / name); }

std::vector<double> column(const std::vector<trainer::MetricsRecord>& h, double trainer::MetricsRecord::*f) {
  std::vector<double> out;
  for (const auto& m : h) out.push_back(m.*f);
  return out;
}

void toy_learning(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = load("toy_baseline.ini");
  const auto env = trainer::make_token_finding(s.env);
  const double chance = trainer::chance_level(env, env.initial_policy(), env.val_contexts);
  c.expect(chance < 0.3, "chance baseline < 0.3");
  const auto r = trainer::run_toy_training(s.train, env);
  c.expect(r.completed, "run completed");
  c.expect(r.history.size() <= 500, "within 500 steps");
  const auto smooth = trainer::smooth_metrics(column(r.history, &trainer::MetricsRecord::train_reward), 50);
  c.expect(smooth.back() > 0.9, "smoothed train reward > 0.9");
  c.expect(r.history.back().val_reward > 0.9, "validation reward > 0.9");
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime < 60 s");
  std::ostringstream os;
  os << "chance " << chance << ", steps " << r.history.size() << ", smoothed train " << smooth.back() << ", val "
     << r.history.back().val_reward << ", " << secs << " s";
  c.note(os.str());
}

double mean_length(const std::vector<trainer::MetricsRecord>& h, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += h[i].mean_length;
  return s / static_cast<double>(to - from);
}

void length_dynamics(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto off = load("toy_length_off.ini");
  const auto on = load("toy_length_on.ini");
  c.expect(off.train.seed == on.train.seed && off.env.data_seed == on.env.data_seed, "same seeds");
  const auto h_off = trainer::run_toy_training(off.train, trainer::make_token_finding(off.env)).history;
  const auto h_on = trainer::run_toy_training(on.train, trainer::make_token_finding(on.env)).history;
  c.expect(h_off.size() >= 110 && h_on.size() >= 110, "runs long enough");
  if (h_off.size() < 110 || h_on.size() < 110) return;
  const double initial = mean_length(h_off, 0, 10);
  const double final_off = mean_length(h_off, h_off.size() - 100, h_off.size());
  c.expect(final_off > 1.5 * initial, "penalty off: length grows > 50%");
  const double budget = static_cast<double>(on.train.length_budget);
  double worst = 0.0;
  for (std::size_t i = h_on.size() - 100; i < h_on.size(); ++i) {
    worst = std::max(worst, std::fabs(h_on[i].mean_length - budget));
    c.expect(std::fabs(h_on[i].mean_length - budget) <= 2.0, "penalty on: within +/-2 of budget");
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 120.0, "runtime < 2 min");
  std::ostringstream os;
  os << "off: " << initial << " -> " << final_off << "; on: budget " << budget << ", final-100 mean "
     << mean_length(h_on, h_on.size() - 100, h_on.size()) << ", worst deviation " << worst << ", " << secs << " s";
  c.note(os.str());
}

void nullification(Check& c) {
  auto env = trainer::make_token_finding({});
  Rng rng(31);
  trainer::TrainConfig cfg;
  cfg.reward_mode = trainer::RewardMode::listwise;
  cfg.mini_batch = 16;
  cfg.micro_batch = 16;
  std::size_t groups = 0;
  for (auto uniform : {A, V, S}) {
    for (auto& l : env.list_labels) l.fill(uniform);
    policy::ToyPolicy current = env.initial_policy();
    for (auto& x : current.parameters()) x += 0.5 * (rng.uniform() - 0.5);
    const auto ref_drift = policy::snapshot(env.initial_policy());
    const auto ref_same = policy::snapshot(current);
    for (std::size_t trial = 0; trial < 40; ++trial, ++groups) {
      const std::size_t ctx = trial % env.list_labels.size();
      const auto old = policy::snapshot(current);
      // Policy-gradient contribution with the KL term off.
      const auto g = trainer::make_toy_group(env, cfg, *old, *ref_drift, ctx, rng, trial);
      for (double r : g.batch.rewards) c.expect(r == 0.0, "reward exactly 0");
      for (double a : g.batch.advantages) c.expect(a == 0.0, "advantage exactly 0");
      auto no_kl = cfg.optimizer;
      no_kl.kl_coeff = 0.0;
      const auto og = objective_and_gradient(current, ctx, g.batch, no_kl);
      c.expect(og.result.objective == 0.0, "objective exactly 0");
      c.expect(std::all_of(og.grad.begin(), og.grad.end(), [](double d) { return d == 0.0; }), "gradient exactly 0");
      // Full objective, default KL coefficient, reference equal to current.
      const auto g2 = trainer::make_toy_group(env, cfg, *old, *ref_same, ctx, rng, trial);
      const auto full = objective_and_gradient(current, ctx, g2.batch, cfg.optimizer);
      c.expect(full.result.objective == 0.0, "full objective exactly 0");
      c.expect(std::all_of(full.grad.begin(), full.grad.end(), [](double d) { return d == 0.0; }),
               "full gradient exactly 0");
    }
  }
  c.note(std::to_string(groups) + " uniform-label groups");
}

void dataset_pipeline(Check& c) {
  dataset::GeneratorConfig g;
  g.member_count = 10000;
  g.seed = 2024;
  g.context_tokens = 40;
  const auto d = dataset::build_dataset(g);
  const auto pos = std::count_if(d.train_pointwise.begin(), d.train_pointwise.end(), [](const auto& s) { return s.label == 1; });
  c.expect(pos > 0 && static_cast<std::size_t>(2 * pos) == d.train_pointwise.size(), "exact 1:1 pointwise balance");

  // Timestamp audit from the raw logs.
  std::map<std::string, std::map<std::string, Timestamp>> when;
  for (const auto& log : d.logs)
    for (const auto& e : log.events) when[log.member.member_id][e.job->job_id] = e.timestamp;
  std::size_t leaks = 0;
  auto target_time = [&](const MemberContext& ctx, const JobRef& j) {
    const auto& m = when.at(ctx.member_id);
    const auto it = m.find(j->job_id);
    return it == m.end() ? std::numeric_limits<Timestamp>::min() : it->second;
  };
  auto max_ctx = [](const MemberContext& ctx) {
    Timestamp t = std::numeric_limits<Timestamp>::min();
    for (const auto& a : ctx.job_search_actions) t = std::max(t, a.timestamp);
    return t;
  };
  for (const auto& s : d.train_pointwise) {
    const Timestamp tt = target_time(s.context, s.target_job);
    leaks += !(max_ctx(s.context) < d.cutoff && tt < d.cutoff && max_ctx(s.context) <= tt);
  }
  for (const auto& s : d.train_listwise)
    for (const auto& j : s.target_jobs) {
      const Timestamp tt = target_time(s.context, j);
      leaks += !(max_ctx(s.context) < d.cutoff && tt < d.cutoff && max_ctx(s.context) <= tt);
    }
  for (const auto& s : d.val_pointwise) leaks += !(max_ctx(s.context) < target_time(s.context, s.target_job));
  for (const auto& s : d.val_listwise)
    for (const auto& j : s.target_jobs) leaks += !(max_ctx(s.context) < target_time(s.context, j));
  c.expect(leaks == 0, "zero temporal leakage (independent audit)");
  c.expect(dataset::leakage_audit(d).empty(), "zero temporal leakage (library audit)");

  std::size_t uniform = 0;
  for (const auto* set : {&d.train_listwise, &d.val_listwise})
    for (const auto& s : *set) uniform += all_same(s.labels);
  c.expect(uniform == 0, "zero uniform-label listwise samples");
  c.expect(!d.train_listwise.empty() && !d.val_pointwise.empty(), "non-empty splits");

  const auto again = dataset::build_dataset(g, 4);
  c.expect(to_jsonl(again.logs) == to_jsonl(d.logs), "logs regenerate identically");
  c.expect(to_jsonl(again.train_pointwise) == to_jsonl(d.train_pointwise), "train pointwise regenerates identically");
  c.expect(to_jsonl(again.train_listwise) == to_jsonl(d.train_listwise), "train listwise regenerates identically");
  c.expect(to_jsonl(again.val_pointwise) == to_jsonl(d.val_pointwise), "val pointwise regenerates identically");
  c.expect(to_jsonl(again.val_listwise) == to_jsonl(d.val_listwise), "val listwise regenerates identically");
  std::ostringstream os;
  os << d.logs.size() << " members, " << d.train_pointwise.size() << " balanced pointwise, " << d.train_listwise.size()
     << " listwise";
  c.note(os.str());
}

backend::BackendEndpoint mock_endpoint(const std::string& model) {
  backend::BackendEndpoint e;
  e.base_url = "mock://local/v1";
  e.model = model;
  e.max_retries = 2;
  e.max_concurrency = 4;
  return e;
}

std::string remote_export(trainer::RewardMode mode, std::size_t n, std::uint64_t seed) {
  dataset::GeneratorConfig g;
  g.member_count = 24;
  g.seed = 3;
  const auto d = dataset::build_dataset(g);
  std::vector<trainer::Sample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    if (mode == trainer::RewardMode::listwise) samples.emplace_back(d.train_listwise.at(i));
    else samples.emplace_back(d.train_pointwise.at(i));
  }
  auto responder = backend::MockResponder::from_file(kData / "export_fixture.json");
  backend::BackendClient actor(mock_endpoint("actor"), std::make_shared<backend::MockTransport>(responder), [](double) {});
  backend::BackendClient judge(mock_endpoint("judge"), std::make_shared<backend::MockTransport>(responder), [](double) {});
  trainer::RemoteConfig cfg;
  cfg.reward_mode = mode;
  cfg.seed = seed;
  return trainer::run_remote_rollout(cfg, actor, judge, samples).export_jsonl(cfg.optimizer);
}

void backend_robustness(Check& c) {
  Rng rng(99);
  const std::string valid =
      R"({"id":"x","choices":[{"message":{"content":"[2, 0, 1, 4, 3]"},"logprobs":{"content":[{"token":" yes","logprob":-0.2,"top_logprobs":[{"token":" no","logprob":-1.8}]}]}}],"usage":{"completion_tokens":1}})";
  const std::string alphabet = "{}[]\":,0123456789-.eE truenulfasyoitkcbphg\\\n\x01\xff";
  std::size_t untyped = 0, parsed = 0;
  auto guarded = [&](const std::function<void()>& f) {
    try {
      f();
      ++parsed;
    } catch (const Error&) {
    } catch (...) {
      ++untyped;
    }
  };
  for (int i = 0; i < 10000; ++i) {
    std::string p;
    switch (rng.below(3)) {
      case 0:
        for (std::uint64_t k = 0, n = rng.below(256); k < n; ++k) p.push_back(static_cast<char>(rng.below(256)));
        break;
      case 1:
        for (std::uint64_t k = 0, n = rng.below(160); k < n; ++k) p.push_back(alphabet[rng.below(alphabet.size())]);
        break;
      default:
        p = valid;
        for (std::uint64_t k = 0, n = 1 + rng.below(6); k < n && !p.empty(); ++k) {
          const auto pos = rng.below(p.size());
          switch (rng.below(3)) {
            case 0: p[pos] = alphabet[rng.below(alphabet.size())]; break;
            case 1: p.erase(pos, 1 + rng.below(8)); break;
            default: p.insert(pos, 1, alphabet[rng.below(alphabet.size())]); break;
          }
        }
    }
    guarded([&] { backend::wire::parse_pointwise_payload(p); });
    guarded([&] { backend::wire::to_rollout(backend::wire::parse_completion(p)); });
    guarded([&] { backend::wire::parse_ranking(p); });
  }
  c.expect(untyped == 0, "fuzz raises only typed errors");

  for (int run = 0; run < 2; ++run) {
    c.expect(remote_export(trainer::RewardMode::pointwise_logprob, 4, 99) == read_file(kData / "export_pointwise.golden.jsonl"),
             "pointwise export matches golden");
    c.expect(remote_export(trainer::RewardMode::listwise, 3, 5) == read_file(kData / "export_listwise.golden.jsonl"),
             "listwise export matches golden");
  }

  // Every candidate list over {0..5} of length 4-6.
  std::size_t accepted = 0, rejected = 0;
  for (std::size_t len = 4; len <= 6; ++len) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < len; ++i) total *= 6;
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<std::size_t> v;
      for (std::size_t k = code, i = 0; i < len; ++i, k /= 6) v.push_back(k % 6);
      auto sorted = v;
      std::sort(sorted.begin(), sorted.end());
      const bool is_perm = sorted == std::vector<std::size_t>{0, 1, 2, 3, 4};
      std::string text = "ranking: [";
      for (std::size_t i = 0; i < v.size(); ++i) text += (i ? ", " : "") + std::to_string(v[i]);
      text += "]";
      try {
        const auto got = backend::wire::parse_ranking(text);
        c.expect(is_perm && got == v, "accepted only permutations, verbatim");
        ++accepted;
      } catch (const ParseError&) {
        c.expect(!is_perm, "permutation rejected");
        ++rejected;
      }
    }
  }
  c.expect(accepted == 120, "exactly 120 permutations accepted");
  c.note("fuzz parsed " + std::to_string(parsed) + " of 30000 calls; ranking parser accepted " +
         std::to_string(accepted) + ", rejected " + std::to_string(rejected));
}

std::string run_to_files(const config::ToyRunSettings& s, const fs::path& dir, trainer::TrainResult& out) {
  fs::remove_all(dir);
  trainer::RunOptions o;
  o.out_dir = dir;
  out = trainer::run_toy_training(s.train, trainer::make_token_finding(s.env), o);
  return read_file(dir / "metrics.jsonl") + read_file(dir / "metrics.csv") + read_file(dir / "checkpoint.json");
}

bool same_bits(const std::vector<trainer::MetricsRecord>& a, const std::vector<trainer::MetricsRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (auto f : {&trainer::MetricsRecord::train_reward, &trainer::MetricsRecord::val_reward,
                   &trainer::MetricsRecord::mean_length, &trainer::MetricsRecord::mean_kl,
                   &trainer::MetricsRecord::entropy, &trainer::MetricsRecord::parse_failure_rate,
                   &trainer::MetricsRecord::clip_fraction, &trainer::MetricsRecord::multi_paragraph_rate})
      if (std::memcmp(&(a[i].*f), &(b[i].*f), sizeof(double)) != 0) return false;
  return true;
}

void determinism(Check& c) {
  const auto root = fs::temp_directory_path() / "engagerl_acceptance_determinism";
  std::size_t runs = 0;
  for (const auto* name : {"toy_baseline.ini", "toy_length_on.ini", "toy_length_off.ini", "toy_format.ini"}) {
    auto s = load(name);
    trainer::TrainResult a, b;
    const auto fa = run_to_files(s, root / "a", a);
    const auto fb = run_to_files(s, root / "b", b);
    c.expect(fa == fb, std::string(name) + ": metrics and checkpoint files identical");
    c.expect(same_bits(a.history, b.history), std::string(name) + ": histories bit-identical");
    ++runs;
    if (std::string(name) == "toy_baseline.ini") {
      s.train.reward_mode = trainer::RewardMode::listwise;
      s.train.max_steps = 100;
      const auto la = run_to_files(s, root / "a", a);
      const auto lb = run_to_files(s, root / "b", b);
      c.expect(la == lb && same_bits(a.history, b.history), "listwise run bit-identical");
      ++runs;
    }
  }
  fs::remove_all(root);
  c.expect(remote_export(trainer::RewardMode::pointwise_logprob, 4, 99) ==
               remote_export(trainer::RewardMode::pointwise_logprob, 4, 99),
           "remote export rerun identical");
  c.note(std::to_string(runs) + " committed-seed runs repeated");
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<void(Check&)> run;
  };
  const std::vector<Criterion> criteria{
      {"reward oracle suite", reward_oracles},
      {"entropy properties", entropy_properties},
      {"logprob reward clipping", logprob_clipping},
      {"optimizer gradient check", gradient_check},
      {"zero-update fixed point", zero_update_fixed_point},
      {"end-to-end toy learning", toy_learning},
      {"length dynamics (penalty off/on)", length_dynamics},
      {"entropy-weighting nullification", nullification},
      {"dataset pipeline", dataset_pipeline},
      {"backend robustness", backend_robustness},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    std::ostringstream head;
    head.precision(3);
    head << (c.ok() ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].name << " (" << c.count()
         << " checks, " << secs << " s)";
    std::cout << head.str() << "\n";
    for (const auto& n : c.notes()) std::cout << "       " << n << "\n";
    for (const auto& f : c.failures()) std::cout << "       failed: " << f << "\n";
    failed += c.ok() ? 0 : 1;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
