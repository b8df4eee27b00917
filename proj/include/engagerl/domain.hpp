#pragma once

// Core vocabulary shared by every other module: members, jobs, engagement
// actions, training samples, rollouts and reward breakdowns. All types are
// plain values; JSON (de)serialization uses the field names verbatim.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "engagerl/errors.hpp"

namespace engagerl {

using Json = nlohmann::json;
using Timestamp = std::int64_t;  // seconds since epoch
using TokenId = std::int64_t;    // opaque, non-negative

inline constexpr std::size_t kListwiseArity = 5;

// ---------------------------------------------------------------------------
// ActionLabel

enum class ActionLabel { apply, view, skip };

inline constexpr std::array<ActionLabel, 3> kAllActions = {
    ActionLabel::apply, ActionLabel::view, ActionLabel::skip};

inline std::string_view to_string(ActionLabel a) {
  switch (a) {
    case ActionLabel::apply: return "apply";
    case ActionLabel::view: return "view";
    case ActionLabel::skip: return "skip";
  }
  return "skip";
}

inline std::optional<ActionLabel> parse_action(std::string_view s) {
  if (s == "apply") return ActionLabel::apply;
  if (s == "view") return ActionLabel::view;
  if (s == "skip") return ActionLabel::skip;
  return std::nullopt;
}

/// Relevance order apply > view > skip.
inline int relevance_rank(ActionLabel a) {
  switch (a) {
    case ActionLabel::apply: return 2;
    case ActionLabel::view: return 1;
    case ActionLabel::skip: return 0;
  }
  return 0;
}

inline std::size_t action_index(ActionLabel a) { return static_cast<std::size_t>(a); }

// ---------------------------------------------------------------------------
// Records

struct JobPosting {
  std::string job_id;
  std::string title;
  std::string company;
  std::string description;

  bool operator==(const JobPosting&) const = default;
};

using JobRef = std::shared_ptr<const JobPosting>;

/// One entry of a member's job-search history.
struct JobAction {
  JobRef job;
  ActionLabel action = ActionLabel::skip;
  Timestamp timestamp = 0;

  bool operator==(const JobAction& o) const {
    return action == o.action && timestamp == o.timestamp &&
           (job == o.job || (job && o.job && *job == *o.job));
  }
};

struct MemberContext {
  std::string member_id;
  std::string profile_attributes;
  std::string professional_content;
  std::vector<JobAction> job_search_actions;
  std::vector<std::string> search_queries;

  bool operator==(const MemberContext&) const = default;
};

struct EngagementEvent {
  std::string member_id;
  JobRef job;
  ActionLabel action = ActionLabel::skip;
  Timestamp timestamp = 0;

  bool operator==(const EngagementEvent& o) const {
    return member_id == o.member_id && action == o.action && timestamp == o.timestamp &&
           (job == o.job || (job && o.job && *job == *o.job));
  }
};

struct PointwiseSample {
  MemberContext context;
  JobRef target_job;
  int label = 0;  // 1 = apply, 0 = not apply

  bool operator==(const PointwiseSample& o) const {
    return context == o.context && label == o.label &&
           (target_job == o.target_job ||
            (target_job && o.target_job && *target_job == *o.target_job));
  }
};

struct ListwiseSample {
  MemberContext context;
  std::vector<JobRef> target_jobs;
  std::vector<ActionLabel> labels;

  bool operator==(const ListwiseSample& o) const {
    if (!(context == o.context && labels == o.labels &&
          target_jobs.size() == o.target_jobs.size()))
      return false;
    for (std::size_t i = 0; i < target_jobs.size(); ++i) {
      const auto& a = target_jobs[i];
      const auto& b = o.target_jobs[i];
      if (a != b && !(a && b && *a == *b)) return false;
    }
    return true;
  }
};

struct Rollout {
  std::vector<TokenId> tokens;
  std::string text;
  std::vector<double> token_logprobs;
  std::size_t token_count = 0;

  bool operator==(const Rollout&) const = default;
};

enum class RewardFlag : unsigned { parse_failure = 0, logprob_missing_both = 1, clipped = 2 };

inline std::string_view to_string(RewardFlag f) {
  switch (f) {
    case RewardFlag::parse_failure: return "parse_failure";
    case RewardFlag::logprob_missing_both: return "logprob_missing_both";
    case RewardFlag::clipped: return "clipped";
  }
  return "";
}

inline constexpr std::array<RewardFlag, 3> kAllRewardFlags = {
    RewardFlag::parse_failure, RewardFlag::logprob_missing_both, RewardFlag::clipped};

/// Small set of diagnostic markers attached to a reward.
class RewardFlags {
 public:
  RewardFlags() = default;
  RewardFlags(std::initializer_list<RewardFlag> fs) {
    for (auto f : fs) set(f);
  }
  void set(RewardFlag f) { bits_ |= 1u << static_cast<unsigned>(f); }
  bool has(RewardFlag f) const { return (bits_ >> static_cast<unsigned>(f)) & 1u; }
  bool empty() const { return bits_ == 0; }
  RewardFlags& operator|=(RewardFlags o) {
    bits_ |= o.bits_;
    return *this;
  }
  bool operator==(const RewardFlags&) const = default;

 private:
  unsigned bits_ = 0;
};

struct RewardBreakdown {
  double base = 0.0;
  double length_penalty = 0.0;
  double format_penalty = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  RewardFlags flags;

  bool operator==(const RewardBreakdown&) const = default;
};

/// G rollouts for one sample; the unit of a policy update.
struct GroupBatch {
  std::string sample_id;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<std::vector<double>> ref_logprobs;

  std::size_t size() const { return rollouts.size(); }
};

// ---------------------------------------------------------------------------
// Validation

struct ValidationResult {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  explicit operator bool() const { return ok(); }
};

namespace detail {

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

inline void check_job(const JobRef& job, const std::string& where,
                      std::vector<std::string>& out) {
  if (!job) {
    out.push_back(where + ": missing job");
    return;
  }
  if (blank(job->title)) out.push_back(where + ": empty title");
  if (blank(job->company)) out.push_back(where + ": empty company");
  if (blank(job->description)) out.push_back(where + ": empty description");
}

inline void check_context(const MemberContext& c, std::vector<std::string>& out) {
  if (blank(c.profile_attributes) && blank(c.professional_content) &&
      c.job_search_actions.empty() && c.search_queries.empty())
    out.push_back("context: all sources empty");
  for (std::size_t i = 1; i < c.job_search_actions.size(); ++i) {
    if (c.job_search_actions[i].timestamp < c.job_search_actions[i - 1].timestamp) {
      out.push_back("context: job_search_actions not sorted by timestamp");
      break;
    }
  }
  for (std::size_t i = 0; i < c.job_search_actions.size(); ++i)
    check_job(c.job_search_actions[i].job, "context action " + std::to_string(i), out);
}

inline bool in_history(const MemberContext& c, const JobRef& job) {
  if (!job) return false;
  return std::any_of(c.job_search_actions.begin(), c.job_search_actions.end(),
                     [&](const JobAction& a) { return a.job && a.job->job_id == job->job_id; });
}

}  // namespace detail

inline ValidationResult validate_sample(const PointwiseSample& s) {
  ValidationResult r;
  detail::check_context(s.context, r.violations);
  detail::check_job(s.target_job, "target_job", r.violations);
  if (s.label != 0 && s.label != 1) r.violations.push_back("label not binary");
  if (detail::in_history(s.context, s.target_job))
    r.violations.push_back("target job appears in context");
  return r;
}

inline ValidationResult validate_sample(const ListwiseSample& s) {
  ValidationResult r;
  detail::check_context(s.context, r.violations);
  if (s.target_jobs.size() != kListwiseArity || s.labels.size() != kListwiseArity)
    r.violations.push_back("length != 5");
  if (s.target_jobs.size() != s.labels.size()) r.violations.push_back("targets and labels misaligned");
  for (std::size_t i = 0; i < s.target_jobs.size(); ++i) {
    detail::check_job(s.target_jobs[i], "target_jobs[" + std::to_string(i) + "]", r.violations);
    if (detail::in_history(s.context, s.target_jobs[i]))
      r.violations.push_back("target job " + std::to_string(i) + " appears in context");
  }
  if (!s.labels.empty() &&
      std::all_of(s.labels.begin(), s.labels.end(),
                  [&](ActionLabel l) { return l == s.labels.front(); }))
    r.violations.push_back("uniform labels");
  return r;
}

inline ValidationResult validate_rollout(const Rollout& r) {
  ValidationResult v;
  if (r.tokens.size() != r.token_count) v.violations.push_back("token_count != tokens length");
  if (r.token_logprobs.size() != r.token_count)
    v.violations.push_back("token_logprobs length != token_count");
  for (double lp : r.token_logprobs) {
    if (!(lp <= 0.0) || !std::isfinite(lp)) {
      v.violations.push_back("token logprob not finite and <= 0");
      break;
    }
  }
  for (TokenId t : r.tokens) {
    if (t < 0) {
      v.violations.push_back("negative token id");
      break;
    }
  }
  return v;
}

inline ValidationResult validate_batch(const GroupBatch& b) {
  ValidationResult v;
  const std::size_t g = b.rollouts.size();
  if (g < 2) v.violations.push_back("group size < 2");
  if (b.rewards.size() != g || b.advantages.size() != g || b.ref_logprobs.size() != g)
    v.violations.push_back("sequence lengths differ");
  const double sum = std::accumulate(b.advantages.begin(), b.advantages.end(), 0.0);
  if (std::abs(sum) > 1e-9) v.violations.push_back("advantages do not sum to zero");
  for (std::size_t i = 0; i < std::min(g, b.ref_logprobs.size()); ++i)
    if (b.ref_logprobs[i].size() != b.rollouts[i].token_count)
      v.violations.push_back("ref_logprobs misaligned for rollout " + std::to_string(i));
  return v;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(Json& j, ActionLabel a) { j = std::string(to_string(a)); }

inline void from_json(const Json& j, ActionLabel& a) {
  auto parsed = parse_action(j.get<std::string>());
  if (!parsed) throw SchemaError("unknown action label '" + j.get<std::string>() + "'");
  a = *parsed;
}

inline void to_json(Json& j, const JobPosting& p) {
  j = Json{{"job_id", p.job_id},
           {"title", p.title},
           {"company", p.company},
           {"description", p.description}};
}

inline void from_json(const Json& j, JobPosting& p) {
  j.at("job_id").get_to(p.job_id);
  j.at("title").get_to(p.title);
  j.at("company").get_to(p.company);
  j.at("description").get_to(p.description);
}

inline Json job_json(const JobRef& job) {
  if (!job) throw SchemaError("null job reference");
  return Json(*job);
}

inline JobRef job_from_json(const Json& j) {
  return std::make_shared<const JobPosting>(j.get<JobPosting>());
}

inline void to_json(Json& j, const JobAction& a) {
  j = Json{{"job", job_json(a.job)}, {"action", a.action}, {"timestamp", a.timestamp}};
}

inline void from_json(const Json& j, JobAction& a) {
  a.job = job_from_json(j.at("job"));
  j.at("action").get_to(a.action);
  j.at("timestamp").get_to(a.timestamp);
}

inline void to_json(Json& j, const MemberContext& c) {
  j = Json{{"member_id", c.member_id},
           {"profile_attributes", c.profile_attributes},
           {"professional_content", c.professional_content},
           {"job_search_actions", c.job_search_actions},
           {"search_queries", c.search_queries}};
}

inline void from_json(const Json& j, MemberContext& c) {
  j.at("member_id").get_to(c.member_id);
  j.at("profile_attributes").get_to(c.profile_attributes);
  j.at("professional_content").get_to(c.professional_content);
  j.at("job_search_actions").get_to(c.job_search_actions);
  j.at("search_queries").get_to(c.search_queries);
}

inline void to_json(Json& j, const EngagementEvent& e) {
  j = Json{{"member_id", e.member_id},
           {"job", job_json(e.job)},
           {"action", e.action},
           {"timestamp", e.timestamp}};
}

inline void from_json(const Json& j, EngagementEvent& e) {
  j.at("member_id").get_to(e.member_id);
  e.job = job_from_json(j.at("job"));
  j.at("action").get_to(e.action);
  j.at("timestamp").get_to(e.timestamp);
  if (e.timestamp <= 0) throw SchemaError("timestamp must be positive");
}

inline void to_json(Json& j, const PointwiseSample& s) {
  j = Json{{"context", s.context}, {"target_job", job_json(s.target_job)}, {"label", s.label}};
}

inline void from_json(const Json& j, PointwiseSample& s) {
  j.at("context").get_to(s.context);
  s.target_job = job_from_json(j.at("target_job"));
  j.at("label").get_to(s.label);
  if (s.label != 0 && s.label != 1) throw SchemaError("label must be 0 or 1");
}

inline void to_json(Json& j, const ListwiseSample& s) {
  Json jobs = Json::array();
  for (const auto& t : s.target_jobs) jobs.push_back(job_json(t));
  j = Json{{"context", s.context}, {"target_jobs", std::move(jobs)}, {"labels", s.labels}};
}

inline void from_json(const Json& j, ListwiseSample& s) {
  j.at("context").get_to(s.context);
  s.target_jobs.clear();
  for (const auto& t : j.at("target_jobs")) s.target_jobs.push_back(job_from_json(t));
  j.at("labels").get_to(s.labels);
}

inline void to_json(Json& j, const Rollout& r) {
  j = Json{{"tokens", r.tokens},
           {"text", r.text},
           {"token_logprobs", r.token_logprobs},
           {"token_count", r.token_count}};
}

inline void from_json(const Json& j, Rollout& r) {
  j.at("tokens").get_to(r.tokens);
  j.at("text").get_to(r.text);
  j.at("token_logprobs").get_to(r.token_logprobs);
  j.at("token_count").get_to(r.token_count);
  if (auto v = validate_rollout(r); !v) throw SchemaError("invalid rollout: " + v.violations.front());
}

inline void to_json(Json& j, const RewardFlags& f) {
  j = Json::array();
  for (auto flag : kAllRewardFlags)
    if (f.has(flag)) j.push_back(std::string(to_string(flag)));
}

inline void from_json(const Json& j, RewardFlags& f) {
  f = RewardFlags{};
  for (const auto& e : j) {
    const auto name = e.get<std::string>();
    bool known = false;
    for (auto flag : kAllRewardFlags) {
      if (name == to_string(flag)) {
        f.set(flag);
        known = true;
      }
    }
    if (!known) throw SchemaError("unknown reward flag '" + name + "'");
  }
}

inline void to_json(Json& j, const RewardBreakdown& b) {
  j = Json{{"base", b.base},
           {"length_penalty", b.length_penalty},
           {"format_penalty", b.format_penalty},
           {"lambda", b.lambda},
           {"total", b.total},
           {"flags", b.flags}};
}

inline void from_json(const Json& j, RewardBreakdown& b) {
  j.at("base").get_to(b.base);
  j.at("length_penalty").get_to(b.length_penalty);
  j.at("format_penalty").get_to(b.format_penalty);
  j.at("lambda").get_to(b.lambda);
  j.at("total").get_to(b.total);
  j.at("flags").get_to(b.flags);
}

}  // namespace engagerl
