#pragma once

// Synthetic engagement logs and the sample-construction pipeline: temporal
// split, pointwise samples balanced 1:1 on the train side, listwise samples
// over the last five actions with uniform-label lists removed.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "engagerl/domain.hpp"
#include "engagerl/errors.hpp"
#include "engagerl/jsonl.hpp"
#include "engagerl/random.hpp"

namespace engagerl::dataset {

inline constexpr Timestamp kSecondsPerDay = 86400;

struct GeneratorConfig {
  std::uint64_t seed = 7;
  std::size_t member_count = 1000;
  std::size_t min_jobs_per_member = 8;
  std::size_t max_jobs_per_member = 24;
  double p_apply = 0.2;
  double p_view = 0.35;
  double p_skip = 0.45;
  std::size_t persona_count = 6;
  /// Probability that a member's next job comes from their own persona's field.
  double persona_affinity = 0.6;
  int observation_days = 30;
  int validation_days = 14;
  /// Approximate word count of each member's free-text context.
  std::size_t context_tokens = 250;
  std::size_t catalog_size = 0;  // 0: 60 jobs per persona
  Timestamp start_timestamp = 1704067200;  // 2024-01-01T00:00:00Z

  void validate() const {
    for (auto [name, p] : {std::pair{"p_apply", p_apply}, {"p_view", p_view}, {"p_skip", p_skip}}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be in [0, 1]");
    }
    if (std::abs(p_apply + p_view + p_skip - 1.0) > 1e-9)
      throw ConfigError("p_apply + p_view + p_skip must sum to 1 (got " +
                        std::to_string(p_apply + p_view + p_skip) + ")");
    if (observation_days <= 0) throw ConfigError("observation_days must be > 0");
    if (validation_days <= 0) throw ConfigError("validation_days must be > 0");
    if (min_jobs_per_member < 1) throw ConfigError("min_jobs_per_member must be >= 1");
    if (max_jobs_per_member < min_jobs_per_member)
      throw ConfigError("max_jobs_per_member must be >= min_jobs_per_member");
    if (!(persona_affinity >= 0.0 && persona_affinity <= 1.0))
      throw ConfigError("persona_affinity must be in [0, 1]");
    if (start_timestamp <= 0) throw ConfigError("start_timestamp must be > 0");
    if (persona_count < 1 || persona_count > 8) throw ConfigError("persona_count must be in [1, 8]");
  }

  Timestamp cutoff() const { return start_timestamp + observation_days * kSecondsPerDay; }
  Timestamp end() const { return cutoff() + validation_days * kSecondsPerDay; }
};

// ---------------------------------------------------------------------------
// Personas

struct Persona {
  std::string_view field;
  std::array<std::string_view, 4> titles;
  std::array<std::string_view, 6> skills;
  std::array<std::string_view, 3> topics;
};

inline constexpr std::array<Persona, 8> kPersonas{{
    {"engineering",
     {"Software Engineer", "Backend Engineer", "Site Reliability Engineer", "Platform Engineer"},
     {"C++", "Go", "Kubernetes", "distributed systems", "PostgreSQL", "gRPC"},
     {"system design", "on-call practices", "code review"}},
    {"data",
     {"Data Scientist", "Data Analyst", "Research Scientist", "Analytics Manager"},
     {"Python", "SQL", "causal inference", "A/B testing", "forecasting", "dashboards"},
     {"experiment design", "metric definitions", "model evaluation"}},
    {"product",
     {"Product Manager", "Product Operations Manager", "Program Manager", "Product Owner"},
     {"roadmapping", "stakeholder management", "user research", "OKRs", "prioritization", "launch planning"},
     {"product strategy", "customer discovery", "cross-functional planning"}},
    {"design",
     {"Graphic Designer", "UX Designer", "Product Designer", "Visual Designer"},
     {"Figma", "typography", "design systems", "prototyping", "illustration", "accessibility"},
     {"visual storytelling", "usability testing", "brand identity"}},
    {"sales",
     {"Account Executive", "Sales Manager", "Business Development Representative", "Customer Success Manager"},
     {"negotiation", "CRM", "pipeline management", "forecast calls", "enterprise sales", "renewals"},
     {"closing deals", "territory planning", "customer retention"}},
    {"operations",
     {"Operations Excellence Lead", "Supply Chain Analyst", "Logistics Coordinator", "Operations Manager"},
     {"process optimization", "lean", "vendor management", "inventory planning", "six sigma", "scheduling"},
     {"process improvement", "warehouse throughput", "operational planning"}},
    {"finance",
     {"Financial Analyst", "Accountant", "Financial Controller", "Investment Associate"},
     {"financial modeling", "Excel", "GAAP", "budgeting", "valuation", "audit"},
     {"quarterly close", "capital allocation", "cost reporting"}},
    {"healthcare",
     {"Registered Nurse", "Clinical Coordinator", "Pharmacist", "Medical Assistant"},
     {"patient care", "EHR systems", "triage", "care planning", "medication safety", "phlebotomy"},
     {"patient outcomes", "clinical workflows", "care coordination"}},
}};

inline constexpr std::array<std::string_view, 16> kCompanies{
    "Acme",         "Globex",       "Initech",        "Hooli",        "Vandelay Industries", "Pied Piper",
    "Stark Logistics", "Wayne Health", "Tyrell Systems", "Oscorp",    "Nakatomi Trading",    "Monarch Design",
    "Bluth Company", "Dunder Mifflin", "Soylent Foods", "Wonka Retail"};

inline constexpr std::array<std::string_view, 8> kLocations{"Berlin", "Toronto", "Austin", "Dublin",
                                                            "Singapore", "Sydney", "Chicago", "Lisbon"};

inline constexpr std::array<std::string_view, 4> kSeniority{"", "Senior ", "Junior ", "Principal "};

/// Multiplicative (apply, view, skip) propensities for jobs in / outside the
/// member's own field, applied to the base probabilities then renormalized.
inline constexpr std::array<double, 3> kInFieldBias{3.0, 1.5, 0.5};
inline constexpr std::array<double, 3> kOffFieldBias{0.5, 1.0, 1.5};

inline std::array<double, 3> action_probabilities(const GeneratorConfig& c, bool in_field) {
  const auto& bias = in_field ? kInFieldBias : kOffFieldBias;
  std::array<double, 3> w{c.p_apply * bias[0], c.p_view * bias[1], c.p_skip * bias[2]};
  const double total = w[0] + w[1] + w[2];
  if (total <= 0.0) return {c.p_apply, c.p_view, c.p_skip};
  for (double& x : w) x /= total;
  return w;
}

struct JobCatalog {
  std::vector<JobRef> jobs;
  std::vector<std::size_t> field_of;                 // per job
  std::vector<std::vector<std::size_t>> by_field;    // job indices per persona
};

inline std::size_t effective_personas(const GeneratorConfig& c) {
  return std::clamp<std::size_t>(c.persona_count, 1, kPersonas.size());
}

inline JobCatalog make_catalog(const GeneratorConfig& c) {
  const std::size_t personas = effective_personas(c);
  const std::size_t n = c.catalog_size ? c.catalog_size : personas * 60;
  Rng rng(derive_seed(c.seed, 0xCA7A1065ULL));
  JobCatalog cat;
  cat.by_field.resize(personas);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t f = i % personas;
    const auto& p = kPersonas[f];
    JobPosting job;
    char id[32];
    std::snprintf(id, sizeof id, "job-%06zu", i);
    job.job_id = id;
    job.title = std::string(kSeniority[rng.below(kSeniority.size())]) + std::string(p.titles[rng.below(p.titles.size())]);
    job.company = std::string(kCompanies[rng.below(kCompanies.size())]);
    const auto s1 = rng.below(p.skills.size());
    const auto s2 = (s1 + 1 + rng.below(p.skills.size() - 1)) % p.skills.size();
    job.description = "Work on " + std::string(p.topics[rng.below(p.topics.size())]) + " using " +
                      std::string(p.skills[s1]) + " and " + std::string(p.skills[s2]) + " with a team in " +
                      std::string(kLocations[rng.below(kLocations.size())]) + ".";
    cat.jobs.push_back(std::make_shared<const JobPosting>(std::move(job)));
    cat.field_of.push_back(f);
    cat.by_field[f].push_back(i);
  }
  return cat;
}

// ---------------------------------------------------------------------------
// Logs

/// A member's static context (job_search_actions left empty) and their
/// time-ordered events.
struct MemberLog {
  MemberContext member;
  std::size_t persona = 0;
  std::vector<EngagementEvent> events;

  bool operator==(const MemberLog&) const = default;
};

inline void to_json(Json& j, const MemberLog& m) {
  j = Json{{"member", m.member}, {"persona", m.persona}, {"events", m.events}};
}

inline void from_json(const Json& j, MemberLog& m) {
  m.member = j.at("member").get<MemberContext>();
  m.persona = j.at("persona").get<std::size_t>();
  m.events = j.at("events").get<std::vector<EngagementEvent>>();
  for (std::size_t i = 1; i < m.events.size(); ++i)
    if (m.events[i].timestamp < m.events[i - 1].timestamp) throw SchemaError("events not in time order");
}

inline std::string member_id_of(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "m%07zu", index);
  return buf;
}

inline MemberLog generate_member(const GeneratorConfig& c, const JobCatalog& cat, std::size_t index) {
  Rng rng(derive_seed(c.seed, index, 0x3E3BE7ULL));
  const std::size_t personas = effective_personas(c);
  MemberLog log;
  log.persona = rng.below(personas);
  const auto& p = kPersonas[log.persona];
  auto& m = log.member;
  m.member_id = member_id_of(index);

  const auto location = kLocations[rng.below(kLocations.size())];
  const auto title = std::string(kSeniority[rng.below(kSeniority.size())]) + std::string(p.titles[rng.below(p.titles.size())]);
  m.profile_attributes = "Headline: " + title + " | Location: " + std::string(location) +
                         " | Years of experience: " + std::to_string(1 + rng.below(20)) + " | Skills: " +
                         std::string(p.skills[rng.below(6)]) + ", " + std::string(p.skills[rng.below(6)]) + ", " +
                         std::string(p.skills[rng.below(6)]);

  const auto query_count = 1 + rng.below(4);
  for (std::uint64_t q = 0; q < query_count; ++q) {
    std::string query(p.titles[rng.below(p.titles.size())]);
    for (auto& ch : query) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (rng.below(2)) query += " " + std::string(location);
    m.search_queries.push_back(std::move(query));
  }

  static constexpr std::array<std::string_view, 5> kOpeners{
      "Shared an article about ", "Completed a course on ", "Wrote a post on ", "Commented on a thread about ",
      "Gave a talk covering "};
  std::size_t words = 0;
  while (words < c.context_tokens) {
    std::string sentence = std::string(kOpeners[rng.below(kOpeners.size())]);
    sentence += rng.below(2) ? std::string(p.skills[rng.below(6)]) : std::string(p.topics[rng.below(3)]);
    sentence += ". ";
    words += static_cast<std::size_t>(std::count(sentence.begin(), sentence.end(), ' '));
    m.professional_content += sentence;
  }
  if (!m.professional_content.empty()) m.professional_content.pop_back();

  const auto k = static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(c.min_jobs_per_member), static_cast<std::int64_t>(c.max_jobs_per_member)));
  const auto target_k = std::min(k, cat.jobs.size());
  std::unordered_set<std::size_t> used;
  std::unordered_set<Timestamp> times;
  const auto span = static_cast<std::uint64_t>(c.end() - c.start_timestamp);
  while (log.events.size() < target_k) {
    const auto& own = cat.by_field[log.persona];
    const std::size_t j = (!own.empty() && rng.uniform() < c.persona_affinity) ? own[rng.below(own.size())]
                                                                                : rng.below(cat.jobs.size());
    if (!used.insert(j).second) continue;
    const auto probs = action_probabilities(c, cat.field_of[j] == log.persona);
    const double u = rng.uniform();
    const ActionLabel action = u < probs[0] ? ActionLabel::apply
                               : u < probs[0] + probs[1] ? ActionLabel::view
                                                         : ActionLabel::skip;
    Timestamp ts;
    do {
      ts = c.start_timestamp + static_cast<Timestamp>(rng.below(span));
    } while (!times.insert(ts).second);
    log.events.push_back({m.member_id, cat.jobs[j], action, ts});
  }
  std::sort(log.events.begin(), log.events.end(),
            [](const EngagementEvent& a, const EngagementEvent& b) { return a.timestamp < b.timestamp; });
  return log;
}

/// Deterministic in (seed, member index); `threads` only changes speed.
inline std::vector<MemberLog> generate_logs(const GeneratorConfig& c, unsigned threads = 1) {
  c.validate();
  const auto cat = make_catalog(c);
  std::vector<MemberLog> logs(c.member_count);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, c.member_count))));
  if (threads == 1) {
    for (std::size_t i = 0; i < logs.size(); ++i) logs[i] = generate_member(c, cat, i);
    return logs;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < logs.size(); i += threads) logs[i] = generate_member(c, cat, i);
    });
  for (auto& th : pool) th.join();
  return logs;
}

// ---------------------------------------------------------------------------
// Construction

/// Events strictly before `cutoff` train; events at or after it validate.
inline std::pair<std::vector<EngagementEvent>, std::vector<EngagementEvent>> temporal_split(
    std::span<const EngagementEvent> events, Timestamp cutoff) {
  std::pair<std::vector<EngagementEvent>, std::vector<EngagementEvent>> out;
  for (const auto& e : events) (e.timestamp < cutoff ? out.first : out.second).push_back(e);
  return out;
}

/// Context = member profile plus the given history, minus any action on an
/// excluded job.
inline MemberContext context_with_history(const MemberContext& member, std::span<const EngagementEvent> history,
                                          std::span<const JobRef> exclude = {}) {
  MemberContext ctx = member;
  ctx.job_search_actions.clear();
  for (const auto& e : history) {
    const bool excluded = std::any_of(exclude.begin(), exclude.end(),
                                      [&](const JobRef& j) { return j && e.job && j->job_id == e.job->job_id; });
    if (!excluded) ctx.job_search_actions.push_back({e.job, e.action, e.timestamp});
  }
  return ctx;
}

/// Last event is the target; earlier events form the context. Needs >= 2 events.
inline std::optional<PointwiseSample> pointwise_from_events(const MemberContext& member,
                                                            std::span<const EngagementEvent> events) {
  if (events.size() < 2) return std::nullopt;
  const auto& target = events.back();
  PointwiseSample s;
  const JobRef excl[] = {target.job};
  s.context = context_with_history(member, events.first(events.size() - 1), excl);
  s.target_job = target.job;
  s.label = target.action == ActionLabel::apply ? 1 : 0;
  return s;
}

/// Last five events are the targets; earlier events form the context. Needs
/// >= 6 events and non-uniform labels.
inline std::optional<ListwiseSample> listwise_from_events(const MemberContext& member,
                                                          std::span<const EngagementEvent> events) {
  if (events.size() < kListwiseArity + 1) return std::nullopt;
  const auto targets = events.last(kListwiseArity);
  ListwiseSample s;
  for (const auto& e : targets) {
    s.target_jobs.push_back(e.job);
    s.labels.push_back(e.action);
  }
  if (std::all_of(s.labels.begin(), s.labels.end(), [&](ActionLabel l) { return l == s.labels.front(); }))
    return std::nullopt;
  s.context = context_with_history(member, events.first(events.size() - kListwiseArity), s.target_jobs);
  return s;
}

/// Keeps every sample of the minority class and an equal, seeded random
/// subset of the majority class. Relative order is preserved.
inline std::vector<PointwiseSample> balance_pointwise(std::vector<PointwiseSample> samples, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].label == 1 ? pos : neg).push_back(i);
  auto& majority = pos.size() > neg.size() ? pos : neg;
  const std::size_t keep = std::min(pos.size(), neg.size());
  Rng rng(seed);
  rng.shuffle(majority.begin(), majority.end());
  majority.resize(keep);
  std::vector<bool> kept(samples.size(), false);
  for (auto i : pos) kept[i] = true;
  for (auto i : neg) kept[i] = true;
  std::vector<PointwiseSample> out;
  out.reserve(2 * keep);
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (kept[i]) out.push_back(std::move(samples[i]));
  return out;
}

/// One pointwise sample per member stream; balanced 1:1 when a seed is given.
inline std::vector<PointwiseSample> build_pointwise(std::span<const MemberLog> streams,
                                                    std::optional<std::uint64_t> balance_seed) {
  std::vector<PointwiseSample> out;
  for (const auto& s : streams)
    if (auto p = pointwise_from_events(s.member, s.events)) out.push_back(std::move(*p));
  return balance_seed ? balance_pointwise(std::move(out), *balance_seed) : out;
}

inline std::vector<ListwiseSample> build_listwise(std::span<const MemberLog> streams) {
  std::vector<ListwiseSample> out;
  for (const auto& s : streams)
    if (auto l = listwise_from_events(s.member, s.events)) out.push_back(std::move(*l));
  return out;
}

struct Dataset {
  std::vector<MemberLog> logs;
  std::vector<PointwiseSample> train_pointwise;
  std::vector<ListwiseSample> train_listwise;
  std::vector<PointwiseSample> val_pointwise;
  std::vector<ListwiseSample> val_listwise;
  Timestamp cutoff = 0;
};

/// Train samples see only events before the cutoff. Validation targets are
/// the member's final events at or after the cutoff, with every earlier event
/// as context. Only the train side is downsampled.
inline Dataset build_dataset(const GeneratorConfig& c, std::vector<MemberLog> logs) {
  c.validate();
  Dataset d;
  d.cutoff = c.cutoff();
  std::vector<MemberLog> train_streams;
  train_streams.reserve(logs.size());
  for (const auto& log : logs) {
    MemberLog t{log.member, log.persona, temporal_split(log.events, d.cutoff).first};
    train_streams.push_back(std::move(t));

    if (!log.events.empty() && log.events.back().timestamp >= d.cutoff)
      if (auto p = pointwise_from_events(log.member, log.events)) d.val_pointwise.push_back(std::move(*p));
    if (log.events.size() > kListwiseArity && log.events[log.events.size() - kListwiseArity].timestamp >= d.cutoff)
      if (auto l = listwise_from_events(log.member, log.events)) d.val_listwise.push_back(std::move(*l));
  }
  d.train_pointwise = build_pointwise(train_streams, derive_seed(c.seed, 0xBA1A4CEULL));
  d.train_listwise = build_listwise(train_streams);
  d.logs = std::move(logs);
  return d;
}

inline Dataset build_dataset(const GeneratorConfig& c, unsigned threads = 1) {
  return build_dataset(c, generate_logs(c, threads));
}

// ---------------------------------------------------------------------------
// Files

inline constexpr std::array<std::string_view, 5> kDatasetFiles{
    "logs.jsonl", "train_pointwise.jsonl", "train_listwise.jsonl", "val_pointwise.jsonl", "val_listwise.jsonl"};

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_jsonl(dir / "logs.jsonl", d.logs);
  write_jsonl(dir / "train_pointwise.jsonl", d.train_pointwise);
  write_jsonl(dir / "train_listwise.jsonl", d.train_listwise);
  write_jsonl(dir / "val_pointwise.jsonl", d.val_pointwise);
  write_jsonl(dir / "val_listwise.jsonl", d.val_listwise);
}

/// Offending sample violations, each prefixed with its index.
template <typename Sample>
std::vector<std::string> audit_samples(const std::vector<Sample>& samples) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (const auto& v : validate_sample(samples[i]).violations) out.push_back("sample " + std::to_string(i) + ": " + v);
  return out;
}

/// Timestamp audit: every train context and target precedes the cutoff, and
/// every validation context precedes its targets. Returns violations.
inline std::vector<std::string> leakage_audit(const Dataset& d) {
  std::vector<std::string> out;
  auto check_ctx = [&](const MemberContext& c, Timestamp bound, const std::string& where) {
    for (const auto& a : c.job_search_actions)
      if (a.timestamp >= bound) {
        out.push_back(where + ": context action at " + std::to_string(a.timestamp) + " >= " + std::to_string(bound));
        return;
      }
  };
  // Index targets by (member, job) to recover their timestamps.
  std::unordered_map<std::string, Timestamp> when;
  for (const auto& log : d.logs)
    for (const auto& e : log.events) when[log.member.member_id + "\x1f" + e.job->job_id] = e.timestamp;
  auto ts_of = [&](const MemberContext& c, const JobRef& j) {
    const auto it = when.find(c.member_id + "\x1f" + j->job_id);
    return it == when.end() ? Timestamp{-1} : it->second;
  };
  for (std::size_t i = 0; i < d.train_pointwise.size(); ++i) {
    const auto& s = d.train_pointwise[i];
    const auto t = ts_of(s.context, s.target_job);
    if (t < 0 || t >= d.cutoff) out.push_back("train_pointwise " + std::to_string(i) + ": target not before cutoff");
    check_ctx(s.context, std::min(t, d.cutoff), "train_pointwise " + std::to_string(i));
  }
  for (std::size_t i = 0; i < d.train_listwise.size(); ++i) {
    const auto& s = d.train_listwise[i];
    Timestamp first = d.cutoff;
    for (const auto& j : s.target_jobs) {
      const auto t = ts_of(s.context, j);
      if (t < 0 || t >= d.cutoff) out.push_back("train_listwise " + std::to_string(i) + ": target not before cutoff");
      first = std::min(first, t);
    }
    check_ctx(s.context, first, "train_listwise " + std::to_string(i));
  }
  for (std::size_t i = 0; i < d.val_pointwise.size(); ++i) {
    const auto& s = d.val_pointwise[i];
    const auto t = ts_of(s.context, s.target_job);
    if (t < d.cutoff) out.push_back("val_pointwise " + std::to_string(i) + ": target before cutoff");
    check_ctx(s.context, t, "val_pointwise " + std::to_string(i));
  }
  for (std::size_t i = 0; i < d.val_listwise.size(); ++i) {
    const auto& s = d.val_listwise[i];
    Timestamp first = std::numeric_limits<Timestamp>::max();
    for (const auto& j : s.target_jobs) {
      const auto t = ts_of(s.context, j);
      if (t < d.cutoff) out.push_back("val_listwise " + std::to_string(i) + ": target before cutoff");
      first = std::min(first, t);
    }
    check_ctx(s.context, first, "val_listwise " + std::to_string(i));
  }
  return out;
}

}  // namespace engagerl::dataset
