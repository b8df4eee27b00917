#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <unistd.h>

#include "engagerl/dataset.hpp"
#include "engagerl/jsonl.hpp"

using namespace engagerl;
using namespace engagerl::dataset;

namespace {

JobRef make_job(int i) {
  return std::make_shared<const JobPosting>(
      JobPosting{"job-" + std::to_string(i), "Title " + std::to_string(i), "Co", "desc"});
}

MemberLog stream(const std::string& id, const std::vector<ActionLabel>& actions, Timestamp t0 = 1000) {
  MemberLog m;
  m.member.member_id = id;
  m.member.profile_attributes = "profile";
  for (std::size_t i = 0; i < actions.size(); ++i)
    m.events.push_back({id, make_job(static_cast<int>(i)), actions[i], t0 + static_cast<Timestamp>(i) * 10});
  return m;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("engagerl_dataset_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

GeneratorConfig small(std::size_t members, std::uint64_t seed = 7) {
  GeneratorConfig c;
  c.member_count = members;
  c.seed = seed;
  c.context_tokens = 40;
  return c;
}

}  // namespace

TEST(Generator, SameSeedSameLogs) {
  const auto c = small(200);
  EXPECT_EQ(generate_logs(c), generate_logs(c));
  EXPECT_EQ(generate_logs(c), generate_logs(c, 3));
}

TEST(Generator, DifferentSeedDifferentLogs) {
  EXPECT_NE(generate_logs(small(50, 7)), generate_logs(small(50, 8)));
}

TEST(Generator, ZeroMembers) { EXPECT_TRUE(generate_logs(small(0)).empty()); }

TEST(Generator, EventsAreSortedDistinctAndInWindow) {
  const auto c = small(300);
  for (const auto& log : generate_logs(c)) {
    ASSERT_GE(log.events.size(), c.min_jobs_per_member);
    ASSERT_LE(log.events.size(), c.max_jobs_per_member);
    std::set<std::string> jobs;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
      const auto& e = log.events[i];
      EXPECT_EQ(e.member_id, log.member.member_id);
      EXPECT_GE(e.timestamp, c.start_timestamp);
      EXPECT_LT(e.timestamp, c.end());
      if (i) {
        EXPECT_LT(log.events[i - 1].timestamp, e.timestamp);
      }
      EXPECT_TRUE(jobs.insert(e.job->job_id).second);
    }
    EXPECT_TRUE(log.member.job_search_actions.empty());
    EXPECT_FALSE(log.member.search_queries.empty());
  }
}

TEST(Generator, ContextTokenKnobScalesText) {
  auto c = small(5);
  c.context_tokens = 1000;
  for (const auto& log : generate_logs(c)) {
    const auto words = std::count(log.member.professional_content.begin(), log.member.professional_content.end(), ' ') + 1;
    EXPECT_GE(words, 1000);
    EXPECT_LT(words, 1100);
  }
}

TEST(Generator, EngineerPersonaAppliesMoreToEngineerJobs) {
  auto c = small(6000, 11);
  const auto logs = generate_logs(c);
  std::size_t n = 0, applies = 0, off_n = 0, off_applies = 0;
  for (const auto& log : logs) {
    if (kPersonas[log.persona].field != "engineering") continue;
    for (const auto& e : log.events) {
      const bool engineer_job = e.job->title.find("Engineer") != std::string::npos;
      (engineer_job ? n : off_n) += 1;
      if (e.action == ActionLabel::apply) (engineer_job ? applies : off_applies) += 1;
    }
  }
  ASSERT_GE(n, 10000u);
  const double rate = static_cast<double>(applies) / static_cast<double>(n);
  const double sigma = std::sqrt(c.p_apply * (1.0 - c.p_apply) / static_cast<double>(n));
  EXPECT_GT(rate, c.p_apply + 3.0 * sigma) << "apply rate " << rate;
  const double off_rate = static_cast<double>(off_applies) / static_cast<double>(off_n);
  EXPECT_LT(off_rate, c.p_apply);
}

TEST(Generator, ConfigValidation) {
  auto c = small(1);
  c.p_apply = 0.5;
  try {
    generate_logs(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("p_apply + p_view + p_skip"), std::string::npos);
  }
  c = small(1);
  c.validation_days = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(1);
  c.min_jobs_per_member = 5;
  c.max_jobs_per_member = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(1);
  c.persona_count = 9;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TemporalSplit, AllBeforeCutoff) {
  const auto s = stream("m", {ActionLabel::view, ActionLabel::apply});
  const auto [train, val] = temporal_split(s.events, 5000);
  EXPECT_EQ(train.size(), 2u);
  EXPECT_TRUE(val.empty());
}

TEST(TemporalSplit, EventAtCutoffGoesToValidation) {
  const auto s = stream("m", {ActionLabel::view, ActionLabel::apply, ActionLabel::skip});
  const auto [train, val] = temporal_split(s.events, 1010);
  ASSERT_EQ(train.size(), 1u);
  ASSERT_EQ(val.size(), 2u);
  EXPECT_EQ(val.front().timestamp, 1010);
}

TEST(TemporalSplit, RandomInterleavingsRespectTimestamps) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EngagementEvent> events;
    const auto n = rng.below(40);
    for (std::uint64_t i = 0; i < n; ++i)
      events.push_back({"m", make_job(static_cast<int>(i)), ActionLabel::view, rng.between(1, 100)});
    const Timestamp cutoff = rng.between(1, 100);
    const auto [train, val] = temporal_split(events, cutoff);
    EXPECT_EQ(train.size() + val.size(), events.size());
    for (const auto& e : train) EXPECT_LT(e.timestamp, cutoff);
    for (const auto& e : val) EXPECT_GE(e.timestamp, cutoff);
  }
}

TEST(Pointwise, DownsamplesToExactBalance) {
  std::vector<MemberLog> streams;
  for (int i = 0; i < 400; ++i)
    streams.push_back(stream("m" + std::to_string(i), {ActionLabel::skip, i < 100 ? ActionLabel::apply : ActionLabel::view}));
  const auto samples = build_pointwise(streams, 42);
  ASSERT_EQ(samples.size(), 200u);
  EXPECT_EQ(std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.label == 1; }), 100);
  EXPECT_EQ(build_pointwise(streams, 42), samples);
  EXPECT_NE(build_pointwise(streams, 43), samples);
  EXPECT_EQ(build_pointwise(streams, std::nullopt).size(), 400u);
}

TEST(Pointwise, LastViewIsNegativeAndContextHasHistory) {
  const auto s = pointwise_from_events(stream("m", {ActionLabel::apply, ActionLabel::skip, ActionLabel::view}).member,
                                       stream("m", {ActionLabel::apply, ActionLabel::skip, ActionLabel::view}).events);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->label, 0);
  EXPECT_EQ(s->target_job->job_id, "job-2");
  ASSERT_EQ(s->context.job_search_actions.size(), 2u);
  EXPECT_EQ(s->context.job_search_actions[0].action, ActionLabel::apply);
  EXPECT_TRUE(validate_sample(*s).ok());
}

TEST(Pointwise, SingleEventSkipped) {
  std::vector<MemberLog> streams{stream("m", {ActionLabel::apply})};
  EXPECT_TRUE(build_pointwise(streams, std::nullopt).empty());
}

TEST(Pointwise, OneClassOnlyYieldsNothing) {
  std::vector<MemberLog> streams;
  for (int i = 0; i < 10; ++i) streams.push_back(stream("m" + std::to_string(i), {ActionLabel::skip, ActionLabel::apply}));
  EXPECT_TRUE(build_pointwise(streams, 1).empty());
}

TEST(Listwise, UniformListDropped) {
  using A = ActionLabel;
  std::vector<MemberLog> streams{stream("m", {A::apply, A::skip, A::skip, A::skip, A::skip, A::skip})};
  EXPECT_TRUE(build_listwise(streams).empty());
}

TEST(Listwise, MixedListRetained) {
  using A = ActionLabel;
  std::vector<MemberLog> streams{stream("m", {A::view, A::apply, A::view, A::skip, A::view, A::skip})};
  const auto out = build_listwise(streams);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].labels, (std::vector<A>{A::apply, A::view, A::skip, A::view, A::skip}));
  ASSERT_EQ(out[0].context.job_search_actions.size(), 1u);
  EXPECT_EQ(out[0].target_jobs[0]->job_id, "job-1");
  EXPECT_TRUE(validate_sample(out[0]).ok());
}

TEST(Listwise, FiveEventsSkipped) {
  using A = ActionLabel;
  std::vector<MemberLog> streams{stream("m", {A::apply, A::view, A::skip, A::view, A::skip})};
  EXPECT_TRUE(build_listwise(streams).empty());
}

TEST(Serialization, RoundTripThousandSamples) {
  const auto d = build_dataset(small(2500));
  ASSERT_GE(d.train_pointwise.size(), 1000u);
  const std::vector<PointwiseSample> first(d.train_pointwise.begin(), d.train_pointwise.begin() + 1000);
  const auto dir = temp_dir("roundtrip");
  write_jsonl(dir / "p.jsonl", first);
  EXPECT_EQ(read_jsonl<PointwiseSample>(dir / "p.jsonl"), first);
  write_jsonl(dir / "l.jsonl", d.train_listwise);
  EXPECT_EQ(read_jsonl<ListwiseSample>(dir / "l.jsonl"), d.train_listwise);
  write_jsonl(dir / "logs.jsonl", d.logs);
  EXPECT_EQ(read_jsonl<MemberLog>(dir / "logs.jsonl"), d.logs);
  std::filesystem::remove_all(dir);
}

TEST(Serialization, TruncatedLineNamed) {
  const auto d = build_dataset(small(400));
  ASSERT_GE(d.train_pointwise.size(), 60u);
  auto text = to_jsonl(d.train_pointwise);
  std::size_t pos = 0;
  for (int line = 1; line < 57; ++line) pos = text.find('\n', pos) + 1;
  const auto end = text.find('\n', pos);
  text.erase(pos + (end - pos) / 2, end - pos - (end - pos) / 2);
  const auto dir = temp_dir("trunc");
  write_file_atomic(dir / "bad.jsonl", text);
  try {
    read_jsonl<PointwiseSample>(dir / "bad.jsonl");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.line(), 57u);
    EXPECT_NE(std::string(e.what()).find("line 57"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bad.jsonl"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Serialization, EmptyFileEmptySet) {
  const auto dir = temp_dir("empty");
  write_file_atomic(dir / "e.jsonl", "");
  EXPECT_TRUE(read_jsonl<ListwiseSample>(dir / "e.jsonl").empty());
  EXPECT_THROW(read_jsonl<ListwiseSample>(dir / "missing.jsonl"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, TenThousandMemberInvariants) {
  const auto c = small(10000, 2024);
  const auto d = build_dataset(c);
  const auto pos = std::count_if(d.train_pointwise.begin(), d.train_pointwise.end(), [](const auto& s) { return s.label == 1; });
  EXPECT_GT(pos, 0);
  EXPECT_EQ(static_cast<std::size_t>(2 * pos), d.train_pointwise.size());
  EXPECT_TRUE(leakage_audit(d).empty());
  for (const auto& s : d.train_listwise) EXPECT_GT(std::set<ActionLabel>(s.labels.begin(), s.labels.end()).size(), 1u);
  for (const auto& s : d.val_listwise) EXPECT_GT(std::set<ActionLabel>(s.labels.begin(), s.labels.end()).size(), 1u);
  EXPECT_TRUE(audit_samples(d.train_pointwise).empty());
  EXPECT_TRUE(audit_samples(d.train_listwise).empty());
  EXPECT_TRUE(audit_samples(d.val_pointwise).empty());
  EXPECT_TRUE(audit_samples(d.val_listwise).empty());
  EXPECT_FALSE(d.val_pointwise.empty());
  EXPECT_FALSE(d.val_listwise.empty());
  EXPECT_FALSE(d.train_listwise.empty());
  // Validation keeps its natural label distribution.
  const auto val_pos = std::count_if(d.val_pointwise.begin(), d.val_pointwise.end(), [](const auto& s) { return s.label == 1; });
  EXPECT_NE(static_cast<std::size_t>(2 * val_pos), d.val_pointwise.size());

  const auto again = build_dataset(c);
  EXPECT_EQ(to_jsonl(again.train_pointwise), to_jsonl(d.train_pointwise));
  EXPECT_EQ(to_jsonl(again.val_listwise), to_jsonl(d.val_listwise));
}

TEST(Pipeline, AuditCatchesInjectedLeak) {
  auto d = build_dataset(small(300));
  ASSERT_FALSE(d.train_pointwise.empty());
  auto& ctx = d.train_pointwise.front().context;
  ctx.job_search_actions.push_back({make_job(999999), ActionLabel::view, d.cutoff + 5});
  EXPECT_FALSE(leakage_audit(d).empty());
}

TEST(Pipeline, WritesFiveFiles) {
  const auto dir = temp_dir("files");
  write_dataset(dir, build_dataset(small(100)));
  for (auto name : kDatasetFiles) EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, TwoHundredThousandSamplesQuickly) {
  auto c = small(90000, 5);
  c.context_tokens = 250;
  const auto start = std::chrono::steady_clock::now();
  const auto d = build_dataset(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto total = d.train_pointwise.size() + d.train_listwise.size() + d.val_pointwise.size() + d.val_listwise.size();
  std::cout << "samples " << total << " in " << secs << " s\n";
  EXPECT_GE(total, 200000u);
  EXPECT_LT(secs, 120.0);
}
