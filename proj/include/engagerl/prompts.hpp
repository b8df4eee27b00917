#pragma once

// Prompt templates for the reward model (pointwise yes/no and listwise
// ranking) and the actor, plus helpers to turn a rendered ChatML prompt into
// chat-completions messages.
//
// Rendering is a single left-to-right pass over the template: substituted
// values are copied verbatim and never rescanned, so braces inside member
// summaries or job text pass through untouched.

#include <cctype>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "engagerl/domain.hpp"
#include "engagerl/errors.hpp"

namespace engagerl::prompts {

inline constexpr std::string_view kTemplateVersion = "reward-prompts/v1";

inline constexpr std::string_view kPointwiseTemplate =
    "<|im_start|>system\n"
    "You are an assistant tasked with predicting whether a member would apply to a specific job "
    "posting, based solely on the member's summary.\n"
    "\n"
    "The member summary may include high-level information such as background, interests, career "
    "goals, or inferred intent. Use this summary to evaluate the relevance and appeal of the job "
    "posting to the member.\n"
    "\n"
    "Interpretation Guidelines:\n"
    "- apply: High interest or strong alignment with the member's background and intent.\n"
    "- not apply: Low interest or weak alignment with the member's background and intent.\n"
    "\n"
    "Output Instructions:\n"
    "- Output EXACTLY ONE WORD: yes if the member would apply, no otherwise.\n"
    "- Do NOT include any explanations, formatting, or punctuation.\n"
    "- Your output must be strictly yes or no\n"
    "<|im_end|>\n"
    "\n"
    "<|im_start|>user\n"
    "Input:\n"
    "- Member Summary:\n"
    "{member_summary}\n"
    "\n"
    "- Job Posting:\n"
    "{job_description}\n"
    "<|im_end|>\n";

inline constexpr std::string_view kListwiseTemplate =
    "<|im_start|>system\n"
    "You are an assistant tasked with ranking a list of 5 new job postings based on how much "
    "interest a member would have in each job, based on their provided member summary.\n"
    "\n"
    "The member summary may include high-level information such as background, interests, career "
    "goals, or inferred intent. Use this summary to rank the job postings from most to least "
    "relevant.\n"
    "\n"
    "Interpret the member's interest based on the following signals:\n"
    "- Jobs that are most relevant and strongly aligned with the member's goals should be ranked "
    "at the top.\n"
    "- Jobs that are moderately interesting should be ranked in the middle.\n"
    "- Jobs that are least relevant or poorly aligned should be ranked at the bottom.\n"
    "\n"
    "Output Instructions:\n"
    "- The final answer in the following format: [job_index_0, job_index_1, job_index_2, "
    "job_index_3, job_index_4]\n"
    "- The job indices must be integers corresponding to the input list, ordered from most to "
    "least relevant.\n"
    "- The list must include all job indices from the input, with no duplicates and no missing "
    "values.\n"
    "- Do not include any additional explanation or text outside the required format.\n"
    "<|im_end|>\n"
    "\n"
    "<|im_start|>user\n"
    "Input:\n"
    "- Member Summary:\n"
    "{member_summary}\n"
    "\n"
    "- 5 New Job Postings:\n"
    "{job_descriptions}\n"
    "<|im_end|>\n";

/// Actor instruction. {length_instruction} is empty unless explicit length
/// prompting is enabled.
inline constexpr std::string_view kActorTemplate =
    "<|im_start|>system\n"
    "You write member representations for a job recommendation system. Read the member's "
    "profile, professional content, job activity and job searches, then write a summary that "
    "keeps every signal useful for predicting which new jobs the member will apply to."
    "{length_instruction}\n"
    "<|im_end|>\n"
    "\n"
    "<|im_start|>user\n"
    "Profile:\n"
    "{profile_attributes}\n"
    "\n"
    "Professional content:\n"
    "{professional_content}\n"
    "\n"
    "Job activity (oldest first):\n"
    "{job_search_actions}\n"
    "\n"
    "Job searches:\n"
    "{search_queries}\n"
    "<|im_end|>\n";

inline constexpr std::string_view kConciseInstruction =
    " Answer with a single paragraph of two to three sentences.";

using Bindings = std::vector<std::pair<std::string_view, std::string_view>>;

/// Replaces each {name} that has a binding. Unknown placeholders are kept as
/// literal text.
inline std::string render_template(std::string_view tmpl, const Bindings& bindings) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name = tmpl.substr(i + 1, close - i - 1);
        bool bound = false;
        for (const auto& [key, value] : bindings) {
          if (key == name) {
            out.append(value);
            bound = true;
            break;
          }
        }
        if (bound) {
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i]);
    ++i;
  }
  return out;
}

/// "This is a Data Engineer position at Acme. <description>"
inline std::string describe_job(const JobPosting& job) {
  const bool vowel = !job.title.empty() &&
                     std::string_view("AEIOUaeiou").find(job.title.front()) != std::string_view::npos;
  std::string out = vowel ? "This is an " : "This is a ";
  out += job.title;
  out += " position at ";
  out += job.company;
  out += '.';
  if (!detail::blank(job.description)) {
    out += ' ';
    out += job.description;
  }
  return out;
}

inline std::string render_pointwise_prompt(std::string_view summary, const JobPosting& job) {
  if (detail::blank(summary)) throw InvalidArgument("empty member summary");
  const auto desc = describe_job(job);
  return render_template(kPointwiseTemplate, {{"member_summary", summary}, {"job_description", desc}});
}

inline std::string render_job_block(std::span<const JobRef> jobs) {
  std::string block;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!jobs[i]) throw InvalidArgument("null job in list");
    if (i) block += '\n';
    block += "Job " + std::to_string(i) + ": " + describe_job(*jobs[i]);
  }
  return block;
}

inline std::string render_listwise_prompt(std::string_view summary, std::span<const JobRef> jobs) {
  if (jobs.size() != kListwiseArity) throw InvalidArgument("listwise prompt needs exactly 5 jobs");
  if (detail::blank(summary)) throw InvalidArgument("empty member summary");
  const auto block = render_job_block(jobs);
  return render_template(kListwiseTemplate, {{"member_summary", summary}, {"job_descriptions", block}});
}

inline std::string render_actor_prompt(const MemberContext& ctx, bool explicit_length_prompt) {
  std::string actions;
  for (const auto& a : ctx.job_search_actions) {
    if (!actions.empty()) actions += '\n';
    actions += "- ";
    actions += to_string(a.action);
    actions += ": ";
    actions += a.job ? a.job->title + " at " + a.job->company : std::string("(unknown job)");
  }
  std::string queries;
  for (const auto& q : ctx.search_queries) {
    if (!queries.empty()) queries += '\n';
    queries += "- " + q;
  }
  const std::string_view none = "(none)";
  return render_template(
      kActorTemplate,
      {{"length_instruction", explicit_length_prompt ? kConciseInstruction : std::string_view{}},
       {"profile_attributes", detail::blank(ctx.profile_attributes) ? none : std::string_view(ctx.profile_attributes)},
       {"professional_content",
        detail::blank(ctx.professional_content) ? none : std::string_view(ctx.professional_content)},
       {"job_search_actions", actions.empty() ? none : std::string_view(actions)},
       {"search_queries", queries.empty() ? none : std::string_view(queries)}});
}

struct ChatMessage {
  std::string role;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

/// Splits a rendered ChatML prompt into role/content messages. Text outside
/// <|im_start|>...<|im_end|> blocks is ignored.
inline std::vector<ChatMessage> to_chat_messages(std::string_view prompt) {
  constexpr std::string_view open = "<|im_start|>";
  constexpr std::string_view close = "<|im_end|>";
  std::vector<ChatMessage> out;
  std::size_t pos = 0;
  while ((pos = prompt.find(open, pos)) != std::string_view::npos) {
    pos += open.size();
    const auto nl = prompt.find('\n', pos);
    const auto end = prompt.find(close, pos);
    if (nl == std::string_view::npos || end == std::string_view::npos || nl > end)
      throw InvalidArgument("malformed chat prompt");
    std::string content(prompt.substr(nl + 1, end - nl - 1));
    while (!content.empty() && content.back() == '\n') content.pop_back();
    out.push_back({std::string(prompt.substr(pos, nl - pos)), std::move(content)});
    pos = end + close.size();
  }
  if (out.empty()) throw InvalidArgument("prompt contains no chat messages");
  return out;
}

}  // namespace engagerl::prompts
