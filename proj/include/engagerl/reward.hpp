#pragma once

// Reward signals for synopsis rollouts: pointwise string and log-probability
// rewards, the entropy-weighted listwise NDCG reward, the quadratic length
// penalty, the multi-paragraph format penalty, and their composition.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "engagerl/domain.hpp"
#include "engagerl/errors.hpp"

namespace engagerl::reward {

struct ClipInterval {
  double low = -4.0;
  double high = 6.0;

  ClipInterval() = default;
  ClipInterval(double lo, double hi) : low(lo), high(hi) {
    if (!(lo < hi)) throw InvalidArgument("clip interval requires low < high");
  }
};

struct RelevanceGains {
  double apply = 5.0;
  double view = 1.0;
  double skip = 0.0;

  RelevanceGains() = default;
  RelevanceGains(double a, double v, double s) : apply(a), view(v), skip(s) {
    if (!(a > v && v > s && s >= 0.0))
      throw InvalidArgument("gains must satisfy apply > view > skip >= 0");
  }

  double operator()(ActionLabel l) const {
    switch (l) {
      case ActionLabel::apply: return apply;
      case ActionLabel::view: return view;
      case ActionLabel::skip: return skip;
    }
    return skip;
  }
};

/// A scalar reward plus whatever diagnostics were raised computing it.
struct Scored {
  double value = 0.0;
  RewardFlags flags;
};

inline constexpr std::size_t kDefaultLengthBudget = 150;
inline constexpr double kDefaultLambda = 1e-5;

// ---------------------------------------------------------------------------
// Pointwise

/// Maps a reward-model answer to 1 (yes) / 0 (no). Case-insensitive; leading
/// and trailing whitespace and punctuation are ignored. Anything else is
/// unparseable.
inline std::optional<int> parse_yes_no(std::string_view word) {
  auto is_junk = [](unsigned char c) { return std::isspace(c) || std::ispunct(c); };
  std::size_t b = 0, e = word.size();
  while (b < e && is_junk(static_cast<unsigned char>(word[b]))) ++b;
  while (e > b && is_junk(static_cast<unsigned char>(word[e - 1]))) --e;
  std::string w;
  w.reserve(e - b);
  for (std::size_t i = b; i < e; ++i)
    w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(word[i]))));
  if (w == "yes") return 1;
  if (w == "no") return 0;
  return std::nullopt;
}

inline Scored pointwise_string_reward(std::string_view predicted_word, int label) {
  const auto y = parse_yes_no(predicted_word);
  if (!y) return {0.0, {RewardFlag::parse_failure}};
  return {*y == label ? 1.0 : 0.0, {}};
}

/// Unclipped margin (2y-1)(log p(yes) - log p(no)). May be +-inf or NaN.
inline double logprob_margin(double logp_yes, double logp_no, int label) {
  const double sign = label == 1 ? 1.0 : -1.0;
  return sign * (logp_yes - logp_no);
}

/// Log-probability margin reward, clipped. A missing answer token is passed
/// as -inf; one missing side saturates to a clip bound, both missing (or any
/// undefined margin) yields a neutral 0 flagged logprob_missing_both.
inline Scored pointwise_logprob_reward(double logp_yes, double logp_no, int label,
                                       const ClipInterval& clip = {}) {
  const bool yes_missing = std::isinf(logp_yes) && logp_yes < 0;
  const bool no_missing = std::isinf(logp_no) && logp_no < 0;
  if (yes_missing && no_missing) return {0.0, {RewardFlag::logprob_missing_both}};
  const double raw = logprob_margin(logp_yes, logp_no, label);
  if (std::isnan(raw)) return {0.0, {RewardFlag::logprob_missing_both}};
  if (raw < clip.low) return {clip.low, {RewardFlag::clipped}};
  if (raw > clip.high) return {clip.high, {RewardFlag::clipped}};
  return {raw, {}};
}

// ---------------------------------------------------------------------------
// Listwise

/// Shannon entropy (nats) of the label distribution over {apply, view, skip}.
inline double label_entropy(std::span<const ActionLabel> labels) {
  if (labels.empty()) throw InvalidArgument("empty label list");
  std::array<std::size_t, 3> counts{};
  for (auto l : labels) ++counts[action_index(l)];
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double f = static_cast<double>(c) / n;
    h -= f * std::log(f);
  }
  return h;
}

inline void check_permutation(std::span<const std::size_t> order, std::size_t n) {
  if (order.size() != n) throw InvalidArgument("invalid ranking");
  std::vector<bool> seen(n, false);
  for (auto i : order) {
    if (i >= n || seen[i]) throw InvalidArgument("invalid ranking");
    seen[i] = true;
  }
}

/// NDCG with linear gains and log2(rank + 1) discounts.
inline double ndcg(std::span<const std::size_t> predicted_order,
                   std::span<const ActionLabel> labels, const RelevanceGains& gains = {}) {
  const std::size_t n = labels.size();
  check_permutation(predicted_order, n);

  std::vector<double> ideal;
  ideal.reserve(n);
  for (auto l : labels) ideal.push_back(gains(l));
  std::sort(ideal.begin(), ideal.end(), std::greater<>());

  double dcg = 0.0, idcg = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double discount = 1.0 / std::log2(static_cast<double>(k) + 2.0);
    dcg += gains(labels[predicted_order[k]]) * discount;
    idcg += ideal[k] * discount;
  }
  if (idcg <= 0.0) throw InvalidArgument("undefined ideal");
  // Ideal orderings accumulate the same terms in the same order, so they hit
  // exactly 1; the clamp only guards rounding on near-ideal tie patterns.
  return std::clamp(dcg / idcg, 0.0, 1.0);
}

/// Entropy-weighted NDCG. Exactly zero when all labels agree, independent of
/// the ranking.
inline double listwise_reward(std::span<const std::size_t> predicted_order,
                              std::span<const ActionLabel> labels,
                              const RelevanceGains& gains = {}) {
  const double h = label_entropy(labels);
  check_permutation(predicted_order, labels.size());
  if (h == 0.0) return 0.0;
  return h * ndcg(predicted_order, labels, gains);
}

// ---------------------------------------------------------------------------
// Length and format

inline double length_penalty(std::size_t token_count,
                             std::size_t budget = kDefaultLengthBudget) {
  if (budget == 0) throw InvalidArgument("length budget must be positive");
  if (token_count <= budget) return 0.0;
  const double over = static_cast<double>(token_count - budget);
  return -(over * over);
}

/// Number of paragraphs: non-blank segments separated by runs of two or more
/// newlines. "\r\n" counts as a single newline.
inline std::size_t paragraph_count(std::string_view text) {
  std::string norm;
  norm.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\r' && i + 1 < text.size() && text[i + 1] == '\n') continue;
    norm.push_back(text[i]);
  }
  std::size_t count = 0;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    if (!detail::blank(std::string_view(norm).substr(start, end - start))) ++count;
  };
  std::size_t i = 0;
  while (i < norm.size()) {
    if (norm[i] == '\n') {
      std::size_t j = i;
      while (j < norm.size() && norm[j] == '\n') ++j;
      if (j - i >= 2) {
        flush(i);
        start = j;
      }
      i = j;
    } else {
      ++i;
    }
  }
  flush(norm.size());
  return count;
}

inline double format_penalty(std::string_view text) {
  return paragraph_count(text) >= 2 ? -1.0 : 0.0;
}

struct ComposeOptions {
  double lambda = kDefaultLambda;
  std::size_t budget = kDefaultLengthBudget;
  bool apply_format = true;
};

/// R_total = base + lambda * f_length(|o|) + format term. The breakdown's
/// total is recomputed by `recompute_total` bit-for-bit.
inline double recompute_total(const RewardBreakdown& b) {
  return b.base + b.lambda * b.length_penalty + b.format_penalty;
}

inline RewardBreakdown compose_total(double base, std::size_t token_count, std::string_view text,
                                     const ComposeOptions& opts = {}, RewardFlags flags = {}) {
  RewardBreakdown b;
  b.base = base;
  b.length_penalty = length_penalty(token_count, opts.budget);
  b.format_penalty = opts.apply_format ? format_penalty(text) : 0.0;
  b.lambda = opts.lambda;
  b.flags = flags;
  b.total = recompute_total(b);
  return b;
}

}  // namespace engagerl::reward
