#pragma once

#include <span>
#include <vector>

#include "engagerl/optimizer.hpp"
#include "engagerl/policy.hpp"

namespace engagerl {

struct ObjectiveGradient {
  optim::ObjectiveResult result;
  std::vector<double> grad;  // d objective / d theta
};

/// Evaluates the group objective with `current` as pi_theta and chains the
/// per-token derivatives through the toy policy's log-softmax. The batch's
/// rollouts carry the old-policy log-probabilities.
inline ObjectiveGradient objective_and_gradient(const policy::ToyPolicy& current, std::size_t context,
                                                const GroupBatch& batch,
                                                const optim::OptimizerConfig& cfg) {
  std::vector<std::vector<double>> new_lp;
  new_lp.reserve(batch.size());
  for (const auto& r : batch.rollouts) new_lp.push_back(current.logprob_of(context, r.tokens));
  ObjectiveGradient out{optim::group_objective(batch, new_lp, cfg),
                        std::vector<double>(current.parameter_count(), 0.0)};
  for (std::size_t i = 0; i < batch.size(); ++i)
    current.accumulate_logprob_grad(context, batch.rollouts[i].tokens, out.result.token_grads[i], out.grad);
  return out;
}

/// Convenience for finite-difference checks: the scalar objective only.
inline double objective_value(const policy::ToyPolicy& current, std::size_t context,
                              const GroupBatch& batch, const optim::OptimizerConfig& cfg) {
  std::vector<std::vector<double>> new_lp;
  for (const auto& r : batch.rollouts) new_lp.push_back(current.logprob_of(context, r.tokens));
  return optim::group_objective(batch, new_lp, cfg).objective;
}

}  // namespace engagerl
