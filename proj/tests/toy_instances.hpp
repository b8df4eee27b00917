#pragma once

// Randomized objective instances over the toy policy, shared by the optimizer
// unit tests and the acceptance suite.

#include "engagerl/gradient.hpp"
#include "engagerl/optimizer.hpp"
#include "engagerl/policy.hpp"
#include "engagerl/random.hpp"

namespace testutil {

struct ObjectiveInstance {
  engagerl::policy::ToyPolicy current{engagerl::policy::ToyPolicyShape{}};
  engagerl::GroupBatch batch;
  engagerl::optim::OptimizerConfig cfg;
  std::size_t context = 0;
};

inline void jitter(engagerl::policy::ToyPolicy& p, engagerl::Rng& rng, double scale) {
  for (double& x : p.parameters()) x += scale * (2.0 * rng.uniform() - 1.0);
}

/// pi_old and pi_ref are random perturbations of pi_theta so that some
/// ratios leave the clip range.
inline ObjectiveInstance random_instance(engagerl::Rng& rng, engagerl::optim::NormalizationMode mode,
                                         double beta) {
  using namespace engagerl;
  policy::ToyPolicyShape shape;
  shape.vocab_size = 3 + rng.below(3);
  shape.max_length = 2 + rng.below(4);
  shape.num_contexts = 2;
  shape.per_position = rng.below(2) == 1;

  ObjectiveInstance inst;
  inst.current = policy::ToyPolicy(shape);
  jitter(inst.current, rng, 1.0);
  auto old = inst.current;
  jitter(old, rng, 0.3);
  auto ref = inst.current;
  jitter(ref, rng, 0.5);

  inst.context = rng.below(2);
  inst.cfg.normalization_mode = mode;
  inst.cfg.kl_coeff = beta;
  inst.cfg.length_norm_constant = static_cast<double>(shape.max_length);
  const std::size_t g = 2 + rng.below(4);
  inst.cfg.group_size = g;

  inst.batch.sample_id = "random";
  inst.batch.rollouts = old.sample(inst.context, 1.0, g, rng);
  for (const auto& r : inst.batch.rollouts) {
    inst.batch.rewards.push_back(rng.uniform() * 4.0 - 1.0);
    inst.batch.ref_logprobs.push_back(ref.logprob_of(inst.context, r.tokens));
  }
  inst.batch.advantages = optim::group_advantages(inst.batch.rewards, mode);
  return inst;
}

}  // namespace testutil
