#pragma once

#include "saelab/common.hpp"
#include "saelab/sae_model.hpp"

namespace saelab {

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

// Which parameter groups a trainer updates. b is never decayed.
struct ParamGroups {
  bool W = true;
  bool a = true;
  bool b = false;
  bool b_pre = true;
};

struct AdamWState {
  SaeGrads m;
  SaeGrads v;
  long long t = 0;
  AdamWHyper hyper;

  static AdamWState init(const SaeParams& params, const AdamWHyper& hyper);
};

// In-place AdamW step on the selected groups. Throws on non-finite gradients
// before touching any state.
void adamw_step(AdamWState& state, SaeParams& params, const SaeGrads& grads, const ParamGroups& groups);

// Single-array form; exposed for tests.
void adamw_update(Eigen::Ref<Eigen::ArrayXd> theta, Eigen::Ref<Eigen::ArrayXd> m, Eigen::Ref<Eigen::ArrayXd> v,
                  const Eigen::Ref<const Eigen::ArrayXd>& g, const AdamWHyper& hyper, long long t, bool decay);

}  // namespace saelab
