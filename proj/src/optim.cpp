#include "saelab/optim.hpp"

#include <cmath>

namespace saelab {

namespace {

Eigen::Map<Eigen::ArrayXd> flat(Matrix& x) { return {x.data(), x.size()}; }
Eigen::Map<const Eigen::ArrayXd> flat(const Matrix& x) { return {x.data(), x.size()}; }

}  // namespace

void AdamWHyper::validate() const {
  require(std::isfinite(lr) && lr > 0.0, "AdamW needs lr > 0");
  require(beta1 >= 0.0 && beta1 < 1.0, "AdamW needs 0 <= beta1 < 1");
  require(beta2 >= 0.0 && beta2 < 1.0, "AdamW needs 0 <= beta2 < 1");
  require(eps > 0.0, "AdamW needs eps > 0");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0, "AdamW needs weight_decay >= 0");
}

AdamWState AdamWState::init(const SaeParams& params, const AdamWHyper& hyper) {
  hyper.validate();
  return {SaeGrads::zeros_like(params), SaeGrads::zeros_like(params), 0, hyper};
}

void adamw_update(Eigen::Ref<Eigen::ArrayXd> theta, Eigen::Ref<Eigen::ArrayXd> m, Eigen::Ref<Eigen::ArrayXd> v,
                  const Eigen::Ref<const Eigen::ArrayXd>& g, const AdamWHyper& h, long long t, bool decay) {
  require_dims(theta.size() == g.size() && m.size() == g.size() && v.size() == g.size(),
               "adamw_update: shape mismatch");
  m = h.beta1 * m + (1.0 - h.beta1) * g;
  v = h.beta2 * v + (1.0 - h.beta2) * g.square();
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  const double wd = decay ? h.weight_decay : 0.0;
  theta -= h.lr * ((m / c1) / ((v / c2).sqrt() + h.eps) + wd * theta);
}

void adamw_step(AdamWState& s, SaeParams& p, const SaeGrads& g, const ParamGroups& groups) {
  require_dims(g.W.rows() == p.W.rows() && g.W.cols() == p.W.cols() && g.a.size() == p.a.size() &&
                   g.b.size() == p.b.size() && g.b_pre.size() == p.b_pre.size(),
               "adamw_step: gradient shapes do not match parameters");
  require_dims(s.m.W.rows() == p.W.rows() && s.m.W.cols() == p.W.cols(), "adamw_step: optimizer state shape mismatch");
  if ((groups.W && !g.W.allFinite()) || (groups.a && !g.a.allFinite()) || (groups.b && !g.b.allFinite()) ||
      (groups.b_pre && !g.b_pre.allFinite()))
    throw Error("adamw_step: non-finite gradient rejected at step " + std::to_string(s.t + 1));
  ++s.t;
  if (groups.W) adamw_update(flat(p.W), flat(s.m.W), flat(s.v.W), flat(g.W), s.hyper, s.t, true);
  if (groups.a) adamw_update(p.a.array(), s.m.a.array(), s.v.a.array(), g.a.array(), s.hyper, s.t, true);
  if (groups.b) adamw_update(p.b.array(), s.m.b.array(), s.v.b.array(), g.b.array(), s.hyper, s.t, false);
  if (groups.b_pre)
    adamw_update(p.b_pre.array(), s.m.b_pre.array(), s.v.b_pre.array(), g.b_pre.array(), s.hyper, s.t, true);
}

}  // namespace saelab
