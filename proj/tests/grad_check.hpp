#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "saelab/rng.hpp"
#include "saelab/sae_model.hpp"

namespace saelab::test {

struct GradInstance {
  SaeParams params;
  Matrix batch;
};

// Reference forward pass written with plain loops.
inline double naive_loss(const SaeParams& p, const Matrix& X, const Activation& act, const Objective& obj) {
  const Index M = p.W.rows();
  const Index d = p.W.cols();
  const Index L = X.rows();
  double total = 0.0;
  for (Index l = 0; l < L; ++l) {
    std::vector<double> proj(static_cast<std::size_t>(M)), z(static_cast<std::size_t>(M));
    for (Index m = 0; m < M; ++m) {
      double acc = 0.0;
      for (Index j = 0; j < d; ++j) acc += p.W(m, j) * (X(l, j) - p.b_pre[j]);
      proj[m] = acc;
      const double y = acc + p.b[m];
      switch (act.kind) {
        case Activation::Kind::relu: z[m] = y > 0 ? y : 0.0; break;
        case Activation::Kind::softplus: z[m] = std::log1p(std::exp(act.gamma * y)) / act.gamma; break;
        case Activation::Kind::jump_relu: z[m] = y >= 0 ? acc : 0.0; break;
      }
    }
    if (obj.kind == Objective::Kind::topk) {
      std::vector<Index> order(static_cast<std::size_t>(M));
      for (Index m = 0; m < M; ++m) order[m] = m;
      std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return z[i] > z[j]; });
      for (Index r = obj.k; r < M; ++r) z[order[r]] = 0.0;
    }
    for (Index j = 0; j < d; ++j) {
      double recon = p.b_pre[j];
      for (Index m = 0; m < M; ++m) recon += p.a[m] * z[m] * p.W(m, j);
      total += 0.5 * (X(l, j) - recon) * (X(l, j) - recon);
    }
    if (obj.kind == Objective::Kind::l1) {
      for (Index m = 0; m < M; ++m) total += obj.lambda * std::abs(z[m]) * p.W.row(m).norm();
    }
  }
  return total / static_cast<double>(L);
}

// True when every nondifferentiable point is at least `margin` away: relu and
// jump_relu gates, |z| in the L1 term, and the top-k boundary.
inline bool kink_free(const SaeParams& p, const Matrix& X, const Activation& act, const Objective& obj, double margin) {
  const Matrix y = pre_activations(p, X);
  const Matrix proj = y.colwise() - p.b;
  if (act.kind != Activation::Kind::softplus && (y.array().abs() < margin).any()) return false;
  if (act.kind == Activation::Kind::jump_relu && obj.kind == Objective::Kind::l1 && (proj.array().abs() < margin).any())
    return false;
  if (obj.kind == Objective::Kind::topk) {
    const ForwardCache raw = forward(p, X, act, Objective::reconstruction());
    for (Index l = 0; l < X.rows(); ++l) {
      std::vector<double> col(raw.post.col(l).data(), raw.post.col(l).data() + raw.post.rows());
      std::sort(col.begin(), col.end(), std::greater<>());
      if (obj.k < static_cast<int>(col.size()) && col[obj.k - 1] - col[obj.k] < margin && col[obj.k - 1] > 0.0)
        return false;
    }
  }
  return true;
}

inline GradInstance random_instance(Rng& rng, Index M, Index d, Index L) {
  GradInstance g;
  g.params.W = Matrix(M, d);
  for (Index i = 0; i < g.params.W.size(); ++i) g.params.W.data()[i] = rng.normal() / std::sqrt(static_cast<double>(d));
  g.params.a = Vector(M);
  g.params.b = Vector(M);
  for (Index m = 0; m < M; ++m) {
    g.params.a[m] = 0.5 + rng.uniform();
    g.params.b[m] = -0.4 + 0.6 * rng.uniform();
  }
  g.params.b_pre = Vector(d);
  for (Index j = 0; j < d; ++j) g.params.b_pre[j] = 0.1 * rng.normal();
  g.batch = Matrix(L, d);
  for (Index i = 0; i < g.batch.size(); ++i) g.batch.data()[i] = rng.normal();
  return g;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
  int resamples = 0;
};

// Compares every analytic gradient coordinate with a central difference of
// step h; the relative error uses max(|analytic|, |numeric|, 1e-6) as scale.
inline GradCheckResult check_gradients(const GradInstance& inst, const Activation& act, const Objective& obj,
                                       double h = 1e-5) {
  GradCheckResult res;
  SaeGrads g = SaeGrads::zeros_like(inst.params);
  loss_and_grad(inst.params, inst.batch, act, obj, g);
  SaeParams p = inst.params;
  auto probe = [&](double& slot, double analytic, const std::string& name) {
    const double keep = slot;
    slot = keep + h;
    const double up = loss(p, inst.batch, act, obj);
    slot = keep - h;
    const double down = loss(p, inst.batch, act, obj);
    slot = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    if (err > res.max_rel_err) {
      res.max_rel_err = err;
      res.worst = name;
    }
  };
  for (Index i = 0; i < p.W.size(); ++i) probe(p.W.data()[i], g.W.data()[i], "W");
  for (Index i = 0; i < p.a.size(); ++i) probe(p.a[i], g.a[i], "a");
  for (Index i = 0; i < p.b.size(); ++i) probe(p.b[i], g.b[i], "b");
  for (Index i = 0; i < p.b_pre.size(); ++i) probe(p.b_pre[i], g.b_pre[i], "b_pre");
  return res;
}

// Draws instances until one is kink free.
inline GradInstance kink_free_instance(Rng& rng, Index M, Index d, Index L, const Activation& act,
                                       const Objective& obj, int* resamples = nullptr) {
  for (;;) {
    GradInstance inst = random_instance(rng, M, d, L);
    if (kink_free(inst.params, inst.batch, act, obj, 1e-3)) return inst;
    if (resamples) ++*resamples;
  }
}

}  // namespace saelab::test
