#include "saelab/sae_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "saelab/rng.hpp"

namespace saelab {

namespace {

void check_batch(const SaeParams& p, const Matrix& batch) {
  require_dims(p.a.size() == p.M() && p.b.size() == p.M(), "SaeParams: a and b must have length M");
  require_dims(p.b_pre.size() == p.d(), "SaeParams: b_pre must have length d");
  require_dims(batch.cols() == p.d(), "batch has " + std::to_string(batch.cols()) + " columns, model expects d = " +
                                          std::to_string(p.d()));
}

void check_objective(const SaeParams& p, const Objective& obj) {
  if (obj.kind == Objective::Kind::topk)
    require(obj.k >= 1 && obj.k <= p.M(), "topk objective needs 1 <= K <= M");
  if (obj.kind == Objective::Kind::l1) require(std::isfinite(obj.lambda) && obj.lambda >= 0.0, "l1 needs finite lambda >= 0");
}

// Indices of the k largest entries of column `col`, ties to the lower index.
void topk_mask_column(const Matrix& z, Index col, int k, std::vector<Index>& order, std::vector<char>& keep) {
  const Index M = z.rows();
  order.resize(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
    const double za = z(a, col);
    const double zb = z(b, col);
    return za > zb || (za == zb && a < b);
  });
  keep.assign(static_cast<std::size_t>(M), 0);
  for (int j = 0; j < k; ++j) keep[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = 1;
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

Activation Activation::softplus(double gamma) {
  require(gamma > 0.0 && std::isfinite(gamma), "softplus needs a finite sharpness gamma > 0");
  return {Kind::softplus, gamma};
}

double Activation::value(double u) const {
  switch (kind) {
    case Kind::relu: return u > 0.0 ? u : 0.0;
    case Kind::softplus: return std::max(u, 0.0) + std::log1p(std::exp(-gamma * std::abs(u))) / gamma;
    case Kind::jump_relu: return u >= 0.0 ? u : 0.0;
  }
  return 0.0;
}

double Activation::derivative(double u) const {
  switch (kind) {
    case Kind::relu: return u > 0.0 ? 1.0 : 0.0;
    case Kind::softplus: {
      const double t = gamma * u;
      if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
      const double e = std::exp(t);
      return e / (1.0 + e);
    }
    case Kind::jump_relu: return u >= 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

std::string to_string(const Activation& act) {
  switch (act.kind) {
    case Activation::Kind::relu: return "relu";
    case Activation::Kind::jump_relu: return "jump_relu";
    case Activation::Kind::softplus: {
      std::string g = std::to_string(act.gamma);
      g.erase(g.find_last_not_of('0') + 1);
      if (!g.empty() && g.back() == '.') g.pop_back();
      return "softplus:" + g;
    }
  }
  return "unknown";
}

Activation activation_from_string(const std::string& text) {
  if (text == "relu") return Activation::relu();
  if (text == "jump_relu") return Activation::jump_relu();
  if (text == "softplus") return Activation::softplus(20.0);
  if (text.rfind("softplus:", 0) == 0) {
    std::size_t used = 0;
    const std::string tail = text.substr(9);
    double g = 0.0;
    try {
      g = std::stod(tail, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tail.size()) throw Error("bad softplus sharpness in '" + text + "'");
    return Activation::softplus(g);
  }
  throw Error("unknown activation '" + text + "' (expected relu, jump_relu, softplus or softplus:<gamma>)");
}

Objective Objective::l1(double lambda) {
  require(std::isfinite(lambda) && lambda >= 0.0, "l1 objective needs finite lambda >= 0");
  return {Kind::l1, lambda, 0};
}

Objective Objective::topk(int k) {
  require(k >= 1, "topk objective needs K >= 1");
  return {Kind::topk, 0.0, k};
}

std::string to_string(const Objective& obj) {
  switch (obj.kind) {
    case Objective::Kind::reconstruction: return "reconstruction";
    case Objective::Kind::l1: return "l1:" + std::to_string(obj.lambda);
    case Objective::Kind::topk: return "topk:" + std::to_string(obj.k);
  }
  return "unknown";
}

SaeParams SaeParams::init(Index M, Index d, std::uint64_t seed) {
  require(M >= 1 && d >= 1, "SaeParams::init needs M >= 1 and d >= 1");
  SaeParams p;
  p.W.resize(M, d);
  for (Index m = 0; m < M; ++m) {
    Rng rng = Rng::substream(seed, "sae_init_row", static_cast<std::uint64_t>(m));
    double sq = 0.0;
    do {
      for (Index j = 0; j < d; ++j) p.W(m, j) = rng.normal();
      sq = p.W.row(m).squaredNorm();
    } while (sq == 0.0);
    p.W.row(m) /= std::sqrt(sq);
  }
  p.a = Vector::Ones(M);
  p.b = Vector::Zero(M);
  p.b_pre = Vector::Zero(d);
  return p;
}

bool SaeParams::all_finite() const {
  return W.allFinite() && a.allFinite() && b.allFinite() && b_pre.allFinite();
}

SaeGrads SaeGrads::zeros_like(const SaeParams& p) {
  return {Matrix::Zero(p.M(), p.d()), Vector::Zero(p.M()), Vector::Zero(p.M()), Vector::Zero(p.d())};
}

bool SaeGrads::all_finite() const {
  return W.allFinite() && a.allFinite() && b.allFinite() && b_pre.allFinite();
}

Matrix pre_activations(const SaeParams& params, const Matrix& batch) {
  check_batch(params, batch);
  const Matrix centered = batch.rowwise() - params.b_pre.transpose();
  Matrix y = params.W * centered.transpose();
  y.colwise() += params.b;
  return y;
}

ForwardCache forward(const SaeParams& params, const Matrix& batch, const Activation& act, const Objective& obj) {
  check_batch(params, batch);
  check_objective(params, obj);
  ForwardCache c;
  c.centered = batch.rowwise() - params.b_pre.transpose();
  const Index M = params.M();
  const Index L = batch.rows();
  if (act.kind == Activation::Kind::jump_relu) {
    Matrix u = params.W * c.centered.transpose();
    c.pre = u;
    c.pre.colwise() += params.b;
    c.post = (c.pre.array() >= 0.0).select(u, 0.0);
  } else {
    c.pre = params.W * c.centered.transpose();
    c.pre.colwise() += params.b;
    c.post.resize(M, L);
    if (act.kind == Activation::Kind::relu) {
      c.post = c.pre.cwiseMax(0.0);
    } else {
      c.post = c.pre.unaryExpr([&act](double u) { return act.value(u); });
    }
  }
  if (obj.kind == Objective::Kind::topk && obj.k < M) {
    std::vector<Index> order;
    std::vector<char> keep;
    for (Index l = 0; l < L; ++l) {
      topk_mask_column(c.post, l, obj.k, order, keep);
      for (Index m = 0; m < M; ++m)
        if (!keep[static_cast<std::size_t>(m)]) c.post(m, l) = 0.0;
    }
  }
  // recon = (diag(a) z)^T W + b_pre
  c.recon = (c.post.array().colwise() * params.a.array()).matrix().transpose() * params.W;
  c.recon.rowwise() += params.b_pre.transpose();
  return c;
}

Vector topk_select(const Vector& values, int k) {
  require(k >= 1, "topk_select needs K >= 1");
  const Index M = values.size();
  if (k >= M) return values;
  std::vector<Index> order(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
    return values(a) > values(b) || (values(a) == values(b) && a < b);
  });
  Vector out = Vector::Zero(M);
  for (int j = 0; j < k; ++j) out(order[static_cast<std::size_t>(j)]) = values(order[static_cast<std::size_t>(j)]);
  return out;
}

double loss(const SaeParams& params, const Matrix& batch, const Activation& act, const Objective& obj) {
  const ForwardCache c = forward(params, batch, act, obj);
  const double L = static_cast<double>(batch.rows());
  double value = 0.5 * (batch - c.recon).squaredNorm() / L;
  if (obj.kind == Objective::Kind::l1) {
    const Vector norms = params.W.rowwise().norm();
    value += obj.lambda * (c.post.cwiseAbs().transpose() * norms).sum() / L;
  }
  return value;
}

double loss_and_grad(const SaeParams& params, const Matrix& batch, const Activation& act, const Objective& obj,
                     SaeGrads& g, ForwardCache* cache_out) {
  ForwardCache local;
  ForwardCache& c = cache_out ? *cache_out : local;
  c = forward(params, batch, act, obj);
  const double L = static_cast<double>(batch.rows());
  const double inv_l = 1.0 / L;

  const Matrix E = c.recon - batch;  // L x d
  double value = 0.5 * E.squaredNorm() * inv_l;

  const Matrix P = params.W * E.transpose();  // M x L, P(m, l) = w_m . e_l
  g.a = (c.post.array() * P.array()).rowwise().sum().matrix() * inv_l;
  g.b_pre = E.colwise().sum().transpose() * inv_l;

  // Decoder part of dL/dW: (1/L) diag(a) Z E
  const Matrix az = c.post.array().colwise() * params.a.array();
  g.W.noalias() = az * E * inv_l;

  // dL/dz
  Matrix dz = (P.array().colwise() * params.a.array()).matrix() * inv_l;
  if (obj.kind == Objective::Kind::l1 && obj.lambda != 0.0) {
    const Vector norms = params.W.rowwise().norm();
    value += obj.lambda * (c.post.cwiseAbs().transpose() * norms).sum() * inv_l;
    dz.array() += (c.post.array().unaryExpr([](double v) { return sign(v); }).colwise() * norms.array()) *
                  (obj.lambda * inv_l);
    const Vector abs_sum = c.post.cwiseAbs().rowwise().sum();
    for (Index m = 0; m < params.M(); ++m)
      if (norms(m) > 0.0) g.W.row(m) += (obj.lambda * inv_l * abs_sum(m) / norms(m)) * params.W.row(m);
  }

  // Mask of coordinates that carry gradient back into y (or u for jump_relu).
  Matrix dy;
  const bool topk = obj.kind == Objective::Kind::topk && obj.k < params.M();
  if (act.kind == Activation::Kind::jump_relu) {
    dy = (c.pre.array() >= 0.0).select(dz, 0.0);
  } else if (act.kind == Activation::Kind::relu) {
    dy = (c.pre.array() > 0.0).select(dz, 0.0);
  } else {
    dy = dz.array() * c.pre.array().unaryExpr([&act](double u) { return act.derivative(u); });
  }
  if (topk) {
    // Selected entries are the nonzero post-activations, plus zero-valued
    // winners; recompute the selection to keep the tie rule exact.
    std::vector<Index> order;
    std::vector<char> keep;
    Matrix pre_post;
    if (act.kind == Activation::Kind::jump_relu) {
      Matrix u = c.pre;
      u.colwise() -= params.b;
      pre_post = (c.pre.array() >= 0.0).select(u, 0.0);
    } else if (act.kind == Activation::Kind::relu) {
      pre_post = c.pre.cwiseMax(0.0);
    } else {
      pre_post = c.pre.unaryExpr([&act](double u) { return act.value(u); });
    }
    for (Index l = 0; l < dy.cols(); ++l) {
      topk_mask_column(pre_post, l, obj.k, order, keep);
      for (Index m = 0; m < params.M(); ++m)
        if (!keep[static_cast<std::size_t>(m)]) dy(m, l) = 0.0;
    }
  }

  g.W.noalias() += dy * c.centered;
  const Vector dy_sum = dy.rowwise().sum();
  g.b_pre.noalias() -= params.W.transpose() * dy_sum;
  if (act.kind == Activation::Kind::jump_relu)
    g.b.setZero(params.M());
  else
    g.b = dy_sum;
  return value;
}

SaeGrads objective_grad(const SaeParams& params, const Matrix& batch, const Activation& act, const Objective& obj) {
  SaeGrads g;
  loss_and_grad(params, batch, act, obj, g);
  return g;
}

}  // namespace saelab
