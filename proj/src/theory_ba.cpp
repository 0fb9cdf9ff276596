#include "saelab/theory_ba.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "saelab/rng.hpp"

namespace saelab {

double TheoryConfig::resolved_eta(Index N) const {
  if (eta) return *eta;
  return std::exp(0.5 * b * b) / static_cast<double>(N) * 100.0;
}

void TheoryConfig::validate() const {
  require(b < 0.0, "theory: the fixed bias must be negative");
  require(!eta || *eta > 0.0, "theory: eta must be positive (or infinite)");
  require(T >= 1, "theory: T must be >= 1");
  require(activation.kind != Activation::Kind::jump_relu, "theory: activation must be relu or softplus");
  require(epsilon >= 0.0 && epsilon < 1.0, "theory: epsilon must lie in [0, 1)");
}

double varphi(double u, double b, const Activation& act) {
  require(act.kind != Activation::Kind::jump_relu, "varphi is defined for relu and softplus only");
  return act.value(u + b) + act.derivative(u + b) * u;
}

StepResult spherical_step(const Vector& w, const Matrix& X, double b, double eta, const Activation& act) {
  require_dims(w.size() == X.cols(), "spherical_step: w and X disagree on d");
  require(std::abs(w.norm() - 1.0) <= 1e-10, "spherical_step: w must be unit norm");
  const Vector u = X * w;
  const Vector coeff = u.unaryExpr([&](double v) { return varphi(v, b, act); });
  const Vector g = X.transpose() * coeff;
  StepResult out;
  Vector next = std::isinf(eta) ? g : Vector(w + eta * g);
  const double norm = next.norm();
  if (norm == 0.0 || !std::isfinite(norm)) {
    out.w = w;
    out.degenerate = !std::isinf(eta) || !std::isfinite(norm);
    return out;
  }
  out.w = next / norm;
  return out;
}

double InitReport::pass_fraction() const {
  if (matched.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < matched.size(); ++i) ok += cond1[i] && cond2[i];
  return static_cast<double>(ok) / static_cast<double>(matched.size());
}

InitReport check_init_conditions(const Matrix& W0, const FeatureMatrix& V, double epsilon, std::uint64_t seed) {
  const Index M = W0.rows();
  const Index n = V.n();
  require(n >= 1, "check_init_conditions: no features");
  require(M >= n, "check_init_conditions needs M >= n");
  require_dims(W0.cols() == V.d(), "check_init_conditions: W0 and V disagree on d");

  std::vector<Index> perm(static_cast<std::size_t>(M));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng = Rng::substream(seed, "theory_blocks");
  for (Index i = M - 1; i > 0; --i)
    std::swap(perm[i], perm[static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
  const Index block = M / n;

  InitReport rep;
  rep.zeta0 = (1.0 - epsilon) * std::sqrt(2.0 * std::log(static_cast<double>(M) / static_cast<double>(n)));
  rep.zeta1 = concentration_coefficient_zeta1(n, epsilon);
  for (Index i = 0; i < n; ++i) {
    rep.blocks.emplace_back(perm.begin() + i * block, perm.begin() + (i + 1) * block);
    Index best = perm[i * block];
    double best_val = V.rows.row(i).dot(W0.row(best));
    for (Index k = i * block + 1; k < (i + 1) * block; ++k) {
      const double val = V.rows.row(i).dot(W0.row(perm[k]));
      if (val > best_val) {
        best_val = val;
        best = perm[k];
      }
    }
    double cross = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j)
      if (j != i) cross = std::max(cross, V.rows.row(j).dot(W0.row(best)));
    rep.matched.push_back(best);
    rep.alignment.push_back(best_val);
    rep.cond1.push_back(best_val >= rep.zeta0);
    rep.max_cross.push_back(cross);
    rep.cond2.push_back(n == 1 || cross <= rep.zeta1);
  }
  return rep;
}

double TheoryRunReport::mean_final() const {
  if (alignment.rows() == 0) return 0.0;
  return alignment.col(alignment.cols() - 1).mean();
}

long long spherical_step_rows(Matrix& W, const Matrix& X, double b, double eta, const Activation& act) {
  require_dims(W.cols() == X.cols(), "spherical_step_rows: W and X disagree on d");
  Matrix U = X * W.transpose();  // N x rows
  U = U.unaryExpr([&](double v) { return varphi(v, b, act); });
  const Matrix G = U.transpose() * X;
  long long degenerate = 0;
  const bool direction_only = std::isinf(eta);
  for (Index m = 0; m < W.rows(); ++m) {
    Vector next = direction_only ? Vector(G.row(m).transpose()) : Vector(W.row(m).transpose() + eta * G.row(m).transpose());
    const double norm = next.norm();
    if (norm == 0.0 || !std::isfinite(norm)) {
      degenerate += !direction_only || !std::isfinite(norm);
      continue;
    }
    W.row(m) = next.transpose() / norm;
  }
  return degenerate;
}

TheoryRunReport run_modified_ba(const CoefficientMatrix& H, const FeatureMatrix& V, const TheoryConfig& cfg, Index M,
                                double success_threshold) {
  cfg.validate();
  return run_modified_ba(H, V, cfg, SaeParams::init(M, V.d(), derive_seed(cfg.seed, "theory_init")).W,
                         success_threshold);
}

TheoryRunReport run_modified_ba(const CoefficientMatrix& H, const FeatureMatrix& V, const TheoryConfig& cfg,
                                const Matrix& W0, double success_threshold) {
  cfg.validate();
  require_dims(H.n() == V.n(), "run_modified_ba: H and V disagree on n");
  require_dims(W0.cols() == V.d(), "run_modified_ba: W0 and V disagree on d");
  const Index M = W0.rows();
  Matrix X = H.h * V.rows;
  if (cfg.center_data) X.rowwise() -= X.colwise().mean();
  const Index n = V.n();

  TheoryRunReport rep;
  rep.init = check_init_conditions(W0, V, cfg.epsilon, cfg.seed);
  rep.threshold = success_threshold;
  rep.eta = cfg.resolved_eta(X.rows());
  rep.alignment.resize(n, cfg.T + 1);
  Matrix Vn = V.rows;
  for (Index i = 0; i < n; ++i) Vn.row(i) /= V.rows.row(i).norm();

  Matrix Wm(n, V.d());
  for (Index i = 0; i < n; ++i) Wm.row(i) = W0.row(rep.init.matched[i]);
  for (Index i = 0; i < n; ++i) rep.alignment(i, 0) = Vn.row(i).dot(Wm.row(i));
  for (int t = 1; t <= cfg.T; ++t) {
    rep.degenerate_steps += spherical_step_rows(Wm, X, cfg.b, rep.eta, cfg.activation);
    for (Index i = 0; i < n; ++i) rep.alignment(i, t) = Vn.row(i).dot(Wm.row(i));
  }
  for (Index i = 0; i < n; ++i) rep.success.push_back(rep.alignment(i, cfg.T) >= success_threshold);

  if (cfg.simulate_all) {
    rep.best_alignment = Vector::Constant(n, -1.0);
    const Index chunk = 256;
    for (Index start = 0; start < M; start += chunk) {
      Matrix Wc = W0.middleRows(start, std::min(chunk, M - start));
      for (int t = 1; t <= cfg.T; ++t) spherical_step_rows(Wc, X, cfg.b, rep.eta, cfg.activation);
      rep.best_alignment = rep.best_alignment.cwiseMax((Vn * Wc.transpose()).rowwise().maxCoeff());
    }
  }
  return rep;
}

}  // namespace saelab
