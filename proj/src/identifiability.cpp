#include "saelab/identifiability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "saelab/rng.hpp"

namespace saelab {

Matrix RowAverager::times(const SparseMatrix& H) const {
  require_dims(A.cols() == H.rows(), "RowAverager: A and H disagree on N");
  return Matrix(A * H);
}

RowAverager build_row_averager(const CoefficientMatrix& H) {
  const Index n = H.n();
  std::vector<Index> count(static_cast<std::size_t>(n), 0);
  for (Index r = 0; r < H.h.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(H.h, r); it; ++it)
      if (it.value() != 0.0) ++count[it.col()];
  for (Index i = 0; i < n; ++i)
    require(count[i] > 0, "build_row_averager: column " + std::to_string(i) + " of H is zero");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(H.h.nonZeros()));
  for (Index r = 0; r < H.h.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(H.h, r); it; ++it)
      if (it.value() != 0.0) trip.emplace_back(it.col(), r, 1.0 / static_cast<double>(count[it.col()]));
  RowAverager out;
  out.A.resize(n, H.N());
  out.A.setFromTriplets(trip.begin(), trip.end());
  out.A.makeCompressed();
  return out;
}

Matrix recover_directions(const RowAverager& A, const Matrix& X) {
  require_dims(A.A.cols() == X.rows(), "recover_directions: A has " + std::to_string(A.A.cols()) +
                                           " columns but X has " + std::to_string(X.rows()) + " rows");
  return Matrix(A.A * X);
}

double max_cross_inner(const Matrix& Omega) {
  if (Omega.rows() < 2) return 0.0;
  Matrix G = Omega * Omega.transpose();
  G.diagonal().setConstant(-std::numeric_limits<double>::infinity());
  return G.maxCoeff();
}

SupportSplit support_split(const Matrix& Omega_prime, double crossmax) {
  require(crossmax >= 0.0, "support_split: negative crossmax (nonnegativity violated upstream)");
  SupportSplit out;
  out.crossmax = crossmax;
  out.threshold = crossmax > 0.0 ? std::sqrt(2.0 * crossmax) : 1e-8;
  out.K.resize(static_cast<std::size_t>(Omega_prime.rows()));
  std::vector<Index> owner(static_cast<std::size_t>(Omega_prime.cols()), -1);
  for (Index i = 0; i < Omega_prime.rows(); ++i) {
    for (Index k = 0; k < Omega_prime.cols(); ++k) {
      if (Omega_prime(i, k) < out.threshold) continue;
      out.K[i].push_back(k);
      if (owner[k] >= 0) out.disjoint = false;
      owner[k] = i;
    }
  }
  return out;
}

SupportSplit support_split(const Matrix& Omega_prime) {
  return support_split(Omega_prime, std::max(0.0, max_cross_inner(Omega_prime)));
}

IdentReport ident_report(const CoefficientMatrix& H, const FeatureMatrix& V, const CoefficientMatrix& H_alt,
                         const FeatureMatrix& V_alt, double factorization_tol) {
  require_dims(H.n() == V.n() && H_alt.n() == V_alt.n(), "ident_report: H/V inner dimensions disagree");
  require_dims(H.N() == H_alt.N() && V.d() == V_alt.d(), "ident_report: the two factorizations have different shapes");

  IdentReport rep;
  const Matrix X = H.h * V.rows;
  const Matrix X_alt = H_alt.h * V_alt.rows;
  const double scale = X.norm();
  rep.factorization_rel_err = scale > 0.0 ? (X - X_alt).norm() / scale : (X - X_alt).norm();
  if (!(rep.factorization_rel_err <= factorization_tol))
    throw Error("ident_report: factorizations disagree (relative error " + std::to_string(rep.factorization_rel_err) +
                ")");

  rep.row_scale_ratio.resize(H.N());
  for (Index l = 0; l < H.N(); ++l) {
    const double a = H.h.row(l).norm();
    const double b = H_alt.h.row(l).norm();
    rep.row_scale_ratio(l) = b > 0.0 ? a / b : (a > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
  }

  const RowAverager A = build_row_averager(H);
  const Matrix AH = A.times(H.h);
  rep.diag = AH.diagonal();
  Matrix off = AH;
  off.diagonal().setConstant(-std::numeric_limits<double>::infinity());
  rep.max_offdiag = H.n() > 1 ? off.maxCoeff() : 0.0;
  const double diag_mean = rep.diag.mean();
  rep.diag_pass = (rep.diag.array() >= 0.5 * diag_mean).all();

  const Matrix Omega = A.times(H_alt.h);
  const SupportSplit split = support_split(Omega);
  rep.K = split.K;
  rep.disjoint = split.disjoint;
  rep.crossmax = split.crossmax;
  rep.certified = split.disjoint;

  rep.recovered = Matrix::Zero(H.n(), V.d());
  rep.cosines.assign(static_cast<std::size_t>(H.n()), 0.0);
  double eps = 0.0;
  for (Index i = 0; i < H.n(); ++i) {
    if (split.K[i].empty()) {
      rep.certified = false;
      eps = std::max(eps, 1.0);
      continue;
    }
    for (Index k : split.K[i]) rep.recovered.row(i) += Omega(i, k) * V_alt.rows.row(k);
    const double denom = V.rows.row(i).norm() * rep.recovered.row(i).norm();
    const double c = denom > 0.0 ? V.rows.row(i).dot(rep.recovered.row(i)) / denom : 0.0;
    rep.cosines[i] = c;
    eps = std::max(eps, 1.0 - c);
  }
  rep.epsilon = std::clamp(eps, 0.0, 2.0);
  return rep;
}

SplitInstance feature_split_instance(const CoefficientMatrix& H, const FeatureMatrix& V, double noise,
                                     std::uint64_t seed) {
  require(noise >= 0.0, "feature_split_instance: noise must be >= 0");
  const Index n = V.n();
  const Index d = V.d();
  SplitInstance out;
  out.V_alt.rows.resize(2 * n, d);
  for (Index i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, "feature_split", static_cast<std::uint64_t>(i));
    const double t = 0.25 + 0.5 * rng.uniform();
    Vector r(d);
    for (Index j = 0; j < d; ++j) r(j) = rng.normal();
    r *= noise * V.rows.row(i).norm() / std::sqrt(static_cast<double>(d));
    out.V_alt.rows.row(2 * i) = t * V.rows.row(i) + r.transpose();
    out.V_alt.rows.row(2 * i + 1) = (1.0 - t) * V.rows.row(i) - r.transpose();
  }
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(2 * H.h.nonZeros()));
  for (Index r = 0; r < H.h.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(H.h, r); it; ++it) {
      trip.emplace_back(r, 2 * it.col(), it.value());
      trip.emplace_back(r, 2 * it.col() + 1, it.value());
    }
  out.H_alt.h.resize(H.N(), 2 * n);
  out.H_alt.h.setFromTriplets(trip.begin(), trip.end());
  out.H_alt.h.makeCompressed();
  out.H_alt.s = 2 * H.s;
  return out;
}

}  // namespace saelab
