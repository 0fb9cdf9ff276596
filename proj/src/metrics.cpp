#include "saelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saelab {

namespace {

// Rows scaled to unit norm; zero rows stay zero and are flagged.
Matrix unit_rows(const Matrix& A, std::vector<char>* zero = nullptr) {
  Matrix out = A;
  if (zero) zero->assign(static_cast<std::size_t>(A.rows()), 0);
  for (Index i = 0; i < A.rows(); ++i) {
    const double n = A.row(i).norm();
    if (n > 0.0)
      out.row(i) /= n;
    else if (zero)
      (*zero)[static_cast<std::size_t>(i)] = 1;
  }
  return out;
}

}  // namespace

std::vector<std::optional<double>> mcs_to_truth(const Matrix& W, const FeatureMatrix& V) {
  require_dims(W.cols() == V.d(), "mcs_to_truth: W and V disagree on d");
  std::vector<char> zero;
  const Matrix C = unit_rows(W, &zero) * unit_rows(V.rows).transpose();
  std::vector<std::optional<double>> out(static_cast<std::size_t>(W.rows()));
  for (Index m = 0; m < W.rows(); ++m)
    if (!zero[m] && V.n() > 0) out[m] = C.row(m).maxCoeff();
  return out;
}

double tau_align(const FeatureMatrix& V) {
  require(V.n() >= 2, "tau_align needs at least two features; supply a manual threshold");
  const Matrix U = unit_rows(V.rows);
  Matrix C = U * U.transpose();
  C.diagonal().setConstant(-2.0);
  const double max_cos = std::clamp(C.maxCoeff(), -1.0, 1.0);
  return std::cos(std::acos(max_cos) / 3.0);
}

double frr(const Matrix& W, const FeatureMatrix& V, double tau) {
  require(tau > 0.0 && tau <= 1.0, "frr needs tau in (0, 1]");
  require_dims(W.cols() == V.d(), "frr: W and V disagree on d");
  if (V.n() == 0) return 0.0;
  const Matrix C = (unit_rows(V.rows) * unit_rows(W).transpose()).cwiseAbs();
  Index hit = 0;
  for (Index i = 0; i < V.n(); ++i)
    if (W.rows() > 0 && C.row(i).maxCoeff() >= tau) ++hit;
  return static_cast<double>(hit) / static_cast<double>(V.n());
}

ActivationStats activation_stats(const SaeParams& params, const Activation& act, const Matrix& valset,
                                 const Objective& obj) {
  require(valset.rows() > 0, "activation_stats needs a nonempty validation set");
  const ForwardCache c = forward(params, valset, act, obj);
  const Index M = params.M();
  const auto L = static_cast<double>(valset.rows());
  ActivationStats s;
  s.max_activation = c.pre.rowwise().maxCoeff();
  s.activation_fraction = (c.pre.array() > 0.0).cast<double>().rowwise().sum() / L;
  s.z_max.resize(M);
  for (Index m = 0; m < M; ++m) {
    const double mean = c.post.row(m).mean();
    const double var = (c.post.row(m).array() - mean).square().mean();
    const double sd = std::sqrt(var);
    s.z_max(m) = sd > 0.0 ? (c.post.row(m).maxCoeff() - mean) / sd : 0.0;
  }
  s.activation_percentage = static_cast<double>((c.post.array() != 0.0).count()) / (L * static_cast<double>(M));
  return s;
}

std::vector<NeuronEval> neuron_eval(const SaeParams& params, const FeatureMatrix& V, const Activation& act,
                                    const Matrix& valset, const Objective& obj) {
  const auto mcs = mcs_to_truth(params.W, V);
  const ActivationStats s = activation_stats(params, act, valset, obj);
  std::vector<NeuronEval> out(static_cast<std::size_t>(params.M()));
  for (Index m = 0; m < params.M(); ++m)
    out[m] = {mcs[m], s.max_activation(m), s.activation_fraction(m), s.z_max(m)};
  return out;
}

std::string to_string(SubsetSelector::By by) {
  return by == SubsetSelector::By::max_activation ? "max_activation" : "z_max";
}

std::vector<Index> top_fraction(const Vector& scores, double alpha) {
  require(alpha > 0.0 && alpha <= 1.0, "top_fraction needs alpha in (0, 1]");
  const Index M = scores.size();
  require(M > 0, "top_fraction: no neurons to select from");
  const Index k = std::clamp<Index>(static_cast<Index>(std::llround(alpha * static_cast<double>(M))), 1, M);
  std::vector<Index> order(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) > scores(b); });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

ConsistencyCurve consistency_curve(const Matrix& host, const std::vector<Matrix>& others, const std::vector<double>& taus,
                                   const std::vector<Index>& subset) {
  require(!others.empty(), "consistency needs at least one other run");
  require(!subset.empty(), "consistency: empty neuron subset");
  const Matrix H = unit_rows(host);
  Matrix hs(static_cast<Index>(subset.size()), host.cols());
  for (std::size_t i = 0; i < subset.size(); ++i) {
    require(subset[i] >= 0 && subset[i] < host.rows(), "consistency: subset index out of range");
    hs.row(static_cast<Index>(i)) = H.row(subset[i]);
  }
  // worst[i] = min over runs of MCS(subset[i], run)
  Vector worst = Vector::Constant(static_cast<Index>(subset.size()), 2.0);
  for (const Matrix& other : others) {
    require_dims(other.cols() == host.cols(), "consistency: runs disagree on d");
    const Matrix C = hs * unit_rows(other).transpose();
    worst = worst.cwiseMin(C.rowwise().maxCoeff());
  }
  ConsistencyCurve curve;
  curve.taus = taus;
  curve.subset = subset;
  for (double tau : taus) {
    const auto hit = (worst.array() >= tau).count();
    curve.percentage.push_back(static_cast<double>(hit) / static_cast<double>(subset.size()));
  }
  return curve;
}

ConsistencyCurve cross_run_consistency(const SaeParams& host, const std::vector<Matrix>& others,
                                       const std::vector<double>& taus, const SubsetSelector& selector,
                                       const Matrix& valset, const Activation& act, const Objective& obj) {
  const ActivationStats s = activation_stats(host, act, valset, obj);
  const Vector& scores = selector.by == SubsetSelector::By::max_activation ? s.max_activation : s.z_max;
  ConsistencyCurve curve = consistency_curve(host.W, others, taus, top_fraction(scores, selector.alpha));
  curve.selector = selector;
  return curve;
}

}  // namespace saelab
