#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "saelab/common.hpp"

namespace saelab {

// Ground-truth monosemantic directions, one per row (n x d).
struct FeatureMatrix {
  Matrix rows;

  Index n() const { return rows.rows(); }
  Index d() const { return rows.cols(); }
};

// Nonnegative row-sparse mixing weights (N x n).
struct CoefficientMatrix {
  SparseMatrix h;
  int s = 0;  // max nonzeros per row the generator was asked for

  Index N() const { return h.rows(); }
  Index n() const { return h.cols(); }
};

enum class CoeffMode {
  uniform_with_replacement,
  uniform_without_replacement,
  imbalanced,
  perturbed_tanh,
  cooccurrence_target,
};

std::string to_string(CoeffMode mode);
CoeffMode coeff_mode_from_string(const std::string& text);

struct CoeffGenConfig {
  Index N = 0;
  Index n = 0;
  int s = 1;
  CoeffMode mode = CoeffMode::uniform_with_replacement;
  // imbalanced: fraction of rows drawn only from the high-occurrence half.
  double alpha = 0.5;
  // perturbed_tanh: magnitudes |tanh(N(mu, sigma))| on the high cut-off half.
  // A NaN mu means atanh(1/sqrt(s)), which keeps the mean magnitude near 1/sqrt(s).
  double mu = std::numeric_limits<double>::quiet_NaN();
  double sigma = 0.3;
  // cooccurrence_target: requested max co-occurrence ratio.
  double rho2_target = 0.0;
  // cooccurrence_target: fraction of shared-support rows drawn from the whole
  // feature set instead of a feature block.
  double cross_fraction = 0.0;
  // Rescale rows of H to unit l2 norm. Always applied for perturbed_tanh and
  // cooccurrence_target.
  bool normalize_rows = false;
};

struct Dataset {
  Matrix X;
  bool normalized = false;
  // Provenance, filled by the harness when the data came from generators.
  std::string provenance;
};

struct SparsityStats {
  double rho1 = 0.0;
  double rho2 = 0.0;
  std::vector<std::size_t> occurrences;
  std::vector<std::optional<double>> cutoffs;  // absent for all-zero columns
  double theta_frac = 0.0;
};

struct ConcentrationReport {
  double h_star = 0.0;             // squared-form definition
  double h_star_unsquared = 0.0;   // max{hslash^2} <= h_star variant
  double hslash_4_star = 0.0;
  double hslash_3_star = 0.0;
  double hslash_4_1 = 0.0;
  double double_sum_root = 0.0;    // smallest h satisfying the pairwise inequality alone
  double bias_used = 0.0;
  double zeta1 = 0.0;
};

struct TafBounds {
  double lo = 0.0;
  double hi = 0.0;
  bool empty() const { return lo >= hi; }
};

FeatureMatrix gen_features(Index n, Index d, std::uint64_t seed);

CoefficientMatrix gen_coefficients(const CoeffGenConfig& config, std::uint64_t seed);

Dataset assemble_dataset(const CoefficientMatrix& H, const FeatureMatrix& V, bool normalize_rows);

// Default theta_frac is 1/log2(n).
double default_theta_frac(Index n);

SparsityStats sparsity_stats(const CoefficientMatrix& H, double theta_frac);

// P(Z >= x) for standard normal Z.
double gaussian_tail(double x);

double concentration_coefficient_zeta1(Index n, double epsilon);

ConcentrationReport concentration_coefficient(const CoefficientMatrix& H, double b, double epsilon);

TafBounds feasible_taf_bounds(Index n, Index d, double h_star);

// Bias b < 0 whose Gaussian tail Phi(-b) equals the requested activation frequency.
double bias_for_tail(double p);

}  // namespace saelab
