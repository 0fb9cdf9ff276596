#pragma once

#include <vector>

#include "saelab/common.hpp"
#include "saelab/synthdata.hpp"

namespace saelab {

// A(i, l) = 1{H(l, i) != 0} / |supp H(:, i)|, stored n x N.
struct RowAverager {
  SparseMatrix A;

  Matrix times(const SparseMatrix& H) const;  // A H
};

RowAverager build_row_averager(const CoefficientMatrix& H);

// Row i is the averaged data over the support of feature i.
Matrix recover_directions(const RowAverager& A, const Matrix& X);

struct SupportSplit {
  std::vector<std::vector<Index>> K;
  bool disjoint = true;
  double crossmax = 0.0;
  double threshold = 0.0;
};

// Largest pairwise inner product of distinct rows.
double max_cross_inner(const Matrix& Omega);

// Thresholds each row at sqrt(2 crossmax), floored at 1e-8 when crossmax is 0.
SupportSplit support_split(const Matrix& Omega_prime, double crossmax);
SupportSplit support_split(const Matrix& Omega_prime);

struct IdentReport {
  Vector diag;             // diag(A H)
  double max_offdiag = 0.0;
  bool diag_pass = true;   // every diag >= 0.5 * mean diag
  Matrix recovered;        // n x d, row i = u'_i
  std::vector<std::vector<Index>> K;
  bool disjoint = true;
  double crossmax = 0.0;
  std::vector<double> cosines;  // cos(v_i, u'_i); 0 when K_i is empty
  double epsilon = 0.0;
  bool certified = true;        // disjoint and every K_i nonempty
  double factorization_rel_err = 0.0;
  Vector row_scale_ratio;       // ||H_l|| / ||H_alt_l||
};

IdentReport ident_report(const CoefficientMatrix& H, const FeatureMatrix& V, const CoefficientMatrix& H_alt,
                         const FeatureMatrix& V_alt, double factorization_tol = 1e-8);

struct SplitInstance {
  CoefficientMatrix H_alt;
  FeatureMatrix V_alt;
};

// Splits every v_i into t v_i + r and (1 - t) v_i - r with t ~ U(0.25, 0.75)
// and a Gaussian r of relative size `noise`; H_alt repeats each column twice.
SplitInstance feature_split_instance(const CoefficientMatrix& H, const FeatureMatrix& V, double noise,
                                     std::uint64_t seed);

}  // namespace saelab
