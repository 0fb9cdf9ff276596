#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "saelab/common.hpp"
#include "saelab/sae_model.hpp"
#include "saelab/synthdata.hpp"

namespace saelab {

struct TheoryConfig {
  double b = -1.0;
  // Learning rate; std::nullopt means exp(b^2/2) / N * 100, infinity means
  // the pure gradient-direction update.
  std::optional<double> eta;
  int T = 10;
  Activation activation = Activation::softplus(20.0);
  double epsilon = 0.1;
  std::uint64_t seed = 0;
  // Subtract the column mean of X before training (the simplified model
  // assumes centered data and a zero pre-bias).
  bool center_data = true;
  // Also run every one of the M neurons and report, per feature, the best
  // final alignment over all of them.
  bool simulate_all = false;

  double resolved_eta(Index N) const;
  void validate() const;
};

// phi(u + b) + phi'(u + b) * u
double varphi(double u, double b, const Activation& act);

struct StepResult {
  Vector w;
  bool degenerate = false;  // w + eta g vanished; w returned unchanged
};

StepResult spherical_step(const Vector& w, const Matrix& X, double b, double eta, const Activation& act);

// The same update applied to every row of W at once; returns the number of
// rows whose step degenerated (those rows are left unchanged).
long long spherical_step_rows(Matrix& W, const Matrix& X, double b, double eta, const Activation& act);

struct InitReport {
  std::vector<std::vector<Index>> blocks;  // neurons of block i
  std::vector<Index> matched;      // m_i
  std::vector<double> alignment;   // <v_i, w_{m_i}>
  std::vector<bool> cond1;
  std::vector<double> max_cross;   // max_{j != i} <v_j, w_{m_i}>
  std::vector<bool> cond2;
  double zeta0 = 0.0;
  double zeta1 = 0.0;

  double pass_fraction() const;  // features passing both conditions
};

// Neurons are split into n equal blocks after a permutation drawn from
// (seed, "theory_blocks"); m_i maximises <v_i, w> inside block i.
InitReport check_init_conditions(const Matrix& W0, const FeatureMatrix& V, double epsilon, std::uint64_t seed);

struct TheoryRunReport {
  InitReport init;
  Matrix alignment;  // n x (T + 1): cosine of the matched neuron with v_i after step t
  std::vector<bool> success;
  double threshold = 0.9;
  double eta = 0.0;
  long long degenerate_steps = 0;
  Vector best_alignment;  // filled when simulate_all is set

  double mean_final() const;
  double mean_best() const { return best_alignment.size() ? best_alignment.mean() : 0.0; }
};

// Initialises M unit-sphere neurons from (seed, "theory_init") and runs T
// spherical steps on X = H V. The dynamics of different neurons do not
// interact, so unless simulate_all is set only the n block-matched neurons are
// simulated.
TheoryRunReport run_modified_ba(const CoefficientMatrix& H, const FeatureMatrix& V, const TheoryConfig& config, Index M,
                                double success_threshold = 0.9);

// Same, starting from the given unit-norm rows instead of a seeded draw.
TheoryRunReport run_modified_ba(const CoefficientMatrix& H, const FeatureMatrix& V, const TheoryConfig& config,
                                const Matrix& W0, double success_threshold = 0.9);

}  // namespace saelab
