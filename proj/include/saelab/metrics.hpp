#pragma once

#include <optional>
#include <string>
#include <vector>

#include "saelab/common.hpp"
#include "saelab/sae_model.hpp"
#include "saelab/synthdata.hpp"

namespace saelab {

// Signed max cosine of each neuron against the feature rows; absent for zero rows.
std::vector<std::optional<double>> mcs_to_truth(const Matrix& W, const FeatureMatrix& V);

double tau_align(const FeatureMatrix& V);

// Fraction of features matched by some neuron with |cos| >= tau.
double frr(const Matrix& W, const FeatureMatrix& V, double tau);

struct ActivationStats {
  Vector max_activation;       // max pre-activation
  Vector activation_fraction;  // mean 1(y > 0)
  Vector z_max;                // (max z - mean z) / std z, 0 when std = 0
  double activation_percentage = 0.0;  // mean over samples of #{z != 0} / M
};

ActivationStats activation_stats(const SaeParams& params, const Activation& act, const Matrix& valset,
                                 const Objective& obj = Objective::reconstruction());

struct NeuronEval {
  std::optional<double> mcs;
  double max_activation = 0.0;
  double activation_fraction = 0.0;
  double z_max = 0.0;
};

std::vector<NeuronEval> neuron_eval(const SaeParams& params, const FeatureMatrix& V, const Activation& act,
                                    const Matrix& valset, const Objective& obj = Objective::reconstruction());

struct SubsetSelector {
  enum class By { max_activation, z_max };
  By by = By::max_activation;
  double alpha = 0.01;  // top fraction of neurons, at least one
};

std::string to_string(SubsetSelector::By by);

struct ConsistencyCurve {
  std::vector<double> taus;
  std::vector<double> percentage;
  std::vector<Index> subset;
  SubsetSelector selector;
};

// Top-alpha neurons by score, ties to the lower index.
std::vector<Index> top_fraction(const Vector& scores, double alpha);

ConsistencyCurve consistency_curve(const Matrix& host, const std::vector<Matrix>& others, const std::vector<double>& taus,
                                   const std::vector<Index>& subset);

ConsistencyCurve cross_run_consistency(const SaeParams& host, const std::vector<Matrix>& others,
                                       const std::vector<double>& taus, const SubsetSelector& selector,
                                       const Matrix& valset, const Activation& act,
                                       const Objective& obj = Objective::reconstruction());

}  // namespace saelab
