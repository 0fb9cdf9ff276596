#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saelab/common.hpp"
#include "saelab/optim.hpp"
#include "saelab/sae_model.hpp"
#include "saelab/synthdata.hpp"

namespace saelab {

struct NeuronGroups {
  std::vector<int> assignments;  // neuron -> group (0-based)
  std::vector<double> tafs;      // p_1 > ... > p_K

  int K() const { return static_cast<int>(tafs.size()); }
  Index M() const { return static_cast<Index>(assignments.size()); }
};

// Geometric TAFs from htf down to ltf over K contiguous, near-equal blocks.
NeuronGroups make_groups(Index M, int K, double htf, double ltf);

struct BufferStats {
  Vector p_hat;
  Vector r;
  long long count = 0;

  static BufferStats empty(Index M);
};

// Streams one M x L block of pre-activations into the statistics.
void buffer_update(BufferStats& stats, const Matrix& preacts);

struct GbaConfig {
  Index M = 0;
  double htf = 0.1;
  double ltf = 0.001;
  double gamma_plus = 0.01;
  double gamma_minus = 0.01;
  double epsilon = 1e-6;
  long long buffer_size = 0;  // 0 means 50 * batch_size
  Index batch_size = 128;
  long long steps = 1000;
  double clamp_lo = -1.0;
  double clamp_hi = 0.0;
  // false keeps b_pre at its initial value; a trained b_pre can drift far from
  // the data mean and push every neuron into its linear region.
  bool train_pre_bias = true;
  AdamWHyper hyper;
  Activation activation = Activation::relu();
  std::uint64_t seed = 0;
  long long log_every = 10;

  long long resolved_buffer_size() const { return buffer_size > 0 ? buffer_size : 50 * batch_size; }
  void validate(int groups) const;
};

// Returns the adapted biases; b itself is not modified.
Vector adapt_bias(const Vector& b, const BufferStats& stats, const NeuronGroups& groups, const GbaConfig& cfg);

struct HistoryRow {
  long long step = 0;
  double loss = 0.0;
  double act_fraction = 0.0;      // post-activations != 0
  double pre_act_fraction = 0.0;  // pre-activations > 0
  double bias_min = 0.0;
  double bias_mean = 0.0;
  double bias_max = 0.0;
  bool adapted = false;
};

struct TrainHistory {
  std::vector<HistoryRow> rows;
};

struct TrainState {
  SaeParams params;
  AdamWState opt;
  BufferStats stats;
  long long step = 0;
};

struct TrainResult {
  TrainState state;
  TrainHistory history;
};

class TrainingFailure : public Error {
 public:
  TrainingFailure(const std::string& what, long long step) : Error(what), step_(step) {}
  long long step() const { return step_; }

 private:
  long long step_;
};

// L rows drawn with replacement from the substream (seed, "minibatch", step),
// each scaled to unit norm (zero rows stay zero).
Matrix sample_minibatch(const Matrix& X, Index L, std::uint64_t seed, long long step);

// Runs cfg.steps steps, or continues from `resume` up to cfg.steps.
TrainResult train_gba(const Dataset& dataset, const NeuronGroups& groups, const GbaConfig& cfg,
                      const TrainState* resume = nullptr);

}  // namespace saelab
