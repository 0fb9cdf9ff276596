#pragma once

#include <cstdint>

#include "saelab/gba_trainer.hpp"

namespace saelab {

struct BaselineConfig {
  enum class Kind { topk, l1 };
  Kind kind = Kind::topk;
  Index M = 0;
  int k = 3;
  double lambda = 0.01;
  Index batch_size = 128;
  long long steps = 1000;
  bool train_pre_bias = true;
  AdamWHyper hyper;
  Activation activation = Activation::relu();
  std::uint64_t seed = 0;
  long long log_every = 10;

  Objective objective() const;
  void validate() const;
};

TrainResult train_topk(const Dataset& dataset, const BaselineConfig& cfg, const TrainState* resume = nullptr);

TrainResult train_l1(const Dataset& dataset, const BaselineConfig& cfg, const TrainState* resume = nullptr);

}  // namespace saelab
