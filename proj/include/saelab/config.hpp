#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "saelab/baseline_trainers.hpp"
#include "saelab/gba_trainer.hpp"
#include "saelab/metrics.hpp"
#include "saelab/synthdata.hpp"
#include "saelab/theory_ba.hpp"

namespace saelab {

class ConfigError : public Error {
 public:
  ConfigError(int line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct ExperimentConfig {
  // [data]
  Index n = 0;
  Index d = 0;
  Index N = 0;
  int s = 1;
  CoeffMode mode = CoeffMode::uniform_without_replacement;
  double alpha = 0.5;
  double mu = std::numeric_limits<double>::quiet_NaN();
  double sigma = 0.3;
  double rho2_target = 0.0;
  double cross_fraction = 0.0;
  bool normalize_rows = false;
  bool save_X = false;

  // [model]
  Index M = 0;  // 0 means 4 n
  Activation activation = Activation::relu();

  // [train]
  std::string method = "gba";  // gba, ba, topk, l1, theory
  int K_groups = 1;
  double htf = 0.1;
  double ltf = 0.001;
  double gamma_plus = 0.01;
  double gamma_minus = 0.01;
  double epsilon = 1e-6;
  bool train_pre_bias = true;
  long long buffer_size = 0;
  Index batch_size = 128;
  long long steps = 1000;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int topk_K = 3;
  double l1_lambda = 0.01;
  double theory_b = -1.5;
  std::optional<double> theory_eta;  // unset: default rule
  int theory_T = 10;
  double theory_epsilon = 0.1;
  bool theory_center = true;
  bool theory_all_neurons = false;
  long long log_every = 10;
  long long checkpoint_every = 0;  // 0 disables intermediate checkpoints

  // [eval]
  double theta_frac = 0.0;  // 0 means 1/log2(n)
  std::string tau_mode = "auto";
  double tau = 0.0;
  Index valset_size = 2000;
  int consistency_runs = 1;  // > 1 trains that many seeds and compares them
  SubsetSelector subset;
  std::vector<double> consistency_taus = {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99};

  // [sweep]
  std::string sweep_key;
  std::vector<std::string> sweep_values;

  // [global]
  std::uint64_t seed = 0;

  Index resolved_M() const { return M > 0 ? M : 4 * n; }
  CoeffGenConfig coeff_config() const;
  GbaConfig gba_config() const;
  BaselineConfig baseline_config() const;
  TheoryConfig theory_config() const;
  AdamWHyper hyper() const;
};

ExperimentConfig parse_config(const std::string& text);

// Applies one "section.key = value" assignment on top of an existing config and
// revalidates; used by sweeps and --seed.
void apply_override(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value);

// Every key with its resolved value, one section per block; parse_config of the
// result reproduces the same config.
std::string serialize_config(const ExperimentConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace saelab
