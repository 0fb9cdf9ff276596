#pragma once

#include <cstdint>
#include <string>

#include "saelab/common.hpp"

namespace saelab {

struct Activation {
  enum class Kind { relu, jump_relu, softplus };
  Kind kind = Kind::relu;
  double gamma = 1.0;  // softplus sharpness

  static Activation relu() { return {Kind::relu, 1.0}; }
  static Activation jump_relu() { return {Kind::jump_relu, 1.0}; }
  static Activation softplus(double gamma);

  // phi and phi' for relu/softplus; jump_relu is handled inside forward.
  double value(double u) const;
  double derivative(double u) const;
};

std::string to_string(const Activation& act);
Activation activation_from_string(const std::string& text);  // "relu", "jump_relu", "softplus:8"

struct Objective {
  enum class Kind { reconstruction, l1, topk };
  Kind kind = Kind::reconstruction;
  double lambda = 0.0;
  int k = 0;

  static Objective reconstruction() { return {Kind::reconstruction, 0.0, 0}; }
  static Objective l1(double lambda);
  static Objective topk(int k);
};

std::string to_string(const Objective& obj);

struct SaeParams {
  Matrix W;      // M x d, row m is w_m
  Vector a;      // output scales
  Vector b;      // neuron biases
  Vector b_pre;  // d

  Index M() const { return W.rows(); }
  Index d() const { return W.cols(); }

  // W rows uniform on the unit sphere, a = 1, b = 0, b_pre = 0.
  static SaeParams init(Index M, Index d, std::uint64_t seed);
  bool all_finite() const;
};

// Gradient buffers shaped like SaeParams.
struct SaeGrads {
  Matrix W;
  Vector a;
  Vector b;
  Vector b_pre;

  static SaeGrads zeros_like(const SaeParams& p);
  bool all_finite() const;
};

struct ForwardCache {
  Matrix pre;       // M x L
  Matrix post;      // M x L
  Matrix recon;     // L x d
  Matrix centered;  // L x d
};

// y = W (x - b_pre) + b for every row x of batch, returned as M x L.
Matrix pre_activations(const SaeParams& params, const Matrix& batch);

ForwardCache forward(const SaeParams& params, const Matrix& batch, const Activation& act, const Objective& obj);

// Keeps the k largest entries (ties: lower index wins), zeroes the rest.
Vector topk_select(const Vector& values, int k);

double loss(const SaeParams& params, const Matrix& batch, const Activation& act, const Objective& obj);

SaeGrads objective_grad(const SaeParams& params, const Matrix& batch, const Activation& act, const Objective& obj);

// One forward pass; fills grads and (optionally) the cache, returns the loss.
double loss_and_grad(const SaeParams& params, const Matrix& batch, const Activation& act, const Objective& obj,
                     SaeGrads& grads, ForwardCache* cache = nullptr);

}  // namespace saelab
