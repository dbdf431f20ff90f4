#pragma once

#include <string>
#include <variant>

#include "attn_tutor/params.hpp"

namespace attn_tutor {

/// Global L2 norm over the gradients of entries that require grad.
double gradient_norm(const ParamStore& params);
/// Rescales those gradients so their global norm is at most max_norm
/// (0 disables). Returns the norm before rescaling.
double clip_gradients(ParamStore& params, double max_norm);

/// SGD with heavy-ball momentum: v <- momentum * v + g, p <- p - lr * v.
/// A positive clip_norm rescales the global gradient norm before the update.
class Sgd {
 public:
  explicit Sgd(double learning_rate, double momentum = 0.9, double clip_norm = 0.0);

  /// Applies one update to every entry that requires grad; entries without a
  /// gradient buffer are treated as having zero gradient.
  void step(ParamStore& params);

  double learning_rate() const { return lr_; }
  double momentum() const { return momentum_; }
  /// Global gradient norm seen by the last step, before clipping.
  double last_grad_norm() const { return last_norm_; }

  /// Momentum buffers, named like the parameters they belong to.
  const ParamStore& velocity() const { return velocity_; }
  void set_velocity(ParamStore velocity) { velocity_ = std::move(velocity); }

 private:
  double lr_;
  double momentum_;
  double clip_norm_;
  double last_norm_ = 0.0;
  ParamStore velocity_;
};

/// Adam with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  void step(ParamStore& params);

  double learning_rate() const { return lr_; }
  std::size_t steps() const { return t_; }
  const ParamStore& first_moment() const { return m_; }
  const ParamStore& second_moment() const { return v_; }
  void set_state(ParamStore first, ParamStore second, std::size_t steps);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  ParamStore m_, v_;
};

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

/// Either optimizer behind one interface. Buffers round-trip through a flat
/// store: "velocity.<param>" for sgd (momentum 0.9), "m.<param>" and
/// "v.<param>" for adam, whose step count is passed separately.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, const ParamStore& buffers = {}, std::size_t steps = 0);

  void step(ParamStore& params);
  ParamStore buffers() const;

 private:
  std::variant<Sgd, Adam> impl_;
};

}  // namespace attn_tutor
