#include "attn_tutor/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string_view>

namespace attn_tutor {

double gradient_norm(const ParamStore& params) {
  double norm_sq = 0.0;
  for (const auto& [name, p] : params)
    if (p.requires_grad() && p.has_grad())
      for (double g : p.grad()) norm_sq += g * g;
  return std::sqrt(norm_sq);
}

double clip_gradients(ParamStore& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, p] : params)
      if (p.requires_grad() && p.has_grad())
        for (auto& g : p.mutable_grad()) g *= factor;
  }
  return norm;
}

Sgd::Sgd(double learning_rate, double momentum, double clip_norm)
    : lr_(learning_rate), momentum_(momentum), clip_norm_(clip_norm) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("sgd: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
}

void Sgd::step(ParamStore& params) {
  last_norm_ = gradient_norm(params);
  const double factor = (clip_norm_ > 0.0 && last_norm_ > clip_norm_) ? clip_norm_ / last_norm_ : 1.0;

  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    if (!velocity_.contains(name)) velocity_.add(name, Tensor(p.shape()));
    auto v = velocity_.get(name).mutable_values();
    auto values = p.mutable_values();
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double g = has ? p.grad()[i] * factor : 0.0;
      v[i] = momentum_ * v[i] + g;
      values[i] -= lr_ * v[i];
    }
  }
}

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw std::invalid_argument("adam: betas must lie in [0, 1)");
}

void Adam::set_state(ParamStore first, ParamStore second, std::size_t steps) {
  m_ = std::move(first);
  v_ = std::move(second);
  t_ = steps;
}

void Adam::step(ParamStore& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    if (!m_.contains(name)) {
      m_.add(name, Tensor(p.shape()));
      v_.add(name, Tensor(p.shape()));
    }
    auto m = m_.get(name).mutable_values();
    auto v = v_.get(name).mutable_values();
    auto values = p.mutable_values();
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = has ? p.grad()[i] : 0.0;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("optimizer must be sgd or adam, got '" + text + "'");
}

namespace {

ParamStore with_prefix(const ParamStore& all, std::string_view prefix) {
  ParamStore out;
  for (const auto& [name, t] : all)
    if (name.starts_with(prefix)) out.add(name.substr(prefix.size()), t.detach());
  return out;
}

}  // namespace

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, const ParamStore& buffers, std::size_t steps)
    : impl_(Sgd(learning_rate)) {
  for (const auto& [name, t] : buffers) {
    if (!name.starts_with("velocity.") && !name.starts_with("m.") && !name.starts_with("v.")) {
      throw std::invalid_argument("optimizer: unknown buffer '" + name + "'");
    }
  }
  if (kind == OptimizerKind::sgd) {
    Sgd sgd(learning_rate, 0.9);
    sgd.set_velocity(with_prefix(buffers, "velocity."));
    impl_ = std::move(sgd);
  } else {
    Adam adam(learning_rate);
    adam.set_state(with_prefix(buffers, "m."), with_prefix(buffers, "v."), steps);
    impl_ = std::move(adam);
  }
}

void Optimizer::step(ParamStore& params) {
  std::visit([&](auto& opt) { opt.step(params); }, impl_);
}

ParamStore Optimizer::buffers() const {
  ParamStore out;
  auto copy = [&](const ParamStore& from, const std::string& prefix) {
    for (const auto& [name, t] : from) out.add(prefix + name, t.detach());
  };
  if (const auto* sgd = std::get_if<Sgd>(&impl_)) {
    copy(sgd->velocity(), "velocity.");
  } else {
    const auto& adam = std::get<Adam>(impl_);
    copy(adam.first_moment(), "m.");
    copy(adam.second_moment(), "v.");
  }
  return out;
}

}  // namespace attn_tutor
