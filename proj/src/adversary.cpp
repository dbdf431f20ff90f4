#include "attn_tutor/adversary.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "attn_tutor/ops.hpp"
#include "attn_tutor/rng.hpp"

namespace attn_tutor::adversary {

namespace {

Tensor he_init(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor bias(std::size_t n) { return Tensor(Shape{n}, 0.0, true); }

Tensor clamp_prob(const Tensor& d) { return clamp(d, kProbFloor, 1.0 - kProbFloor); }

void require_finite(const Tensor& d, const char* what) {
  for (double v : d.values()) {
    if (!std::isfinite(v)) throw std::domain_error(std::string("adversarial loss: non-finite ") + what + " probability");
  }
}

// x log x with 0 log 0 = 0.
Tensor xlogx(const Tensor& x) { return mul(x, log(clamp(x, 1e-300, std::numeric_limits<double>::infinity()))); }

void check_pair(const Tensor& p, const Tensor& q, const char* op) {
  if (p.shape() != q.shape() || p.rank() != 2) {
    throw ShapeError(std::string(op) + ": p=" + shape_string(p.shape()) + ", q=" + shape_string(q.shape()) +
                     ", expected equal [N,K]");
  }
}

}  // namespace

Tensor condition_from_activation(const Tensor& activation) {
  if (activation.rank() != 4) throw ShapeError("condition_from_activation: expected [N,d,G,G], got " + shape_string(activation.shape()));
  return mean(activation.detach(), 1, true);
}

Discriminator::Discriminator(DiscriminatorKind kind, std::size_t grid, std::uint64_t seed) : kind_(kind), grid_(grid) {
  if (grid == 0) throw std::invalid_argument("discriminator: grid must be positive");
  Rng rng(derive_seed(seed, {0x64697363ULL}));
  const std::size_t k = grid * grid;
  if (kind == DiscriminatorKind::global) {
    params_.add("d.conv1.w", he_init({8, 2, 3, 3}, 18, rng));
    params_.add("d.conv1.b", bias(8));
    params_.add("d.conv2.w", he_init({8, 8, 3, 3}, 72, rng));
    params_.add("d.conv2.b", bias(8));
    params_.add("d.out.w", he_init({8 * k, 1}, 8 * k, rng));
    params_.add("d.out.b", bias(1));
  } else {
    params_.add("d.conv1.w", he_init({16, 2, 1, 1}, 2, rng));
    params_.add("d.conv1.b", bias(16));
    params_.add("d.conv2.w", he_init({16, 16, 1, 1}, 16, rng));
    params_.add("d.conv2.b", bias(16));
    params_.add("d.out.w", he_init({1, 16, 1, 1}, 16, rng));
    params_.add("d.out.b", bias(1));
  }
}

Tensor Discriminator::forward(const Tensor& maps, const Tensor& condition) const { return run(maps, condition, nullptr); }

double Discriminator::relu_margin(const Tensor& maps, const Tensor& condition) const {
  std::vector<Tensor> hidden;
  (void)run(maps.detach(), condition.detach(), &hidden);
  double margin = INFINITY;
  for (const auto& h : hidden)
    for (double v : h.values()) margin = std::min(margin, std::abs(v));
  return margin;
}

Tensor Discriminator::run(const Tensor& maps, const Tensor& condition, std::vector<Tensor>* hidden) const {
  const std::size_t g = grid_, k = g * g;
  if (maps.rank() != 2 || maps.size(1) != k || condition.shape() != Shape{maps.size(0), 1, g, g}) {
    throw ShapeError("discriminator: maps=" + shape_string(maps.shape()) + ", condition=" + shape_string(condition.shape()) +
                     "; expected [N," + std::to_string(k) + "] and [N,1," + std::to_string(g) + "," + std::to_string(g) + "]");
  }
  const std::size_t n = maps.size(0);
  const std::size_t pad = kind_ == DiscriminatorKind::global ? 1 : 0;
  auto x = concat({reshape(scale(maps, static_cast<double>(k)), {n, 1, g, g}), condition}, 1);
  for (const char* layer : {"d.conv1", "d.conv2"}) {
    const std::string name(layer);
    x = conv2d(x, params_.get(name + ".w"), params_.get(name + ".b"), pad);
    if (hidden) hidden->push_back(x);
    x = relu(x);
  }
  if (kind_ == DiscriminatorKind::global) {
    return reshape(sigmoid(linear(reshape(x, {n, 8 * k}), params_.get("d.out.w"), params_.get("d.out.b"))), {n});
  }
  return reshape(sigmoid(conv2d(x, params_.get("d.out.w"), params_.get("d.out.b"), 0)), {n, k});
}

void Discriminator::zero_output_layer() {
  for (const char* name : {"d.out.w", "d.out.b"}) {
    for (auto& v : params_.get(name).mutable_values()) v = 0.0;
  }
}

Discriminator Discriminator::snapshot() const { return Discriminator(kind_, grid_, params_.snapshot()); }

Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake) {
  return neg(add(mean(log(clamp_prob(d_real))), mean(log(1.0 - clamp_prob(d_fake)))));
}

Tensor generator_loss(const Tensor& d_real, const Tensor& d_fake, GeneratorForm form) {
  if (form == GeneratorForm::saturating) return neg(discriminator_loss(d_real, d_fake));
  return neg(mean(log(clamp_prob(d_fake))));
}

LossReport minimax_losses(const Tensor& d_real, const Tensor& d_fake, GeneratorForm form) {
  require_finite(d_real, "real");
  require_finite(d_fake, "fake");
  const auto real = d_real.detach(), fake = d_fake.detach();
  LossReport report;
  report.d_loss = discriminator_loss(real, fake).item();
  report.g_loss = form == GeneratorForm::saturating ? -report.d_loss : generator_loss(real, fake, form).item();
  if (!std::isfinite(report.d_loss) || !std::isfinite(report.g_loss)) {
    throw std::domain_error("adversarial loss: non-finite value after clamping");
  }
  return report;
}

Tensor js_divergence(const Tensor& p, const Tensor& q) {
  check_pair(p, q, "js_divergence");
  const auto m = scale(add(p, q), 0.5);
  const auto per_row = sub(scale(add(sum(xlogx(p), 1), sum(xlogx(q), 1)), 0.5), sum(xlogx(m), 1));
  return mean(per_row);
}

Tensor pearson_chi2(const Tensor& p, const Tensor& q) {
  check_pair(p, q, "pearson_chi2");
  const auto floor_q = clamp(q, 1e-7, std::numeric_limits<double>::infinity());
  return mean(sum(div(square(sub(p, q)), floor_q), 1));
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("js_divergence: size mismatch");
  auto term = [](double x, double m) { return x > 0.0 ? x * std::log(x / m) : 0.0; };
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    total += 0.5 * term(p[i], m) + 0.5 * term(q[i], m);
  }
  return total;
}

double pearson_chi2(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("pearson_chi2: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - q[i];
    total += d * d / std::max(q[i], 1e-7);
  }
  return total;
}

}  // namespace attn_tutor::adversary
