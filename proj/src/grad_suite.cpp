#include "attn_tutor/grad_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "attn_tutor/adversary.hpp"
#include "attn_tutor/gradcheck.hpp"
#include "attn_tutor/matchers.hpp"
#include "attn_tutor/ops.hpp"
#include "attn_tutor/rng.hpp"

namespace attn_tutor {

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor signed_away_from_zero(Shape shape, Rng& rng) {
  auto t = uniform(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& x : t.mutable_values())
    if (flip(rng)) x = -x;
  return t;
}

Tensor simplex(std::size_t n, std::size_t k, Rng& rng) {
  std::gamma_distribution<double> g(2.0, 1.0);
  std::vector<double> v(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += v[i * k + j] = g(rng) + 0.05;
    for (std::size_t j = 0; j < k; ++j) v[i * k + j] /= s;
  }
  return Tensor(Shape{n, k}, std::move(v));
}

std::vector<int> random_ids(std::size_t n, int classes, Rng& rng) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::vector<int> ids(n);
  for (auto& i : ids) i = d(rng);
  return ids;
}

// One probe: draws its operands from rng and returns grad_check's value.
using Probe = std::function<double(Rng&)>;

// Checks y = op(x) through a random readout.
Probe unary_probe(Shape shape, std::function<Tensor(const Tensor&)> op, std::function<Tensor(Shape, Rng&)> draw) {
  return [=](Rng& rng) {
    const auto x = draw(shape, rng);
    const auto w = uniform(op(x).shape(), rng, 0.5, 1.5);
    return grad_check([&](const Tensor& t) { return sum(mul(op(t), w)); }, x);
  };
}

Tensor draw_any(Shape s, Rng& rng) { return uniform(std::move(s), rng, -1.0, 1.0); }
Tensor draw_positive(Shape s, Rng& rng) { return uniform(std::move(s), rng, 0.2, 2.0); }

struct Case {
  std::string name;
  Probe probe;
};

std::vector<Case> cases() {
  std::vector<Case> c;
  auto un = [&](std::string name, Shape shape, std::function<Tensor(const Tensor&)> op,
                std::function<Tensor(Shape, Rng&)> draw = draw_any) {
    c.push_back({std::move(name), unary_probe(std::move(shape), std::move(op), std::move(draw))});
  };
  // Binary primitives, both operands, with broadcasting on the right.
  auto bin = [&](std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op, bool positive_b) {
    const Shape sa{3, 4}, sb{1, 4};
    c.push_back({name + "/a", [=](Rng& rng) {
                   const auto b = positive_b ? draw_positive(sb, rng) : draw_any(sb, rng);
                   const auto w = uniform(sa, rng, 0.5, 1.5);
                   return grad_check([&](const Tensor& a) { return sum(mul(op(a, b), w)); }, draw_any(sa, rng));
                 }});
    c.push_back({name + "/b", [=](Rng& rng) {
                   const auto a = draw_any(sa, rng);
                   const auto w = uniform(sa, rng, 0.5, 1.5);
                   const auto b = positive_b ? draw_positive(sb, rng) : draw_any(sb, rng);
                   return grad_check([&](const Tensor& t) { return sum(mul(op(a, t), w)); }, b);
                 }});
  };
  bin("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, false);
  bin("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, false);
  bin("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, false);
  bin("div", [](const Tensor& a, const Tensor& b) { return div(a, b); }, true);

  un("neg", {2, 5}, [](const Tensor& x) { return neg(x); });
  un("scale", {2, 5}, [](const Tensor& x) { return scale(x, -1.7); });
  un("add_scalar", {2, 5}, [](const Tensor& x) { return add_scalar(x, 0.3); });
  un("relu", {2, 5}, [](const Tensor& x) { return relu(x); }, signed_away_from_zero);
  un("tanh", {2, 5}, [](const Tensor& x) { return attn_tutor::tanh(x); });
  un("sigmoid", {2, 5}, [](const Tensor& x) { return sigmoid(x); });
  un("exp", {2, 5}, [](const Tensor& x) { return attn_tutor::exp(x); });
  un("log", {2, 5}, [](const Tensor& x) { return attn_tutor::log(x); }, draw_positive);
  un("square", {2, 5}, [](const Tensor& x) { return square(x); });
  un("clamp", {2, 5}, [](const Tensor& x) { return clamp(x, -0.5, 0.5); }, [](Shape s, Rng& rng) {
    // Entries sit either well inside or well outside [-0.5, 0.5].
    auto t = uniform(std::move(s), rng, 0.0, 1.0);
    for (auto& x : t.mutable_values()) x = x < 0.5 ? x * 0.8 - 0.4 : (x < 0.75 ? 0.7 + x : -0.7 - x);
    return t;
  });
  un("sum", {3, 4}, [](const Tensor& x) { return scale(sum(square(x)), 0.5); });
  un("mean", {3, 4}, [](const Tensor& x) { return mean(square(x)); });
  un("sum_axis", {2, 3, 4}, [](const Tensor& x) { return sum(x, 1, false); });
  un("mean_axis", {2, 3, 4}, [](const Tensor& x) { return mean(x, 2, true); });
  un("reshape", {2, 6}, [](const Tensor& x) { return reshape(x, {3, 4}); });
  un("permute", {2, 3, 4}, [](const Tensor& x) { return permute(x, {2, 0, 1}); });
  un("concat", {2, 3}, [](const Tensor& x) { return concat({x, square(x), x}, 1); });
  un("slice", {4, 5}, [](const Tensor& x) { return slice(x, 1, 1, 3); });
  un("avg_pool2", {2, 2, 5, 6}, [](const Tensor& x) { return avg_pool2(x); });
  un("softmax", {3, 5}, [](const Tensor& x) { return softmax(x); });
  un("log_softmax", {3, 5}, [](const Tensor& x) { return log_softmax(x); });

  c.push_back({"matmul/2d", [](Rng& rng) {
                 const auto b = draw_any({4, 3}, rng);
                 const auto w = uniform({2, 3}, rng, 0.5, 1.5);
                 const double ea = grad_check([&](const Tensor& a) { return sum(mul(matmul(a, b), w)); }, draw_any({2, 4}, rng));
                 const auto a = draw_any({2, 4}, rng);
                 const double eb = grad_check([&](const Tensor& t) { return sum(mul(matmul(a, t), w)); }, draw_any({4, 3}, rng));
                 return std::max(ea, eb);
               }});
  c.push_back({"matmul/batched", [](Rng& rng) {
                 const auto b = draw_any({2, 4, 3}, rng);
                 const auto w = uniform({2, 2, 3}, rng, 0.5, 1.5);
                 const double ea = grad_check([&](const Tensor& a) { return sum(mul(matmul(a, b), w)); }, draw_any({2, 2, 4}, rng));
                 const auto a = draw_any({2, 2, 4}, rng);
                 const double eb = grad_check([&](const Tensor& t) { return sum(mul(matmul(a, t), w)); }, draw_any({2, 4, 3}, rng));
                 return std::max(ea, eb);
               }});
  c.push_back({"matmul/shared", [](Rng& rng) {
                 const auto b = draw_any({4, 3}, rng);
                 const auto w = uniform({2, 2, 3}, rng, 0.5, 1.5);
                 const double ea = grad_check([&](const Tensor& a) { return sum(mul(matmul(a, b), w)); }, draw_any({2, 2, 4}, rng));
                 const auto a = draw_any({2, 2, 4}, rng);
                 const double eb = grad_check([&](const Tensor& t) { return sum(mul(matmul(a, t), w)); }, draw_any({4, 3}, rng));
                 return std::max(ea, eb);
               }});

  const Shape xs{2, 2, 5, 5}, ws{3, 2, 3, 3};
  c.push_back({"conv2d/x", [=](Rng& rng) {
                 const auto w = draw_any(ws, rng), b = draw_any({3}, rng);
                 const auto r = uniform({2, 3, 5, 5}, rng, 0.5, 1.5);
                 return grad_check([&](const Tensor& x) { return sum(mul(conv2d(x, w, b, 1), r)); }, draw_any(xs, rng));
               }});
  c.push_back({"conv2d/weight", [=](Rng& rng) {
                 const auto x = draw_any(xs, rng), b = draw_any({3}, rng);
                 const auto r = uniform({2, 3, 3, 3}, rng, 0.5, 1.5);
                 return grad_check([&](const Tensor& w) { return sum(mul(conv2d(x, w, b, 0), r)); }, draw_any(ws, rng));
               }});
  c.push_back({"conv2d/bias", [=](Rng& rng) {
                 const auto x = draw_any(xs, rng), w = draw_any(ws, rng);
                 const auto r = uniform({2, 3, 5, 5}, rng, 0.5, 1.5);
                 return grad_check([&](const Tensor& b) { return sum(mul(conv2d(x, w, b, 1), r)); }, draw_any({3}, rng));
               }});
  c.push_back({"embedding", [](Rng& rng) {
                 const auto ids = random_ids(6, 5, rng);
                 const auto r = uniform({6, 3}, rng, 0.5, 1.5);
                 return grad_check([&](const Tensor& t) { return sum(mul(embedding(t, ids), r)); }, draw_any({5, 3}, rng));
               }});
  c.push_back({"gather", [](Rng& rng) {
                 const auto ids = random_ids(4, 5, rng);
                 const auto r = uniform({4}, rng, 0.5, 1.5);
                 return grad_check([&](const Tensor& x) { return sum(mul(gather(x, ids), r)); }, draw_any({4, 5}, rng));
               }});
  c.push_back({"linear", [](Rng& rng) {
                 const auto w = draw_any({4, 3}, rng), b = draw_any({3}, rng);
                 const auto r = uniform({2, 3}, rng, 0.5, 1.5);
                 return grad_check([&](const Tensor& x) { return sum(mul(linear(x, w, b), r)); }, draw_any({2, 4}, rng));
               }});
  c.push_back({"lstm_step", [](Rng& rng) {
                 const std::size_t n = 2, e = 3, h = 4;
                 const auto x = draw_any({n, e}, rng), hid = draw_any({n, h}, rng), cell = draw_any({n, h}, rng);
                 const auto wx = draw_any({e, 4 * h}, rng), wh = draw_any({h, 4 * h}, rng), b = draw_any({4 * h}, rng);
                 const auto rh = uniform({n, h}, rng, 0.5, 1.5), rc = uniform({n, h}, rng, 0.5, 1.5);
                 auto out = [&](const LstmState& s) { return add(sum(mul(s.hidden, rh)), sum(mul(s.cell, rc))); };
                 double worst = grad_check([&](const Tensor& t) { return out(lstm_step(t, {hid, cell}, wx, wh, b)); }, x);
                 worst = std::max(worst, grad_check([&](const Tensor& t) { return out(lstm_step(x, {t, cell}, wx, wh, b)); }, hid));
                 worst = std::max(worst, grad_check([&](const Tensor& t) { return out(lstm_step(x, {hid, t}, wx, wh, b)); }, cell));
                 worst = std::max(worst, grad_check([&](const Tensor& t) { return out(lstm_step(x, {hid, cell}, t, wh, b)); }, wx));
                 worst = std::max(worst, grad_check([&](const Tensor& t) { return out(lstm_step(x, {hid, cell}, wx, t, b)); }, wh));
                 return std::max(worst, grad_check([&](const Tensor& t) { return out(lstm_step(x, {hid, cell}, wx, wh, t)); }, b));
               }});

  // Composite losses.
  c.push_back({"loss/cross_entropy", [](Rng& rng) {
                 const auto labels = random_ids(4, 6, rng);
                 return grad_check([&](const Tensor& z) { return cross_entropy(z, labels); }, uniform({4, 6}, rng, -2.0, 2.0));
               }});
  c.push_back({"loss/gan_discriminator", [](Rng& rng) {
                 const auto fake = uniform({3, 5}, rng, 0.05, 0.95);
                 const double er = grad_check([&](const Tensor& r) { return adversary::discriminator_loss(r, fake); },
                                              uniform({3, 5}, rng, 0.05, 0.95));
                 const auto real = uniform({3, 5}, rng, 0.05, 0.95);
                 const double ef = grad_check([&](const Tensor& f) { return adversary::discriminator_loss(real, f); },
                                              uniform({3, 5}, rng, 0.05, 0.95));
                 return std::max(er, ef);
               }});
  c.push_back({"loss/gan_generator", [](Rng& rng) {
                 const auto real = uniform({3, 5}, rng, 0.05, 0.95);
                 double worst = 0.0;
                 for (auto form : {adversary::GeneratorForm::non_saturating, adversary::GeneratorForm::saturating}) {
                   worst = std::max(worst, grad_check([&](const Tensor& f) { return adversary::generator_loss(real, f, form); },
                                                      uniform({3, 5}, rng, 0.05, 0.95)));
                 }
                 return worst;
               }});
  // Gradient reaching the attention map through each discriminator, the
  // path the generator update uses.
  for (auto kind : {adversary::DiscriminatorKind::global, adversary::DiscriminatorKind::pixel}) {
    const std::string name = kind == adversary::DiscriminatorKind::global ? "loss/gan_global_network" : "loss/gan_pixel_network";
    c.push_back({name, [kind](Rng& rng) {
                   const std::size_t g = 3, k = g * g;
                   const adversary::Discriminator disc(kind, g, rng());
                   const auto frozen = disc.snapshot();
                   const auto cond = uniform({2, 1, g, g}, rng, 0.0, 1.0);
                   const auto real = frozen.forward(simplex(2, k, rng), cond);
                   // Keep every hidden ReLU clear of its kink within one step.
                   auto alpha = simplex(2, k, rng);
                   while (frozen.relu_margin(alpha, cond) < 1e-3) alpha = simplex(2, k, rng);
                   return grad_check(
                       [&](const Tensor& a) {
                         return adversary::generator_loss(real, frozen.forward(a, cond), adversary::GeneratorForm::non_saturating);
                       },
                       alpha);
                 }});
  }
  c.push_back({"loss/js", [](Rng& rng) {
                 const auto q = simplex(3, 6, rng);
                 const double ep = grad_check([&](const Tensor& p) { return adversary::js_divergence(p, q); }, simplex(3, 6, rng));
                 const auto p = simplex(3, 6, rng);
                 const double eq = grad_check([&](const Tensor& t) { return adversary::js_divergence(p, t); }, simplex(3, 6, rng));
                 return std::max(ep, eq);
               }});
  c.push_back({"loss/chi2", [](Rng& rng) {
                 const auto q = simplex(3, 6, rng);
                 const double ep = grad_check([&](const Tensor& p) { return adversary::pearson_chi2(p, q); }, simplex(3, 6, rng));
                 const auto p = simplex(3, 6, rng);
                 const double eq = grad_check([&](const Tensor& t) { return adversary::pearson_chi2(p, t); }, simplex(3, 6, rng));
                 return std::max(ep, eq);
               }});
  c.push_back({"loss/mse", [](Rng& rng) {
                 const auto mu = simplex(3, 6, rng);
                 return grad_check([&](const Tensor& a) { return match::mse_loss(a, mu); }, simplex(3, 6, rng));
               }});
  c.push_back({"loss/mmd", [](Rng& rng) {
                 const auto mu = simplex(4, 6, rng);
                 const std::vector<double> bw{0.1, 1.0, 10.0};
                 return grad_check([&](const Tensor& a) { return match::mmd_loss(a, mu, bw); }, simplex(4, 6, rng));
               }});
  c.push_back({"loss/coral", [](Rng& rng) {
                 const auto mu = simplex(5, 4, rng);
                 return grad_check([&](const Tensor& a) { return match::coral_loss(a, mu); }, simplex(5, 4, rng));
               }});
  return c;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::size_t probes, std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  std::uint64_t index = 0;
  for (auto& c : cases()) {
    Rng rng(derive_seed(seed, {index++}));
    GradCheckResult r{c.name, probes, 0.0};
    for (std::size_t i = 0; i < probes; ++i) r.max_error = std::max(r.max_error, c.probe(rng));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace attn_tutor
