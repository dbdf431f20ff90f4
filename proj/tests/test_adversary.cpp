#include <cmath>
#include <random>

#include "attn_tutor/adversary.hpp"
#include "attn_tutor/ops.hpp"
#include "attn_tutor/optim.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace attn_tutor;
using namespace attn_tutor::adversary;
using test_support::random_tensor;
using test_support::simplex_rows;

TEST_CASE("zeroed output layer reads 0.5 everywhere") {
  std::mt19937_64 rng(1);
  const auto maps = simplex_rows(3, 49, rng);
  const auto cond = random_tensor({3, 1, 7, 7}, rng, 0, 1);
  for (auto kind : {DiscriminatorKind::global, DiscriminatorKind::pixel}) {
    Discriminator d(kind, 7, 2);
    d.zero_output_layer();
    const auto out = d.forward(maps, cond);
    CHECK(out.shape() == (kind == DiscriminatorKind::global ? Shape{3} : Shape{3, 49}));
    for (double v : out.values()) CHECK(v == 0.5);
  }
}

TEST_CASE("discriminator outputs lie strictly inside (0,1)") {
  std::mt19937_64 rng(2);
  const auto maps = simplex_rows(4, 49, rng);
  const auto cond = random_tensor({4, 1, 7, 7}, rng, 0, 3);
  for (auto kind : {DiscriminatorKind::global, DiscriminatorKind::pixel}) {
    const Discriminator d(kind, 7, 3);
    const auto out = d.forward(maps, cond);
    for (double v : out.values()) CHECK((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("pixel discriminator has fewer parameters than the global one") {
  const Discriminator g(DiscriminatorKind::global, 7, 1), p(DiscriminatorKind::pixel, 7, 1);
  CHECK(p.params().parameter_count() < g.params().parameter_count());
}

TEST_CASE("pixel discriminator is translation equivariant") {
  std::mt19937_64 rng(3);
  const std::size_t g = 5, k = g * g;
  const auto maps = simplex_rows(1, k, rng);
  const auto cond = random_tensor({1, 1, g, g}, rng, 0, 1);
  // Shift both channels one column to the right (wrapping).
  std::vector<double> m2(k), c2(k);
  for (std::size_t r = 0; r < g; ++r)
    for (std::size_t c = 0; c < g; ++c) {
      m2[r * g + (c + 1) % g] = maps.value(r * g + c);
      c2[r * g + (c + 1) % g] = cond.value(r * g + c);
    }
  const Discriminator d(DiscriminatorKind::pixel, g, 4);
  const auto a = d.forward(maps, cond);
  const auto b = d.forward(Tensor({1, k}, m2), Tensor({1, 1, g, g}, c2));
  for (std::size_t r = 0; r < g; ++r)
    for (std::size_t c = 0; c < g; ++c) CHECK(b.value(r * g + (c + 1) % g) == a.value(r * g + c));
}

TEST_CASE("conditioning changes the score of equal maps") {
  std::mt19937_64 rng(5);
  const auto maps = simplex_rows(8, 49, rng);
  const auto cond_a = random_tensor({8, 1, 7, 7}, rng, 0, 1);
  const auto cond_b = random_tensor({8, 1, 7, 7}, rng, 0, 1);
  // Train a toy discriminator briefly so it depends on its inputs.
  Discriminator d(DiscriminatorKind::global, 7, 6);
  Sgd opt(0.05, 0.5);
  const auto fake = simplex_rows(8, 49, rng);
  for (int i = 0; i < 20; ++i) {
    d.params().zero_grad();
    discriminator_loss(d.forward(maps, cond_a), d.forward(fake, cond_a)).backward();
    opt.step(d.params());
  }
  const auto sa = d.forward(maps, cond_a), sb = d.forward(maps, cond_b);
  double diff = 0.0;
  for (std::size_t i = 0; i < 8; ++i) diff += std::abs(sa.value(i) - sb.value(i));
  CHECK(diff > 1e-6);
}

TEST_CASE("minimax closed forms") {
  const Tensor half({4, 9}, 0.5);
  const auto r = minimax_losses(half, half);
  CHECK(r.d_loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
  CHECK(r.d_loss == doctest::Approx(1.3863).epsilon(1e-4));

  // Perfect discriminator: the loss bottoms out at the clamp.
  const Tensor one({3}, 1.0), zero({3}, 0.0);
  const auto perfect = minimax_losses(one, zero);
  CHECK(perfect.d_loss == doctest::Approx(-2.0 * std::log1p(-kProbFloor)).epsilon(1e-9));
  CHECK(perfect.d_loss < 1e-6);

  // K identical cells equal the scalar loss on that value.
  const Tensor cells_real({2, 49}, 0.8), cells_fake({2, 49}, 0.3), one_real({2}, 0.8), one_fake({2}, 0.3);
  CHECK(minimax_losses(cells_real, cells_fake).d_loss == doctest::Approx(minimax_losses(one_real, one_fake).d_loss).epsilon(1e-15));

  std::mt19937_64 rng(7);
  const auto dr = random_tensor({5}, rng, 0.05, 0.95), df = random_tensor({5}, rng, 0.05, 0.95);
  const auto sat = minimax_losses(dr, df, GeneratorForm::saturating);
  CHECK(sat.g_loss == -sat.d_loss);
  const auto ns = minimax_losses(dr, df, GeneratorForm::non_saturating);
  double expect = 0.0;
  for (double v : df.values()) expect -= std::log(v) / 5;
  CHECK(ns.g_loss == doctest::Approx(expect).epsilon(1e-14));

  const Tensor nan({2}, std::vector<double>{0.5, std::nan("")});
  CHECK_THROWS_AS(minimax_losses(nan, half), std::domain_error);
}

TEST_CASE("js divergence anchors") {
  const std::vector<double> p{0.2, 0.3, 0.5}, q{0.5, 0.1, 0.4};
  CHECK(js_divergence(std::span<const double>(p), p) == 0.0);
  CHECK(js_divergence(std::span<const double>(p), q) == js_divergence(std::span<const double>(q), p));
  const std::vector<double> a{0.5, 0.5, 0.0, 0.0}, b{0.0, 0.0, 0.3, 0.7};
  CHECK(js_divergence(std::span<const double>(a), b) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const Tensor ta({1, 4}, a), tb({1, 4}, b);
  CHECK(js_divergence(ta, tb).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("pearson chi2 anchors") {
  const std::vector<double> p{1.0, 0.0}, q{0.5, 0.5}, one{1.0};
  CHECK(pearson_chi2(std::span<const double>(p), q) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson_chi2(std::span<const double>(q), q) == 0.0);
  CHECK(pearson_chi2(std::span<const double>(one), one) == 0.0);
  CHECK(pearson_chi2(Tensor({1, 2}, p), Tensor({1, 2}, q)).item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("divergence ranges on random pairs") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 200; ++t) {
    const auto p = simplex_rows(1, 9, rng), q = simplex_rows(1, 9, rng);
    const double js = js_divergence(p.values(), q.values());
    CHECK(js >= 0.0);
    CHECK(js <= std::log(2.0) + 1e-15);
    CHECK(pearson_chi2(p.values(), q.values()) >= 0.0);
    CHECK(std::abs(js_divergence(p, q).item() - js) < 1e-15);
  }
  const auto p = simplex_rows(1, 9, rng);
  CHECK(std::abs(js_divergence(p.values(), p.values())) < 1e-12);
}

TEST_CASE("a small discriminator step lowers d_loss on a fixed batch") {
  std::mt19937_64 rng(9);
  const auto real = simplex_rows(6, 49, rng), fake = simplex_rows(6, 49, rng);
  const auto cond = random_tensor({6, 1, 7, 7}, rng, 0, 1);
  for (auto kind : {DiscriminatorKind::global, DiscriminatorKind::pixel}) {
    Discriminator d(kind, 7, 10);
    Sgd opt(1e-3, 0.0);
    auto loss = [&] { return discriminator_loss(d.forward(real, cond), d.forward(fake, cond)); };
    const auto before = loss();
    d.params().zero_grad();
    before.backward();
    opt.step(d.params());
    CHECK(loss().item() < before.item());
  }
}

TEST_CASE("condition is the detached channel mean") {
  std::mt19937_64 rng(10);
  auto a = random_tensor({2, 3, 4, 4}, rng);
  a.set_requires_grad(true);
  const auto c = condition_from_activation(a);
  CHECK(c.shape() == Shape{2, 1, 4, 4});
  CHECK_FALSE(c.requires_grad());
  CHECK(c.value(5) == doctest::Approx((a.value(5) + a.value(21) + a.value(37)) / 3).epsilon(1e-15));
}
