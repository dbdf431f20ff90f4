#include <cmath>
#include <numeric>
#include <random>

#include "attn_tutor/explainers.hpp"
#include "attn_tutor/metrics.hpp"
#include "attn_tutor/ops.hpp"
#include "attn_tutor/rng.hpp"
#include "attn_tutor/synthdata.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace attn_tutor;
using test_support::random_tensor;

namespace {

double l1(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

std::span<const double> row(const Tensor& t, std::size_t n) {
  const auto k = t.size(1);
  return t.values().subspan(n * k, k);
}

}  // namespace

TEST_CASE("grad_cam of a mean readout is proportional to relu(A)") {
  std::mt19937_64 rng(1);
  const std::size_t g = 3;
  const auto a = random_tensor({2, 1, g, g}, rng);
  // One channel, logit = mean(A): mu = 1/(G*G) for every sample.
  auto head = [](const Tensor& act) { return reshape(mean(reshape(act, {act.size(0), act.numel() / act.size(0)}), 1, true), {act.size(0), 1}); };
  const std::vector<int> cls{0, 0};
  const auto out = explain::grad_cam(a, head, cls);
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> expect(g * g);
    for (std::size_t k = 0; k < g * g; ++k) expect[k] = std::max(0.0, a.value(n * g * g + k));
    const double s = std::accumulate(expect.begin(), expect.end(), 0.0);
    for (std::size_t k = 0; k < g * g; ++k) CHECK(row(out.maps, n)[k] == doctest::Approx(expect[k] / s).epsilon(1e-12));
    CHECK_FALSE(out.fallback[n]);
  }
  CHECK_FALSE(out.maps.requires_grad());
}

TEST_CASE("grad_cam falls back to uniform when the logit ignores the image") {
  std::mt19937_64 rng(2);
  const auto a = random_tensor({1, 2, 3, 3}, rng);
  const Tensor bias({1, 2}, std::vector<double>{0.3, -0.2});
  auto head = [&](const Tensor& act) { return add(scale(sum(act), 0.0), bias); };
  const std::vector<int> cls{1};
  const auto out = explain::grad_cam(a, head, cls);
  CHECK(out.fallback[0]);
  for (double v : out.maps.values()) CHECK(v == doctest::Approx(1.0 / 9).epsilon(1e-15));
  const std::vector<int> bad{2};
  CHECK_THROWS_AS(explain::grad_cam(a, head, bad), std::out_of_range);
}

TEST_CASE("grad_cam of the VQA model is normalised and detached") {
  vqa::VqaModel model({}, 3);
  std::mt19937_64 rng(4);
  const auto images = random_tensor({3, 3, 28, 28}, rng, 0, 1);
  const std::vector<int> tokens{1, 2, 7, 10, 3, 4, 8, 10, 5, 6, 9, 10}, labels{0, 7, 10};
  const auto f = model.forward(images, tokens, 4);
  const auto out = explain::grad_cam(model, f, labels);
  for (std::size_t n = 0; n < 3; ++n) CHECK(on_simplex(row(out.maps, n)));
  for (const auto& [name, p] : model.params()) CHECK_FALSE(p.has_grad());
  CHECK_FALSE(out.maps.requires_grad());

  // Perturbing the model after extraction leaves the stored map untouched.
  const std::vector<double> before(out.maps.values().begin(), out.maps.values().end());
  for (auto& v : model.params().get("enc.conv3.w").mutable_values()) v *= -2.0;
  CHECK(std::equal(before.begin(), before.end(), out.maps.values().begin()));
}

TEST_CASE("rise masks lie in [0,1] and keep about keep_prob of the image") {
  const explain::RiseOptions opts{256, 0.5, 9};
  const auto masks = explain::rise_masks(28, 7, opts);
  REQUIRE(masks.size() == 256);
  double total = 0.0;
  for (const auto& m : masks) {
    REQUIRE(m.size() == 28 * 28);
    for (double v : m) CHECK((v >= 0.0 && v <= 1.0));
    total += std::accumulate(m.begin(), m.end(), 0.0) / m.size();
  }
  CHECK(total / 256 == doctest::Approx(0.5).epsilon(0.1));
  CHECK_THROWS_AS(explain::rise_masks(28, 7, {0, 0.5, 1}), std::invalid_argument);
  CHECK_THROWS_AS(explain::rise_masks(28, 7, {4, 1.0, 1}), std::invalid_argument);
}

TEST_CASE("rise with a constant model approaches the uniform map") {
  std::mt19937_64 rng(5);
  const auto images = random_tensor({1, 3, 28, 28}, rng, 0, 1);
  const std::vector<int> cls{0};
  auto constant = [](const Tensor& masked, std::size_t) { return std::vector<double>(masked.size(0), 0.4); };
  const auto out = explain::rise(images, cls, 7, {4096, 0.5, 3}, constant);
  const std::vector<double> uniform(49, 1.0 / 49);
  CHECK(l1(row(out.maps, 0), uniform) < 0.05);
}

TEST_CASE("rise with one mask is that mask pooled and normalised") {
  std::mt19937_64 rng(6);
  const auto images = random_tensor({1, 3, 28, 28}, rng, 0, 1);
  const std::vector<int> cls{0};
  const explain::RiseOptions opts{1, 0.5, 17};
  auto constant = [](const Tensor& masked, std::size_t) { return std::vector<double>(masked.size(0), 0.9); };
  const auto out = explain::rise(images, cls, 7, opts, constant);
  // Sample 0 draws from derive_seed(seed, {0}).
  const auto masks = explain::rise_masks(28, 7, {1, 0.5, derive_seed(17, {0})});
  auto pooled = explain::pool_to_grid(masks[0], 28, 7);
  normalize_or_uniform(pooled);
  for (std::size_t k = 0; k < 49; ++k) CHECK(row(out.maps, 0)[k] == doctest::Approx(pooled[k]).epsilon(1e-12));
}

TEST_CASE("rise is reproducible and self-consistent") {
  std::mt19937_64 rng(7);
  const auto images = random_tensor({1, 3, 28, 28}, rng, 0, 1);
  const auto weights = random_tensor({3 * 28 * 28}, rng, -1, 1);
  const std::vector<int> cls{0};
  // Fixed tiny model: sigmoid of a weighted pixel sum.
  auto tiny = [&](const Tensor& masked, std::size_t) {
    std::vector<double> p(masked.size(0));
    const std::size_t d = weights.numel();
    for (std::size_t m = 0; m < p.size(); ++m) {
      double z = 0.0;
      for (std::size_t i = 0; i < d; ++i) z += masked.value(m * d + i) * weights.value(i);
      p[m] = 1.0 / (1.0 + std::exp(-z / 10.0));
    }
    return p;
  };
  const auto a = explain::rise(images, cls, 7, {64, 0.5, 1}, tiny);
  const auto b = explain::rise(images, cls, 7, {64, 0.5, 1}, tiny);
  CHECK(std::equal(a.maps.values().begin(), a.maps.values().end(), b.maps.values().begin()));

  const auto big1 = explain::rise(images, cls, 7, {4096, 0.5, 100}, tiny);
  const auto big2 = explain::rise(images, cls, 7, {4096, 0.5, 200}, tiny);
  CHECK(l1(row(big1.maps, 0), row(big2.maps, 0)) < 0.02);
}

TEST_CASE("rise with all-zero weights falls back to uniform") {
  const Tensor images({2, 3, 28, 28}, 0.5);
  const std::vector<int> cls{0, 1};
  auto zero = [](const Tensor& masked, std::size_t) { return std::vector<double>(masked.size(0), 0.0); };
  const auto out = explain::rise(images, cls, 7, {8, 0.5, 1}, zero);
  CHECK(out.fallback[0]);
  CHECK(out.fallback[1]);
  for (double v : out.maps.values()) CHECK(v == doctest::Approx(1.0 / 49).epsilon(1e-15));
}

TEST_CASE("rise of the VQA model gives simplex maps") {
  const vqa::VqaModel model({}, 8);
  std::mt19937_64 rng(8);
  const auto images = random_tensor({2, 3, 28, 28}, rng, 0, 1);
  const std::vector<int> tokens{1, 2, 7, 10, 5, 6, 9, 10}, labels{3, 9};
  const auto out = explain::rise(model, images, tokens, 4, labels, {8, 0.5, 2});
  for (std::size_t n = 0; n < 2; ++n) CHECK(on_simplex(row(out.maps, n)));
}

TEST_CASE("random explanation hits the requested overlap") {
  synth::DatasetSpec spec;
  spec.n_samples = 60;
  const auto data = synth::generate(spec);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const GridMap ref{7, data.samples[i].gt_attention, MapSource::reference};
    for (double target : {0.07, 0.20}) {
      const auto m = explain::random_explanation(ref, target, 1000 + i);
      CHECK(on_simplex(m.values));
      const double got = metrics::overlap(m.values, ref.values);
      CHECK(got >= target - 0.02);
      CHECK(got <= target + 0.02);
    }
    const auto same = explain::random_explanation(ref, 1.0, 1);
    CHECK(same.values == ref.values);
  }
}

TEST_CASE("unattainable overlap names the achievable range") {
  const auto uniform = GridMap::uniform(7);
  try {
    (void)explain::random_explanation(uniform, 0.01, 1);
    FAIL("expected OverlapRangeError");
  } catch (const explain::OverlapRangeError& e) {
    CHECK(e.low == doctest::Approx(1.0 / 49));
    CHECK(e.high == 1.0);
    CHECK(std::string(e.what()).find("achievable range") != std::string::npos);
  }
  CHECK_THROWS_AS(explain::random_explanation(uniform, 1.5, 1), explain::OverlapRangeError);
}
