#include <cmath>
#include <random>

#include "attn_tutor/gradcheck.hpp"
#include "attn_tutor/ops.hpp"
#include "attn_tutor/vqa_net.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace attn_tutor;
using test_support::random_tensor;

namespace {

vqa::VqaModelConfig tiny_config() {
  vqa::VqaModelConfig c;
  c.image_size = 8;
  c.region_grid = 2;
  c.feature_dim = 4;
  c.recurrent_hidden = 4;
  c.embed_dim = 3;
  c.attention_dim = 3;
  c.conv1_channels = 2;
  c.conv2_channels = 3;
  c.classifier_hidden = 5;
  c.question_vocab = 6;
  c.answer_classes = 4;
  return c;
}

void set(vqa::VqaModel& m, const char* name, std::vector<double> values) {
  auto v = m.params().get(name).mutable_values();
  REQUIRE(v.size() == values.size());
  std::copy(values.begin(), values.end(), v.begin());
}

}  // namespace

TEST_CASE("32 px images land on a 7x7x32 region grid") {
  vqa::VqaModelConfig c;
  c.image_size = 32;
  const vqa::VqaModel model(c, 1);
  std::mt19937_64 rng(2);
  const auto a = model.encode_image(random_tensor({2, 3, 32, 32}, rng, 0, 1));
  CHECK(a.shape() == Shape{2, 32, 7, 7});
  CHECK(vqa::regions_from_activation(a).shape() == Shape{2, 49, 32});
}

TEST_CASE("configs that cannot reach the grid are rejected") {
  vqa::VqaModelConfig c;
  c.image_size = 20;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.image_size = 28;
  c.recurrent_hidden = 16;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("zero image with zero biases gives zero features") {
  auto c = tiny_config();
  c.pixel_shift = 0.0;
  const vqa::VqaModel model(c, 3);
  const auto a = model.encode_image(Tensor({1, 3, 8, 8}, 0.0));
  for (double v : a.values()) CHECK(v == 0.0);
}

TEST_CASE("image encoding is bitwise stable for a fixed seed") {
  std::mt19937_64 rng(4);
  const auto img = random_tensor({1, 3, 28, 28}, rng, 0, 1);
  const auto a = vqa::VqaModel({}, 9).encode_image(img);
  const auto b = vqa::VqaModel({}, 9).encode_image(img);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST_CASE("single-token question is one recurrent step") {
  const vqa::VqaModel model(tiny_config(), 5);
  const std::vector<int> tok{3};
  const auto q = model.encode_question(tok, 1);
  const auto& p = model.params();
  const auto h = model.config().recurrent_hidden;
  const auto s = lstm_step(embedding(p.get("q.embed"), tok), {Tensor({1, h}), Tensor({1, h})}, p.get("q.lstm.wx"),
                           p.get("q.lstm.wh"), p.get("q.lstm.b"));
  CHECK(std::equal(q.values().begin(), q.values().end(), s.hidden.values().begin()));
}

TEST_CASE("question encoding is order sensitive") {
  const vqa::VqaModel model(tiny_config(), 6);
  const std::vector<int> a{1, 2, 3}, b{3, 2, 1};
  const auto qa = model.encode_question(a, 3), qb = model.encode_question(b, 3);
  double diff = 0.0;
  for (std::size_t i = 0; i < qa.numel(); ++i) diff += std::abs(qa.value(i) - qb.value(i));
  CHECK(diff > 1e-6);
}

TEST_CASE("zero embeddings and weights give a zero state") {
  vqa::VqaModel model(tiny_config(), 7);
  for (auto& [name, t] : model.params())
    if (name.starts_with("q."))
      for (auto& v : t.mutable_values()) v = 0.0;
  const std::vector<int> tok{1, 4, 2};
  const auto state = model.encode_question(tok, 3);
  for (double v : state.values()) CHECK(v == 0.0);
}

TEST_CASE("question errors") {
  const vqa::VqaModel model(tiny_config(), 8);
  const std::vector<int> empty, bad{1, 6}, ragged{1, 2, 3};
  CHECK_THROWS_AS(model.encode_question(empty, 1), std::invalid_argument);
  CHECK_THROWS_AS(model.encode_question(bad, 2), std::invalid_argument);
  CHECK_THROWS_AS(model.encode_question(ragged, 2), ShapeError);
}

TEST_CASE("identical region features give uniform attention") {
  const vqa::VqaModel model({}, 10);
  std::mt19937_64 rng(1);
  const auto one = random_tensor({1, 1, 32}, rng);
  std::vector<double> rows;
  for (int k = 0; k < 49; ++k) rows.insert(rows.end(), one.values().begin(), one.values().end());
  const auto att = model.attend(Tensor({1, 49, 32}, rows), random_tensor({1, 32}, rng));
  for (double a : att.alpha.values()) CHECK(a == doctest::Approx(1.0 / 49).epsilon(1e-12));
}

TEST_CASE("G=2 attention matches a hand-computed softmax") {
  auto c = tiny_config();
  c.feature_dim = c.recurrent_hidden = 2;
  c.attention_dim = 1;
  vqa::VqaModel model(c, 11);
  set(model, "att.wi", {0.5, -1.0});
  set(model, "att.wq", {1.0, 0.25});
  set(model, "att.b", {0.1});
  set(model, "att.wp", {2.0});
  const std::vector<double> g{1, 0, 0, 1, 1, 1, -1, 0.5};
  const Tensor regions({1, 4, 2}, g), question({1, 2}, std::vector<double>{0.2, -0.4});
  const auto att = model.attend(regions, question);

  const double q_term = 1.0 * 0.2 + 0.25 * -0.4 + 0.1;
  double s[4], z = 0.0;
  for (int k = 0; k < 4; ++k) z += s[k] = std::exp(2.0 * std::tanh(0.5 * g[2 * k] - 1.0 * g[2 * k + 1] + q_term));
  for (int k = 0; k < 4; ++k) CHECK(att.alpha.value(k) == doctest::Approx(s[k] / z).epsilon(1e-14));
  // g_f = sum_k alpha_k g_k + g_q
  for (int j = 0; j < 2; ++j) {
    double expect = question.value(j);
    for (int k = 0; k < 4; ++k) expect += s[k] / z * g[2 * k + j];
    CHECK(att.fused.value(j) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("attention rows sum to one") {
  const vqa::VqaModel model({}, 12);
  std::mt19937_64 rng(3);
  const auto att = model.attend(random_tensor({3, 49, 32}, rng, -3, 3), random_tensor({3, 32}, rng));
  for (std::size_t n = 0; n < 3; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < 49; ++k) {
      CHECK(att.alpha.value(n * 49 + k) >= 0.0);
      s += att.alpha.value(n * 49 + k);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax is invariant to a constant score shift") {
  std::mt19937_64 rng(4);
  const auto x = random_tensor({2, 9}, rng, -4, 4);
  const auto a = softmax(x), b = softmax(add_scalar(x, 17.5));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.value(i) == doctest::Approx(b.value(i)).epsilon(1e-12));
}

TEST_CASE("classifier outputs") {
  const Tensor zero({1, 4});
  const auto lp = log_softmax(zero);
  for (double v : lp.values()) CHECK(std::exp(v) == doctest::Approx(0.25).epsilon(1e-15));
  const std::vector<int> label{2};
  CHECK(cross_entropy(zero, label).item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(std::log(4.0) == doctest::Approx(1.3863).epsilon(1e-4));

  const vqa::VqaModel model({}, 13);
  std::mt19937_64 rng(5);
  const auto out = model.classify(random_tensor({2, 32}, rng));
  CHECK(out.shape() == Shape{2, 11});
  for (std::size_t n = 0; n < 2; ++n) {
    double s = 0.0;
    for (std::size_t j = 0; j < 11; ++j) s += std::exp(out.value(n * 11 + j));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  const auto favored = log_softmax(Tensor({1, 3}, std::vector<double>{0.0, 5.0, -1.0}));
  CHECK(std::max_element(favored.values().begin(), favored.values().end()) - favored.values().begin() == 1);
}

TEST_CASE("end-to-end classification loss passes grad_check on a 2-sample batch") {
  const vqa::VqaModel model(tiny_config(), 14);
  std::mt19937_64 rng(6);
  const auto images = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  const std::vector<int> tokens{1, 2, 3, 4, 5, 1}, labels{0, 3};
  for (const auto& [name, value] : model.params()) {
    INFO(name);
    auto f = [&, name = name](const Tensor& t) {
      auto probe = model.clone();
      for (auto& [n, p] : probe.params())
        if (n == name) p = t;
      return cross_entropy(probe.forward(images, tokens, 3).logits, labels);
    };
    CHECK(grad_check(f, value.detach()) < 1e-4);
  }
}
