#include <cmath>
#include <sstream>

#include "attn_tutor/ops.hpp"
#include "attn_tutor/trainer.hpp"
#include "doctest.h"

using namespace attn_tutor;
using namespace attn_tutor::train;

namespace {

const synth::Dataset& tiny_data() {
  static const synth::Dataset data = [] {
    synth::DatasetSpec spec;
    spec.n_samples = 80;
    return synth::generate(spec);
  }();
  return data;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.warm_epochs = 1;
  c.adv_epochs = 2;
  return c;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, p] : a) {
    const auto x = p.values(), y = b.get(name).values();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config text, set and fingerprint") {
  TrainConfig c;
  const auto before = c.fingerprint();
  for (const auto& [k, v] : parse_config_text("# comment\neta = 1\nvariant = mmd  # trailing\neta=0.5\n")) c.set(k, v);
  CHECK(c.eta == 0.5);
  CHECK(c.variant == Variant::mmd);
  CHECK(c.fingerprint() != before);
  TrainConfig d;
  for (const auto& [k, v] : c.to_map()) d.set(k, v);
  CHECK(d.canonical() == c.canonical());
  CHECK(d.fingerprint() == c.fingerprint());

  CHECK_THROWS_WITH_AS(c.set("etaa", "1"), doctest::Contains("etaa"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("eta", "ten"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("variant", "gan"), std::invalid_argument);
  c.eta = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.d_steps_per_g_step = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.lr_main = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("row labels") {
  TrainConfig c;
  CHECK(c.label() == "paan");
  c.explainer = ExplainerKind::random;
  CHECK(c.label() == "paan_ran07");
  c.explainer = ExplainerKind::rise;
  c.variant = Variant::aan;
  CHECK(c.label() == "aan_rise");
  c.variant = Variant::baseline;
  CHECK(c.label() == "baseline");
}

TEST_CASE("held-out split takes every fifth sample") {
  const auto s = split_dataset(20, 0.2);
  CHECK(s.held_out == std::vector<std::size_t>{4, 9, 14, 19});
  CHECK(s.train.size() == 16);
}

TEST_CASE("smoothing is a trailing mean") {
  CHECK(smooth({1, 2, 3, 4, 5, 6}, 3) == std::vector<double>{1, 1.5, 2, 3, 4, 5});
}

TEST_CASE("optimizer closed forms") {
  ParamStore params;
  params.add("w", Tensor(Shape{2}, std::vector<double>{1.0, -2.0}, true));
  auto set_grad = [&](double g0, double g1) {
    auto g = params.get("w").mutable_grad();
    g[0] = g0;
    g[1] = g1;
  };
  SUBCASE("sgd with momentum") {
    Sgd sgd(0.1, 0.9);
    set_grad(1.0, 2.0);
    sgd.step(params);
    set_grad(1.0, 2.0);
    sgd.step(params);
    // v1 = g, v2 = 0.9 g + g
    const auto w = params.get("w").values();
    CHECK(std::abs(w[0] - (1.0 - 0.1 * (1.0 + 1.9))) <= 1e-12);
    CHECK(std::abs(w[1] - (-2.0 - 0.1 * (2.0 + 3.8))) <= 1e-12);
  }
  SUBCASE("adam") {
    Adam adam(0.01);
    set_grad(0.5, -3.0);
    adam.step(params);
    // After one step the bias-corrected ratio is sign(g) up to eps.
    auto w = params.get("w").values();
    CHECK(std::abs(w[0] - (1.0 - 0.01 * 0.5 / (0.5 + 1e-8))) <= 1e-12);
    CHECK(std::abs(w[1] - (-2.0 + 0.01 * 3.0 / (3.0 + 1e-8))) <= 1e-12);
    set_grad(1.0, -3.0);
    adam.step(params);
    const double m = 0.9 * 0.1 * 0.5 + 0.1 * 1.0, v = 0.999 * 0.001 * 0.25 + 0.001 * 1.0;
    const double expected = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8) - 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    w = params.get("w").values();
    CHECK(std::abs(w[0] - expected) <= 1e-12);
    CHECK(adam.steps() == 2);
  }
  SUBCASE("wrapper buffers resume the same trajectory") {
    ParamStore twin = params.clone();
    Optimizer a(OptimizerKind::adam, 0.01), b(OptimizerKind::adam, 0.01);
    set_grad(0.5, -3.0);
    a.step(params);
    twin.get("w").mutable_grad()[0] = 0.5;
    twin.get("w").mutable_grad()[1] = -3.0;
    b.step(twin);
    Optimizer resumed(OptimizerKind::adam, 0.01, b.buffers(), 1);
    set_grad(1.0, 1.0);
    a.step(params);
    twin.get("w").mutable_grad()[0] = 1.0;
    twin.get("w").mutable_grad()[1] = 1.0;
    resumed.step(twin);
    CHECK(same_params(params, twin));
    ParamStore bad;
    bad.add("bogus.w", Tensor(Shape{1}));
    CHECK_THROWS_AS(Optimizer(OptimizerKind::adam, 0.01, bad), std::invalid_argument);
  }
  CHECK(parse_optimizer("sgd") == OptimizerKind::sgd);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), std::invalid_argument);
}

TEST_CASE("warm start") {
  const auto& data = tiny_data();
  auto config = tiny_config();
  const auto init = initial_state(data, config);
  config.warm_epochs = 0;
  const auto none = warm_start(init.clone(), data, config);
  CHECK(same_params(none.state.model.params(), init.model.params()));
  CHECK(none.validation_accuracy.empty());
  config.warm_epochs = 2;
  const auto two = warm_start(init.clone(), data, config);
  CHECK(two.validation_accuracy.size() == 2);
  CHECK_FALSE(same_params(two.state.model.params(), init.model.params()));
  CHECK(two.state.steps > 0);
}

TEST_CASE("state encoding round trips") {
  const auto& data = tiny_data();
  const auto config = tiny_config();
  const auto warm = warm_start(initial_state(data, config), data, config).state;
  const auto bytes = encode_state(warm);
  const auto back = decode_state(bytes, warm.model.config());
  CHECK(back.steps == warm.steps);
  CHECK(same_params(back.model.params(), warm.model.params()));
  CHECK(same_params(back.optimizer, warm.optimizer));
  CHECK(encode_state(back) == bytes);
}

TEST_CASE("zero eta reproduces the baseline bit for bit") {
  const auto& data = tiny_data();
  auto config = tiny_config();
  const auto warm = warm_start(initial_state(data, config), data, config).state;
  config.variant = Variant::baseline;
  const auto base = train_adversarial(warm, data, config);
  for (auto v : {Variant::paan, Variant::aan, Variant::mse}) {
    config.variant = v;
    config.eta = 0.0;
    const auto run = train_adversarial(warm, data, config);
    CHECK(run.final_checkpoint == base.final_checkpoint);
  }
}

TEST_CASE("runs are reproducible and log every epoch") {
  const auto& data = tiny_data();
  const auto config = tiny_config();
  const auto warm = warm_start(initial_state(data, config), data, config).state;
  const auto a = train_adversarial(warm, data, config);
  const auto b = train_adversarial(warm, data, config);
  CHECK(a.final_checkpoint == b.final_checkpoint);
  CHECK(a.discriminator_checkpoint == b.discriminator_checkpoint);
  CHECK_FALSE(a.discriminator_checkpoint.empty());
  std::ostringstream ta, tb;
  write_report_tsv(ta, a);
  write_report_tsv(tb, b);
  CHECK(ta.str() == tb.str());
  REQUIRE(a.epochs.size() == config.adv_epochs + 1);
  for (std::size_t i = 0; i < a.epochs.size(); ++i) CHECK(a.epochs[i].epoch == i);
  CHECK(a.last().d_loss > 0.0);
  CHECK(std::isfinite(a.last().chi2_term));
}

TEST_CASE("divergence aborts with the last good checkpoint") {
  const auto& data = tiny_data();
  auto config = tiny_config();
  config.optimizer = OptimizerKind::sgd;
  config.lr_main = 1e200;
  config.clip_norm = 0.0;
  try {
    (void)warm_start(initial_state(data, config), data, config);
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(std::string(e.what()).find("warm_start") != std::string::npos);
    CHECK_FALSE(e.last_good_checkpoint().empty());
  }
}

TEST_CASE("eta sweep rows follow the requested order") {
  const auto& data = tiny_data();
  auto config = tiny_config();
  config.adv_epochs = 1;
  const auto warm = warm_start(initial_state(data, config), data, config).state;
  const auto one = eta_sweep(warm, data, config, {0.0, 1.0}, 1);
  const auto two = eta_sweep(warm, data, config, {0.0, 1.0}, 2);
  REQUIRE(one.size() == 2);
  CHECK(one[0].eta == 0.0);
  CHECK(one[1].eta == 1.0);
  CHECK(one[1].rank_correlation == two[1].rank_correlation);
  config.variant = Variant::baseline;
  CHECK(one[0].rank_correlation == train_adversarial(warm, data, config).last().metrics.rank_correlation);
}

TEST_CASE("one optimizer step on a convex quadratic matches the closed form") {
  // f(w) = 1/2 sum a_i w_i^2, gradient a_i w_i.
  const std::vector<double> a{0.5, 2.0, 3.0}, w0{1.0, -0.5, 0.25};
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    ParamStore params;
    params.add("w", Tensor(Shape{3}, w0, true));
    const auto loss = scale(sum(mul(Tensor(Shape{3}, a), square(params.get("w")))), 0.5);
    loss.backward();
    Optimizer opt(kind, 0.1);
    opt.step(params);
    const auto w = params.get("w").values();
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = a[i] * w0[i];
      // First step: SGD velocity is g; Adam's bias-corrected ratio is g / (|g| + eps).
      const double expected = kind == OptimizerKind::sgd ? w0[i] - 0.1 * g : w0[i] - 0.1 * g / (std::abs(g) + 1e-8);
      CHECK(std::abs(w[i] - expected) <= 1e-12);
    }
  }
}
