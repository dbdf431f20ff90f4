// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criteria 4-8 train the full desk-scale protocol and take
// on the order of half an hour on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attn_tutor/adversary.hpp"
#include "attn_tutor/grad_suite.hpp"
#include "attn_tutor/metrics.hpp"
#include "attn_tutor/synthdata.hpp"
#include "attn_tutor/trainer.hpp"
#include "oracles.hpp"

using namespace attn_tutor;
using train::Variant;

namespace {

// Tolerances.
constexpr double kGradTolerance = 1e-4;          // criterion 1
constexpr std::size_t kGradProbes = 20;
constexpr double kGradRuntimeSeconds = 120.0;
constexpr double kMetricTolerance = 1e-9;        // criterion 2
constexpr double kSinkhornRelative = 0.05;
constexpr double kAnchorTolerance = 1e-12;       // criterion 3
constexpr double kPaanMargin = 0.05;             // criterion 4
constexpr double kRunSeconds = 15 * 60.0;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};
const std::vector<double> kEtas{0.0, 0.1, 0.01, 1.0, 10.0, 100.0};

int failures = 0;

void verdict(int id, bool ok, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s  (%s)\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_gradient_suite(kGradProbes, 1);
  const double elapsed = seconds_since(start);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : results) {
    if (r.max_error >= worst) worst = r.max_error, worst_name = r.name;
  }
  verdict(1, worst < kGradTolerance && elapsed < kGradRuntimeSeconds, "gradient checks",
          fmt("%zu cases x %zu probes, worst %.2e (%s), %.1f s", results.size(), kGradProbes, worst, worst_name.c_str(),
              elapsed));
}

void criterion_metrics() {
  std::mt19937_64 rng(2024);
  std::size_t rank_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto a = oracle::tied_map(rng), b = oracle::tied_map(rng);
    rank_mismatch += metrics::rank_correlation(a, b) != oracle::spearman(a, b);
  }
  double symmetry = 0.0, triangle = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto a = oracle::random_map(rng, 16), b = oracle::random_map(rng, 16), c = oracle::random_map(rng, 16);
    const double ab = metrics::emd(a, b, 4), bc = metrics::emd(b, c, 4), ac = metrics::emd(a, c, 4);
    symmetry = std::max(symmetry, std::abs(ab - metrics::emd(b, a, 4)));
    triangle = std::max(triangle, ac - ab - bc);
  }
  // Hand-solvable transports on a 3x3 grid.
  auto point = [](std::size_t cell) {
    std::vector<double> m(9, 0.0);
    m[cell] = 1.0;
    return m;
  };
  std::vector<double> split(9, 0.0);
  split[3] = split[5] = 0.5;
  const bool hand = metrics::emd(point(0), point(1), 3) == 1.0 && metrics::emd(point(0), point(2), 3) == 2.0 &&
                    metrics::emd(split, point(4), 3) == 1.0 && metrics::emd(point(0), point(8), 3) == std::sqrt(8.0);
  double sinkhorn_worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto a = oracle::random_map(rng, 49), b = oracle::random_map(rng, 49);
    const double exact = metrics::emd(a, b, 7);
    sinkhorn_worst = std::max(sinkhorn_worst, std::abs(metrics::sinkhorn_emd(a, b, 7, 0.01) - exact) / exact);
  }
  verdict(2, rank_mismatch == 0 && symmetry <= kMetricTolerance && triangle <= kMetricTolerance && hand &&
                 sinkhorn_worst < kSinkhornRelative,
          "metric oracles",
          fmt("rank mismatches %zu/1000, emd asymmetry %.1e, triangle excess %.1e, hand cases %s, sinkhorn rel err %.3f",
              rank_mismatch, symmetry, triangle, hand ? "exact" : "wrong", sinkhorn_worst));
}

struct SeedRuns {
  std::map<std::string, train::RunReport> runs;  // by label / "eta=<v>"
};

void criterion_anchors(const train::RunReport& baseline, const train::RunReport& eta_zero) {
  const Tensor half(Shape{4}, 0.5);
  const double d_loss = adversary::minimax_losses(half, half).d_loss;
  const std::vector<double> p{1, 0, 0, 0}, q{0, 0, 0, 1};
  const double js = adversary::js_divergence(p, q);
  const std::vector<double> uniform(196, 1.0 / 196.0);
  const double h = metrics::entropy(uniform);
  const bool bitwise = baseline.final_checkpoint == eta_zero.final_checkpoint;
  verdict(3,
          std::abs(d_loss - 2 * std::log(2.0)) < kAnchorTolerance && std::abs(js - std::log(2.0)) < kAnchorTolerance &&
              std::abs(h - std::log(196.0)) < kAnchorTolerance && bitwise,
          "closed-form anchors",
          fmt("d_loss %.15f, js %.15f, entropy %.15f, eta=0 checkpoint %s baseline", d_loss, js, h,
              bitwise ? "==" : "!="));
}

double mean_of(const std::vector<SeedRuns>& seeds, const std::string& key, double metrics::MetricReport::*field) {
  double total = 0.0;
  for (const auto& s : seeds) total += s.runs.at(key).last().metrics.*field;
  return total / static_cast<double>(seeds.size());
}

void criterion_reproducibility() {
  synth::DatasetSpec spec;
  spec.n_samples = 100;
  const auto data = synth::generate(spec);
  train::TrainConfig config;
  config.warm_epochs = 1;
  config.adv_epochs = 2;
  auto run = [&] {
    const auto warm = train::warm_start(train::initial_state(data, config), data, config).state;
    auto report = train::train_adversarial(warm, data, config);
    std::ostringstream tsv;
    train::write_report_tsv(tsv, report);
    return std::pair{report.final_checkpoint, tsv.str()};
  };
  const auto a = run(), b = run();
  const bool identical = a == b;

  const auto full = synth::generate(synth::DatasetSpec{});
  const auto bytes = synth::encode_container(full);
  const bool round_trip = synth::encode_container(synth::decode_container(bytes)) == bytes;
  bool rejected = false;
  auto corrupt = bytes;
  corrupt[corrupt.size() / 3] ^= 0x40;
  try {
    (void)synth::decode_container(corrupt);
  } catch (const synth::ContainerError& e) {
    rejected = std::string(e.what()).find("checksum") != std::string::npos;
  }
  verdict(9, identical && round_trip && rejected, "reproducibility and formats",
          fmt("checkpoint+tsv %s, container round trip %s, corruption %s", identical ? "identical" : "differ",
              round_trip ? "exact" : "lossy", rejected ? "rejected by checksum" : "not rejected"));
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_metrics();

  const auto data = synth::generate(synth::DatasetSpec{});
  std::vector<SeedRuns> seeds;
  double slowest = 0.0;
  for (auto seed : kSeeds) {
    SeedRuns s;
    train::TrainConfig base;
    base.seed = seed;
    const auto warm = train::warm_start(train::initial_state(data, base), data, base).state;
    auto run = [&](const std::string& key, const std::function<void(train::TrainConfig&)>& edit) {
      auto config = base;
      edit(config);
      const auto start = std::chrono::steady_clock::now();
      s.runs.emplace(key, train::train_adversarial(warm, data, config));
      const double elapsed = seconds_since(start);
      slowest = std::max(slowest, elapsed);
      const auto& m = s.runs.at(key).last().metrics;
      std::fprintf(stderr, "seed %llu %-12s rc %.4f emd %.4f entropy %.4f acc %.4f  %.0f s\n",
                   static_cast<unsigned long long>(seed), key.c_str(), m.rank_correlation, m.emd, m.entropy, m.accuracy,
                   elapsed);
    };
    run("baseline", [](auto& c) { c.variant = Variant::baseline; });
    run("paan", [](auto& c) { c.variant = Variant::paan; });
    run("aan", [](auto& c) { c.variant = Variant::aan; });
    run("mse", [](auto& c) { c.variant = Variant::mse; });
    run("paan_rise", [](auto& c) { c.explainer = train::ExplainerKind::rise; });
    run("paan_ran07", [](auto& c) {
      c.explainer = train::ExplainerKind::random;
      c.random_overlap = 0.07;
    });
    run("paan_ran20", [](auto& c) {
      c.explainer = train::ExplainerKind::random;
      c.random_overlap = 0.20;
    });
    for (double eta : kEtas) {
      if (eta == base.eta) continue;  // the paan run
      run(fmt("eta=%g", eta), [eta](auto& c) { c.eta = eta; });
    }
    s.runs.emplace(fmt("eta=%g", base.eta), s.runs.at("paan"));
    seeds.push_back(std::move(s));
  }

  criterion_anchors(seeds[0].runs.at("baseline"), seeds[0].runs.at("eta=0"));

  using R = metrics::MetricReport;
  auto rc = [&](const std::string& key) { return mean_of(seeds, key, &R::rank_correlation); };
  auto emd = [&](const std::string& key) { return mean_of(seeds, key, &R::emd); };

  verdict(4,
          rc("paan") > rc("aan") && rc("aan") > rc("baseline") && rc("paan") - rc("baseline") >= kPaanMargin &&
              rc("mse") > rc("baseline") && emd("paan") < emd("baseline") && slowest < kRunSeconds,
          "RC ordering paan > aan > baseline, mse > baseline, EMD inverse",
          fmt("rc paan %.4f aan %.4f mse %.4f baseline %.4f; emd paan %.4f baseline %.4f; slowest run %.0f s", rc("paan"),
              rc("aan"), rc("mse"), rc("baseline"), emd("paan"), emd("baseline"), slowest));

  verdict(5, rc("paan") >= rc("paan_rise"), "Grad-CAM supervision >= RISE supervision",
          fmt("rc gradcam %.4f rise %.4f", rc("paan"), rc("paan_rise")));

  verdict(6, rc("paan_ran07") < rc("baseline") && rc("paan_ran07") < rc("paan_ran20") && rc("paan_ran20") < rc("paan"),
          "random-mask controls",
          fmt("rc ran07 %.4f ran20 %.4f gradcam %.4f baseline %.4f", rc("paan_ran07"), rc("paan_ran20"), rc("paan"),
              rc("baseline")));

  {
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      for (const char* key : {"paan", "aan", "mse"}) {
        const auto h = train::smooth(seeds[i].runs.at(key).entropy_series(), 5);
        const double e5 = h.at(5), e15 = h.at(15), e30 = h.at(30);
        const bool run_ok = e30 < e5 && (e5 - e15) > (e15 - e30);
        ok = ok && run_ok;
        detail += fmt("%s%s/%llu %.3f>%.3f>%.3f%s", detail.empty() ? "" : ", ", key,
                      static_cast<unsigned long long>(kSeeds[i]), e5, e15, e30, run_ok ? "" : "!");
      }
    }
    verdict(7, ok, "smoothed entropy decays, faster early than late", "entropy at epochs 5>15>30: " + detail);
  }

  {
    double best_rc = -INFINITY, best_eta = 0.0;
    std::string detail;
    for (double eta : kEtas) {
      const double v = rc(fmt("eta=%g", eta));
      detail += fmt("%s%g:%.4f", detail.empty() ? "" : " ", eta, v);
      if (v > best_rc) best_rc = v, best_eta = eta;
    }
    verdict(8, best_eta != 0.0 && best_eta != 100.0, "best eta is interior",
            fmt("best eta %g; rc by eta %s", best_eta, detail.c_str()));
  }

  criterion_reproducibility();

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
