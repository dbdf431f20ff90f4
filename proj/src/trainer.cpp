#include "attn_tutor/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "attn_tutor/checkpoint.hpp"
#include "attn_tutor/explainers.hpp"
#include "attn_tutor/matchers.hpp"
#include "attn_tutor/ops.hpp"
#include "attn_tutor/rng.hpp"
#include "attn_tutor/workers.hpp"

namespace attn_tutor::train {

namespace {

constexpr const char* kVariantNames[] = {"baseline", "mse", "mmd", "coral", "aan", "paan"};
constexpr const char* kExplainerNames[] = {"gradcam", "rise", "random"};

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (text.empty() || text[0] == '-' || end != text.c_str() + text.size() || errno != 0) {
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + text + "'");
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool all_finite(const ParamStore& params) {
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad())
      if (!std::isfinite(g)) return false;
  }
  return true;
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> indices, std::uint64_t seed) {
  Rng rng(seed);
  std::shuffle(indices.begin(), indices.end(), rng);
  return indices;
}

std::string abort_message(const std::string& phase, std::size_t epoch, std::size_t batch, const std::string& term, double value) {
  std::ostringstream out;
  out << phase << ": non-finite " << term << " (" << value << ") at epoch " << epoch << ", batch " << batch;
  return out.str();
}

}  // namespace

std::string to_string(Variant v) { return kVariantNames[static_cast<int>(v)]; }
std::string to_string(ExplainerKind e) { return kExplainerNames[static_cast<int>(e)]; }

Variant parse_variant(const std::string& text) {
  for (int i = 0; i < 6; ++i)
    if (text == kVariantNames[i]) return static_cast<Variant>(i);
  throw std::invalid_argument("config: unknown variant '" + text + "' (baseline, mse, mmd, coral, aan, paan)");
}

ExplainerKind parse_explainer(const std::string& text) {
  for (int i = 0; i < 3; ++i)
    if (text == kExplainerNames[i]) return static_cast<ExplainerKind>(i);
  throw std::invalid_argument("config: unknown explainer '" + text + "' (gradcam, rise, random)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (!(eta >= 0.0)) fail("eta must be >= 0");
  if (!(lr_main > 0.0)) fail("lr_main must be > 0");
  if (!(lr_disc > 0.0)) fail("lr_disc must be > 0");
  if (d_steps_per_g_step < 1) fail("d_steps_per_g_step must be >= 1");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (!(lambda_js >= 0.0) || !(lambda_chi2 >= 0.0)) fail("lambda_js and lambda_chi2 must be >= 0");
  if (!(clip_norm >= 0.0)) fail("clip_norm must be >= 0");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) fail("holdout_fraction must lie in (0, 1)");
  if (!(random_overlap >= 0.0 && random_overlap <= 1.0)) fail("random_overlap must lie in [0, 1]");
  if (rise_masks < 1) fail("rise_masks must be >= 1");
  if (!(rise_keep_prob > 0.0 && rise_keep_prob < 1.0)) fail("rise_keep_prob must lie in (0, 1)");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"adv_epochs", std::to_string(adv_epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"clip_norm", format_double(clip_norm)},
      {"d_steps_per_g_step", std::to_string(d_steps_per_g_step)},
      {"eta", format_double(eta)},
      {"explainer", to_string(explainer)},
      {"generator_form", generator_form == adversary::GeneratorForm::saturating ? "saturating" : "non_saturating"},
      {"holdout_fraction", format_double(holdout_fraction)},
      {"lambda_chi2", format_double(lambda_chi2)},
      {"lambda_js", format_double(lambda_js)},
      {"lr_disc", format_double(lr_disc)},
      {"optimizer", to_string(optimizer)},
      {"lr_main", format_double(lr_main)},
      {"random_overlap", format_double(random_overlap)},
      {"rise_keep_prob", format_double(rise_keep_prob)},
      {"rise_masks", std::to_string(rise_masks)},
      {"seed", std::to_string(seed)},
      {"variant", to_string(variant)},
      {"warm_epochs", std::to_string(warm_epochs)},
  };
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "eta") eta = parse_double(key, value);
  else if (key == "variant") variant = parse_variant(value);
  else if (key == "explainer") explainer = parse_explainer(value);
  else if (key == "random_overlap") random_overlap = parse_double(key, value);
  else if (key == "warm_epochs") warm_epochs = parse_unsigned(key, value);
  else if (key == "adv_epochs") adv_epochs = parse_unsigned(key, value);
  else if (key == "batch_size") batch_size = parse_unsigned(key, value);
  else if (key == "lr_main") lr_main = parse_double(key, value);
  else if (key == "lr_disc") lr_disc = parse_double(key, value);
  else if (key == "optimizer") {
    try {
      optimizer = parse_optimizer(value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string("config: ") + e.what());
    }
  }
  else if (key == "d_steps_per_g_step") d_steps_per_g_step = parse_unsigned(key, value);
  else if (key == "lambda_js") lambda_js = parse_double(key, value);
  else if (key == "lambda_chi2") lambda_chi2 = parse_double(key, value);
  else if (key == "clip_norm") clip_norm = parse_double(key, value);
  else if (key == "holdout_fraction") holdout_fraction = parse_double(key, value);
  else if (key == "rise_masks") rise_masks = parse_unsigned(key, value);
  else if (key == "rise_keep_prob") rise_keep_prob = parse_double(key, value);
  else if (key == "seed") seed = parse_unsigned(key, value);
  else if (key == "generator_form") {
    if (value == "non_saturating") generator_form = adversary::GeneratorForm::non_saturating;
    else if (value == "saturating") generator_form = adversary::GeneratorForm::saturating;
    else throw std::invalid_argument("config: generator_form must be non_saturating or saturating, got '" + value + "'");
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

std::string TrainConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t TrainConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string TrainConfig::label() const {
  if (variant == Variant::baseline) return "baseline";
  std::string out = to_string(variant);
  if (explainer == ExplainerKind::rise) out += "_rise";
  if (explainer == ExplainerKind::random) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_ran%02d", static_cast<int>(std::lround(random_overlap * 100.0)));
    out += buf;
  }
  return out;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(number) + " is not 'key = value': " + line);
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

Split split_dataset(std::size_t n, double holdout_fraction) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw std::invalid_argument("split: holdout_fraction must lie in (0, 1)");
  const auto period = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(1.0 / holdout_fraction)));
  Split split;
  for (std::size_t i = 0; i < n; ++i) (i % period == period - 1 ? split.held_out : split.train).push_back(i);
  return split;
}

vqa::VqaModelConfig model_config_for(const synth::Dataset& data) {
  vqa::VqaModelConfig c;
  c.image_size = data.image_size;
  c.region_grid = data.grid;
  c.question_vocab = synth::kVocabSize;
  c.answer_classes = synth::kAnswerClasses;
  return c;
}

ModelState ModelState::clone() const { return {model.clone(), optimizer.clone(), steps}; }

ModelState initial_state(const synth::Dataset& data, const TrainConfig& config) {
  return {vqa::VqaModel(model_config_for(data), derive_seed(config.seed, {0})), ParamStore{}, 0};
}

std::string encode_state(const ModelState& state) {
  ParamStore all = state.model.params().snapshot();
  for (const auto& [name, v] : state.optimizer) all.add("opt." + name, v.detach());
  all.add("opt_steps", Tensor(Shape{1}, std::vector<double>{static_cast<double>(state.steps)}));
  return encode_checkpoint(all);
}

ModelState decode_state(const std::string& bytes, const vqa::VqaModelConfig& config) {
  const auto all = decode_checkpoint(bytes);
  ModelState state{vqa::VqaModel(config, 0), ParamStore{}, 0};
  for (const auto& [name, value] : all) {
    if (name.starts_with("opt.")) {
      state.optimizer.add(name.substr(4), value.detach());
    } else if (name == "opt_steps") {
      state.steps = static_cast<std::size_t>(value.item());
    } else if (!state.model.params().contains(name)) {
      throw CheckpointError("checkpoint: unexpected section '" + name + "'");
    }
  }
  ParamStore model_part;
  for (const auto& [name, value] : all)
    if (!name.starts_with("opt") ) model_part.add(name, value);
  if (model_part.size() != state.model.params().size()) throw CheckpointError("checkpoint: model sections missing");
  state.model.params().assign(model_part);
  return state;
}

TrainingAborted::TrainingAborted(std::string diagnostics, std::string last_good_checkpoint)
    : std::runtime_error("training aborted: " + diagnostics),
      diagnostics_(std::move(diagnostics)),
      checkpoint_(std::move(last_good_checkpoint)) {}

std::vector<double> RunReport::entropy_series() const {
  std::vector<double> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(e.metrics.entropy);
  return out;
}

std::vector<double> smooth(const std::vector<double>& series, std::size_t window) {
  if (window == 0) throw std::invalid_argument("smooth: window must be >= 1");
  std::vector<double> out(series.size());
  double running = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    running += series[i];
    if (i >= window) running -= series[i - window];
    out[i] = running / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

Predictions predict(const vqa::VqaModel& model, const synth::Dataset& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size) {
  const auto frozen = model.snapshot();
  Predictions out;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, indices.size() - start);
    const auto batch = synth::make_batch(data, std::span(indices).subspan(start, n));
    const auto f = frozen.forward(batch.images, batch.tokens, data.question_length);
    const auto alpha = f.alpha.values();
    out.attention.insert(out.attention.end(), alpha.begin(), alpha.end());
    const std::size_t classes = f.logits.size(1);
    const auto logits = f.logits.values();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = logits.subspan(i * classes, classes);
      out.answers.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

metrics::MetricReport evaluate(const vqa::VqaModel& model, const synth::Dataset& data, const std::vector<std::size_t>& indices,
                               std::size_t batch_size) {
  const auto pred = predict(model, data, indices, batch_size);
  const std::size_t k = data.grid * data.grid;
  std::vector<double> reference;
  std::vector<int> labels;
  reference.reserve(indices.size() * k);
  for (auto i : indices) {
    const auto& s = data.samples.at(i);
    reference.insert(reference.end(), s.gt_attention.begin(), s.gt_attention.end());
    labels.push_back(s.answer);
  }
  return metrics::evaluate_maps(pred.attention, reference, data.grid, pred.answers, labels);
}

WarmStartResult warm_start(ModelState state, const synth::Dataset& data, const TrainConfig& config) {
  config.validate();
  const auto split = split_dataset(data.size(), config.holdout_fraction);
  Optimizer opt(config.optimizer, config.lr_main, state.optimizer, state.steps);
  WarmStartResult result{std::move(state), {}};
  auto& model = result.state.model;
  for (std::size_t epoch = 0; epoch < config.warm_epochs; ++epoch) {
    const auto order = shuffled(split.train, derive_seed(config.seed, {1, epoch}));
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const auto batch = synth::make_batch(data, std::span(order).subspan(start, n));
      const auto f = model.forward(batch.images, batch.tokens, data.question_length);
      const auto loss = cross_entropy(f.logits, batch.labels);
      if (!std::isfinite(loss.item())) {
        result.state.optimizer = opt.buffers();
        throw TrainingAborted(abort_message("warm_start", epoch, batch_no, "classification loss", loss.item()),
                              encode_state(result.state));
      }
      model.params().zero_grad();
      loss.backward();
      if (!all_finite(model.params())) {
        result.state.optimizer = opt.buffers();
        throw TrainingAborted(abort_message("warm_start", epoch, batch_no, "gradient", NAN), encode_state(result.state));
      }
      clip_gradients(model.params(), config.clip_norm);
      opt.step(model.params());
      ++result.state.steps;
    }
    result.validation_accuracy.push_back(evaluate(model, data, split.held_out).accuracy);
  }
  result.state.optimizer = opt.buffers();
  return result;
}

RunReport train_adversarial(const ModelState& warm, const synth::Dataset& data, const TrainConfig& config, std::ostream* progress) {
  config.validate();
  auto state = warm.clone();
  auto& model = state.model;
  const auto split = split_dataset(data.size(), config.holdout_fraction);
  const std::size_t grid = data.grid, k = grid * grid;
  const bool adversarial = config.variant == Variant::aan || config.variant == Variant::paan;
  const bool active = config.variant != Variant::baseline && config.eta > 0.0;

  Optimizer opt(config.optimizer, config.lr_main, state.optimizer, state.steps);
  std::vector<std::vector<double>> adv_grad;
  std::optional<adversary::Discriminator> disc;
  // Lower momentum for the discriminator keeps the two players from
  // overshooting each other.
  Sgd disc_opt(config.lr_disc, 0.5);
  if (adversarial) {
    disc.emplace(config.variant == Variant::aan ? adversary::DiscriminatorKind::global : adversary::DiscriminatorKind::pixel,
                 grid, derive_seed(config.seed, {3}));
  }
  match::MatchVariant matcher;
  if (config.variant == Variant::mse) matcher.kind = match::MatchKind::mse;
  if (config.variant == Variant::mmd) matcher.kind = match::MatchKind::mmd;
  if (config.variant == Variant::coral) matcher.kind = match::MatchKind::coral;

  // Random-control maps are fixed per sample.
  std::vector<std::vector<double>> random_maps;
  if (active && config.explainer == ExplainerKind::random) {
    random_maps.resize(data.size());
    for (auto i : split.train) {
      const GridMap ref{grid, data.samples[i].gt_attention, MapSource::reference};
      random_maps[i] = explain::random_explanation(ref, config.random_overlap, derive_seed(config.seed, {5, i})).values;
    }
  }

  RunReport report;
  report.variant = config.label();
  report.fingerprint = config.fingerprint();
  {
    EpochRecord zero;
    zero.metrics = evaluate(model, data, split.held_out);
    report.epochs.push_back(zero);
  }

  for (std::size_t epoch = 1; epoch <= config.adv_epochs; ++epoch) {
    const auto order = shuffled(split.train, derive_seed(config.seed, {2, epoch}));
    EpochRecord record;
    record.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batches) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const auto idx = std::span(order).subspan(start, n);
      const auto batch = synth::make_batch(data, idx);
      const auto f = model.forward(batch.images, batch.tokens, data.question_length);
      const auto lc = cross_entropy(f.logits, batch.labels);
      auto fail = [&](const std::string& term, double value) {
        state.optimizer = opt.buffers();
        throw TrainingAborted(abort_message("train_adversarial", epoch, batches, term, value), encode_state(state));
      };
      if (!std::isfinite(lc.item())) fail("classification loss", lc.item());
      record.classification_loss += lc.item();

      if (active) {
        Tensor mu;
        switch (config.explainer) {
          case ExplainerKind::gradcam: mu = explain::grad_cam(model, f, batch.labels).maps; break;
          case ExplainerKind::rise: {
            explain::RiseOptions opts{config.rise_masks, config.rise_keep_prob, derive_seed(config.seed, {4, epoch, batches})};
            mu = explain::rise(model, batch.images, batch.tokens, data.question_length, batch.labels, opts).maps;
            break;
          }
          case ExplainerKind::random: {
            std::vector<double> rows;
            rows.reserve(n * k);
            for (auto i : idx) rows.insert(rows.end(), random_maps[i].begin(), random_maps[i].end());
            mu = Tensor(Shape{n, k}, std::move(rows));
            break;
          }
        }
        {
          const auto mv = mu.values(), rv = batch.reference.values();
          double rc = 0.0;
          std::size_t scored = 0;
          for (std::size_t i = 0; i < n; ++i) {
            const auto r = rv.subspan(i * k, k);
            if (std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; })) continue;
            rc += metrics::rank_correlation(mv.subspan(i * k, k), r);
            ++scored;
          }
          if (scored > 0) record.explanation_rc += rc / static_cast<double>(scored);
        }
        Tensor adv;
        if (adversarial) {
          const auto cond = adversary::condition_from_activation(f.activation);
          const auto fake = f.alpha.detach();
          for (std::size_t s = 0; s < config.d_steps_per_g_step; ++s) {
            disc->params().zero_grad();
            const auto d_loss = adversary::discriminator_loss(disc->forward(mu, cond), disc->forward(fake, cond));
            if (!std::isfinite(d_loss.item())) fail("discriminator loss", d_loss.item());
            d_loss.backward();
            disc_opt.step(disc->params());
          }
          const auto frozen = disc->snapshot();
          const auto d_real = frozen.forward(mu, cond);
          const auto d_fake = frozen.forward(f.alpha, cond);
          const auto rep = adversary::minimax_losses(d_real, d_fake, config.generator_form);
          auto g = adversary::generator_loss(d_real, d_fake, config.generator_form);
          // The pixel game sums its per-cell losses; the report keeps the mean.
          if (config.variant == Variant::paan) g = scale(g, static_cast<double>(k));
          const auto js = adversary::js_divergence(f.alpha, mu);
          const auto chi2 = adversary::pearson_chi2(mu, f.alpha);
          if (!std::isfinite(rep.g_loss)) fail("generator loss", rep.g_loss);
          if (!std::isfinite(js.item())) fail("js term", js.item());
          if (!std::isfinite(chi2.item())) fail("chi2 term", chi2.item());
          record.d_loss += rep.d_loss;
          record.g_loss += rep.g_loss;
          record.js_term += js.item();
          record.chi2_term += chi2.item();
          adv = add(add(g, scale(js, config.lambda_js)), scale(chi2, config.lambda_chi2));
        } else {
          adv = match::match_loss(matcher, f.alpha, mu);
          if (!std::isfinite(adv.item())) fail(to_string(config.variant) + " loss", adv.item());
          record.match_loss += adv.item();
        }
        // The two players' gradients are clipped separately and summed:
        // a first-order version of a classification step followed by a
        // generator step, sharing one forward pass.
        model.params().zero_grad();
        scale(adv, config.eta).backward(true);
        if (!all_finite(model.params())) fail("adversarial gradient", NAN);
        for (auto& [name, p] : model.params())
          if (!vqa::is_generator_param(name)) p.zero_grad();
        clip_gradients(model.params(), config.clip_norm);
        adv_grad.clear();
        for (const auto& [name, p] : model.params()) adv_grad.emplace_back(p.grad().begin(), p.grad().end());
      }

      model.params().zero_grad();
      lc.backward();
      if (!all_finite(model.params())) fail("gradient", NAN);
      clip_gradients(model.params(), config.clip_norm);
      if (active) {
        std::size_t slot = 0;
        for (auto& [name, p] : model.params()) {
          const auto& extra = adv_grad[slot++];
          if (extra.empty()) continue;
          auto g = p.mutable_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += extra[i];
        }
      }
      opt.step(model.params());
      ++state.steps;
    }
    if (batches > 0) {
      const double b = static_cast<double>(batches);
      for (double* v : {&record.classification_loss, &record.d_loss, &record.g_loss, &record.js_term, &record.chi2_term,
                        &record.match_loss, &record.explanation_rc})
        *v /= b;
    }
    record.metrics = evaluate(model, data, split.held_out);
    if (progress) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "[%s] epoch %zu  L_c %.4f  rc %.4f  emd %.4f  entropy %.4f  acc %.4f\n",
                    report.variant.c_str(), epoch, record.classification_loss, record.metrics.rank_correlation,
                    record.metrics.emd, record.metrics.entropy, record.metrics.accuracy);
      *progress << buf << std::flush;
    }
    report.epochs.push_back(record);
  }
  state.optimizer = opt.buffers();
  report.final_checkpoint = encode_state(state);
  if (disc) report.discriminator_checkpoint = encode_checkpoint(disc->params());
  return report;
}

std::vector<SweepRow> eta_sweep(const ModelState& warm, const synth::Dataset& data, const TrainConfig& config,
                                const std::vector<double>& etas, std::size_t workers) {
  if (etas.empty()) throw std::invalid_argument("eta_sweep: no eta values");
  std::vector<SweepRow> rows(etas.size());
  parallel_for(etas.size(), workers, [&](std::size_t i) {
    auto c = config;
    c.eta = etas[i];
    const auto report = train_adversarial(warm, data, c);
    const auto& m = report.last().metrics;
    rows[i] = {etas[i], m.rank_correlation, m.emd, m.accuracy, m.entropy};
  });
  return rows;
}

void write_report_tsv(std::ostream& out, const RunReport& report) {
  metrics::write_tsv_header(out);
  for (const auto& e : report.epochs) metrics::write_tsv_row(out, e.epoch, report.variant, e.metrics);
}

void write_report_tsv(const std::filesystem::path& path, const RunReport& report) {
  std::ostringstream out;
  write_report_tsv(out, report);
  write_file(path, out.str());
}

void write_summary(std::ostream& out, const RunReport& report, const TrainConfig& config) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "variant      %s\nfingerprint  %016llx\n", report.variant.c_str(),
                static_cast<unsigned long long>(report.fingerprint));
  out << buf << "reference    synthetic (ground-truth cells of the queried shape)\n\nconfig\n";
  for (const auto& [k, v] : config.to_map()) out << "  " << k << " = " << v << "\n";
  const auto smoothed = smooth(report.entropy_series());
  out << "\nepoch      L_c   d_loss   g_loss       js     chi2    match   mu_rc       rc      emd  entropy  ent(w5)      acc\n";
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    const auto& e = report.epochs[i];
    std::snprintf(buf, sizeof buf, "%5zu %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", e.epoch,
                  e.classification_loss, e.d_loss, e.g_loss, e.js_term, e.chi2_term, e.match_loss, e.explanation_rc,
                  e.metrics.rank_correlation,
                  e.metrics.emd, e.metrics.entropy, smoothed[i], e.metrics.accuracy);
    out << buf;
  }
}

void write_sweep_tsv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "eta\trc\temd\taccuracy\tentropy\n";
  for (const auto& r : rows) {
    out << format_double(r.eta) << '\t' << format_double(r.rank_correlation) << '\t' << format_double(r.emd) << '\t'
        << format_double(r.accuracy) << '\t' << format_double(r.entropy) << '\n';
  }
}

}  // namespace attn_tutor::train
