// attn-tutor: data generation, training, evaluation and reports.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attn_tutor/checkpoint.hpp"
#include "attn_tutor/explainers.hpp"
#include "attn_tutor/grad_suite.hpp"
#include "attn_tutor/grid_map.hpp"
#include "attn_tutor/metrics.hpp"
#include "attn_tutor/synthdata.hpp"
#include "attn_tutor/trainer.hpp"
#include "attn_tutor/workers.hpp"
#include "json.hpp"
#include "svg_chart.hpp"

namespace fs = std::filesystem;
using namespace attn_tutor;

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

// Flags of one subcommand, kept as text so a --config file can fill the ones
// not given on the command line.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {}

  void add(const std::string& key, const std::string& fallback, const std::string& help) {
    values_[key] = fallback;
    options_[key] = app_->add_option("--" + dashed(key), values_[key], help)->default_str(fallback)->type_name("");
  }
  void add_train_config() {
    static const std::map<std::string, std::string> help{
        {"adv_epochs", "adversarial (or matching) epochs after the warm start"},
        {"batch_size", "samples per batch"},
        {"clip_norm", "gradient norm clip per loss term (0 disables)"},
        {"d_steps_per_g_step", "discriminator updates per model update"},
        {"eta", "weight of the adversarial or matching term"},
        {"explainer", "supervision maps: gradcam | rise | random"},
        {"generator_form", "non_saturating | saturating"},
        {"holdout_fraction", "held-out share (every k-th sample)"},
        {"lambda_chi2", "weight of the Pearson chi2 stabilizer"},
        {"lambda_js", "weight of the Jensen-Shannon stabilizer"},
        {"lr_disc", "discriminator learning rate (SGD, momentum 0.5)"},
        {"lr_main", "model learning rate"},
        {"optimizer", "model optimizer: adam | sgd"},
        {"random_overlap", "overlap of random maps with the reference (explainer=random)"},
        {"rise_keep_prob", "RISE mask keep probability"},
        {"rise_masks", "RISE masks per sample"},
        {"seed", "model and shuffling seed"},
        {"variant", "baseline | mse | mmd | coral | aan | paan"},
        {"warm_epochs", "cross-entropy epochs before the attention term starts"},
    };
    const train::TrainConfig defaults;
    for (const auto& [key, value] : defaults.to_map()) {
      const auto it = help.find(key);
      add(key, value, it == help.end() ? key : it->second);
    }
  }
  void add_config_file() { app_->add_option("--config", config_path_, "file of 'key = value' lines; flags win"); }

  void resolve() {
    if (config_path_.empty()) return;
    for (const auto& [key, value] : train::parse_config_text(read_file(config_path_))) {
      const auto it = options_.find(key);
      if (it == options_.end()) throw std::invalid_argument("config file: unknown key '" + key + "'");
      if (it->second->count() == 0) values_[key] = value;
    }
  }

  const std::string& text(const std::string& key) const { return values_.at(key); }
  bool given(const std::string& key) const { return !values_.at(key).empty(); }
  std::size_t size(const std::string& key) const {
    const auto& v = text(key);
    std::size_t used = 0;
    unsigned long long n = 0;
    try {
      n = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty() || v[0] == '-') throw std::invalid_argument("--" + dashed(key) + ": expected a count, got '" + v + "'");
    return static_cast<std::size_t>(n);
  }
  double real(const std::string& key) const {
    const auto& v = text(key);
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw std::invalid_argument("--" + dashed(key) + ": expected a number, got '" + v + "'");
    return x;
  }

  train::TrainConfig train_config() const {
    train::TrainConfig config;
    for (const auto& [key, value] : config.to_map()) config.set(key, text(key));
    config.validate();
    return config;
  }

  // Resolved values as a config file the command accepts back.
  std::string resolved() const {
    std::string out;
    for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
    return out;
  }

 private:
  CLI::App* app_;
  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

void add_data_flags(Flags& f) {
  f.add("data", "", "dataset container (AVQD1); generated in memory when empty");
  f.add("n", "2000", "samples to generate when --data is empty");
  f.add("data_seed", "7", "dataset seed when --data is empty");
}

synth::Dataset load_data(const Flags& f) {
  if (f.given("data")) return synth::read_container(f.text("data"));
  synth::DatasetSpec spec;
  spec.n_samples = f.size("n");
  spec.seed = f.size("data_seed");
  return synth::generate(spec);
}

void write_resolved(const fs::path& path, const Flags& f) { write_file(path, f.resolved()); }

// ---- gen-data

int gen_data(const Flags& f) {
  synth::DatasetSpec spec;
  spec.n_samples = f.size("n");
  spec.seed = f.size("seed");
  spec.image_size = f.size("image_size");
  spec.grid = f.size("grid");
  spec.max_objects = f.size("max_objects");
  spec.background_noise = f.real("background_noise");
  spec.validate();
  const fs::path out = f.text("out");
  const auto data = synth::generate(spec);
  synth::write_container(out, data);
  write_resolved(fs::path(out).concat(".config"), f);
  if (f.given("export_csv")) synth::export_reference_csv(data, f.text("export_csv"));
  std::cout << "wrote " << data.size() << " samples to " << out.string() << "\n";
  return 0;
}

// ---- train

int train_cmd(const Flags& f) {
  const auto config = f.train_config();
  const auto data = load_data(f);
  const fs::path out = f.text("out");
  fs::create_directories(out);
  write_resolved(out / "config.txt", f);

  train::ModelState warm = f.given("warm") ? train::decode_state(read_file(f.text("warm")), train::model_config_for(data))
                                           : train::initial_state(data, config);
  if (!f.given("warm")) {
    auto result = train::warm_start(std::move(warm), data, config);
    warm = std::move(result.state);
    std::ostringstream acc;
    acc << "epoch\taccuracy\n";
    for (std::size_t i = 0; i < result.validation_accuracy.size(); ++i)
      acc << i << '\t' << result.validation_accuracy[i] << '\n';
    write_file(out / "warm_accuracy.tsv", acc.str());
  }
  write_file(out / "warm.atck", train::encode_state(warm));

  const auto report = train::train_adversarial(warm, data, config, &std::cerr);
  write_file(out / "checkpoint.atck", report.final_checkpoint);
  if (!report.discriminator_checkpoint.empty()) write_file(out / "discriminator.atck", report.discriminator_checkpoint);
  train::write_report_tsv(out / "log.tsv", report);
  std::ostringstream summary;
  train::write_summary(summary, report, config);
  write_file(out / "summary.txt", summary.str());
  const auto& m = report.last().metrics;
  std::printf("%s: rc %.4f emd %.4f entropy %.4f accuracy %.4f -> %s\n", report.variant.c_str(), m.rank_correlation,
              m.emd, m.entropy, m.accuracy, out.string().c_str());
  return 0;
}

// ---- eval

void dump_maps(const fs::path& dir, const char* prefix, const std::vector<std::size_t>& indices,
               std::span<const double> rows, std::size_t grid) {
  const std::size_t k = grid * grid;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    char name[48];
    std::snprintf(name, sizeof name, "%s_%06zu.csv", prefix, indices[i]);
    write_map_csv(dir / name, GridMap{grid, std::vector<double>(rows.begin() + i * k, rows.begin() + (i + 1) * k),
                                      MapSource::attention});
  }
}

int eval_cmd(const Flags& f) {
  const auto config = f.train_config();
  const auto data = load_data(f);
  const auto state = train::decode_state(read_file(f.text("checkpoint")), train::model_config_for(data));
  const auto split = train::split_dataset(data.size(), config.holdout_fraction);
  const auto m = train::evaluate(state.model, data, split.held_out);
  const nlohmann::json j = {{"rank_correlation", m.rank_correlation}, {"emd", m.emd},
                            {"entropy", m.entropy},                   {"overlap", m.overlap},
                            {"accuracy", m.accuracy},                 {"scored_maps", m.scored_maps},
                            {"degenerate", m.degenerate},             {"held_out", split.held_out.size()}};
  const auto text = j.dump(2) + "\n";
  std::cout << text;
  if (f.given("out")) {
    const fs::path out = f.text("out");
    write_file(out, text);
    write_resolved(fs::path(out).concat(".config"), f);
  }
  if (f.given("maps_dir")) {
    const fs::path dir = f.text("maps_dir");
    fs::create_directories(dir);
    const auto pred = train::predict(state.model, data, split.held_out);
    dump_maps(dir / "attention", "att", split.held_out, pred.attention, data.grid);
    // Grad-CAM maps for the true answers.
    const auto frozen = state.model.snapshot();
    for (std::size_t start = 0; start < split.held_out.size(); start += 64) {
      const std::size_t n = std::min<std::size_t>(64, split.held_out.size() - start);
      const std::vector<std::size_t> idx(split.held_out.begin() + start, split.held_out.begin() + start + n);
      const auto batch = synth::make_batch(data, idx);
      const auto features = frozen.forward(batch.images, batch.tokens, data.question_length);
      dump_maps(dir / "gradcam", "gradcam", idx, explain::grad_cam(frozen, features, batch.labels).maps.values(), data.grid);
    }
    write_resolved(dir / "config.txt", f);
  }
  return 0;
}

// ---- sweep-eta

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw std::invalid_argument("--etas: bad value '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("--etas: empty list");
  return out;
}

int sweep_cmd(const Flags& f) {
  const auto config = f.train_config();
  const auto etas = parse_list(f.text("etas"));
  for (double eta : etas)
    if (!(eta >= 0.0)) throw std::invalid_argument("--etas: eta must be >= 0");
  const auto data = load_data(f);
  const fs::path out = f.text("out");
  fs::create_directories(out);
  write_resolved(out / "config.txt", f);
  const auto warm = train::warm_start(train::initial_state(data, config), data, config).state;
  const auto rows = train::eta_sweep(warm, data, config, etas, worker_count());
  std::ostringstream tsv;
  train::write_sweep_tsv(tsv, rows);
  write_file(out / "sweep.tsv", tsv.str());
  std::cout << tsv.str();
  return 0;
}

// ---- compare-maps

std::map<std::string, fs::path> maps_by_index(const fs::path& dir) {
  // Files pair up by the trailing number of their stem: att_000004.csv with gt_000004.csv.
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".csv") continue;
    const auto stem = entry.path().stem().string();
    const auto cut = stem.find_last_of('_');
    out[cut == std::string::npos ? stem : stem.substr(cut + 1)] = entry.path();
  }
  return out;
}

int compare_cmd(const Flags& f) {
  const auto a = maps_by_index(f.text("a")), b = maps_by_index(f.text("b"));
  std::ostringstream table;
  table << "index\trc\temd\n";
  double rc_total = 0.0, emd_total = 0.0;
  std::size_t n = 0;
  for (const auto& [index, path] : a) {
    const auto other = b.find(index);
    if (other == b.end()) continue;
    const auto ma = read_map_csv(path), mb = read_map_csv(other->second);
    if (ma.side != mb.side) throw std::runtime_error("compare-maps: " + index + " has grids of different sides");
    const double rc = metrics::rank_correlation(ma.values, mb.values);
    const double d = metrics::emd(ma.values, mb.values, ma.side);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s\t%.17g\t%.17g\n", index.c_str(), rc, d);
    table << buf;
    rc_total += rc;
    emd_total += d;
    ++n;
  }
  if (n == 0) throw std::runtime_error("compare-maps: no map index appears in both directories");
  if (f.given("out")) {
    write_file(f.text("out"), table.str());
    write_resolved(fs::path(f.text("out")).concat(".config"), f);
  } else {
    std::cout << table.str();
  }
  std::fprintf(stderr, "%zu pairs: mean rc %.4f, mean emd %.4f\n", n, rc_total / n, emd_total / n);
  return 0;
}

// ---- report

std::vector<std::vector<std::string>> read_tsv(const fs::path& path, const std::string& header) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw std::runtime_error(path.string() + ": expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream cut(line);
    std::string cell;
    while (std::getline(cut, cell, '\t')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

struct LogRun {
  std::string variant;
  std::vector<std::vector<std::string>> rows;  // epoch variant rc emd entropy overlap accuracy
};

cli::Series series_of(const LogRun& run, std::size_t column) {
  cli::Series s{run.variant, {}, {}, {}};
  for (const auto& r : run.rows) {
    s.x.push_back(std::stod(r.at(0)));
    s.y.push_back(std::stod(r.at(column)));
    s.y_text.push_back(r.at(column));
  }
  return s;
}

int table_rank(const std::string& variant) {
  static const std::vector<std::string> order{"baseline", "mse", "mmd", "coral", "aan", "paan"};
  const auto base = variant.substr(0, variant.find('_'));
  const auto it = std::find(order.begin(), order.end(), base);
  const int rank = static_cast<int>(it - order.begin());
  // Explainer swaps and random controls follow their variant.
  return 10 * rank + (variant == base ? 0 : 1 + (variant.find("_ran") != std::string::npos));
}

int report_cmd(const Flags& f, const std::vector<std::string>& logs) {
  if (logs.empty() && !f.given("sweep")) throw std::invalid_argument("report: give at least one --log or a --sweep");
  const fs::path out = f.text("out");
  fs::create_directories(out);
  std::string resolved = f.resolved();
  for (const auto& path : logs) resolved += "log = " + path + "\n";
  write_file(out / "config.txt", resolved);
  const std::string log_header = "epoch\tvariant\trc\temd\tentropy\toverlap\taccuracy";
  std::vector<LogRun> runs;
  for (const auto& path : logs) {
    auto rows = read_tsv(path, log_header);
    if (rows.empty()) throw std::runtime_error(path + ": no epochs");
    runs.push_back({rows.front().at(1), std::move(rows)});
  }
  if (!runs.empty()) {
    cli::Chart entropy{"Attention entropy", "epoch", "entropy", false, {}};
    cli::Chart rc{"Rank correlation with reference", "epoch", "rank correlation", false, {}};
    for (const auto& run : runs) {
      entropy.series.push_back(series_of(run, 4));
      rc.series.push_back(series_of(run, 2));
    }
    write_file(out / "entropy.svg", cli::render_svg(entropy));
    write_file(out / "rc.svg", cli::render_svg(rc));

    std::stable_sort(runs.begin(), runs.end(),
                     [](const LogRun& a, const LogRun& b) { return table_rank(a.variant) < table_rank(b.variant); });
    std::ostringstream table;
    table << "RC and EMD against the synthetic reference (ground-truth cells of the queried shape), final epoch.\n\n"
          << "| variant | RC (higher better) | EMD (lower better) | accuracy |\n|---|---|---|---|\n";
    for (const auto& run : runs) {
      const auto& last = run.rows.back();
      char buf[160];
      std::snprintf(buf, sizeof buf, "| %s | %.4f | %.4f | %.4f |\n", run.variant.c_str(), std::stod(last.at(2)),
                    std::stod(last.at(3)), std::stod(last.at(6)));
      table << buf;
    }
    write_file(out / "summary.md", table.str());
    std::cout << table.str();
  }
  if (f.given("sweep")) {
    const auto rows = read_tsv(f.text("sweep"), "eta\trc\temd\taccuracy\tentropy");
    cli::Series rc{"rc", {}, {}, {}}, acc{"accuracy", {}, {}, {}};
    for (const auto& r : rows) {
      for (auto* s : {&rc, &acc}) s->x.push_back(std::stod(r.at(0)));
      rc.y.push_back(std::stod(r.at(1)));
      rc.y_text.push_back(r.at(1));
      acc.y.push_back(std::stod(r.at(3)));
      acc.y_text.push_back(r.at(3));
    }
    write_file(out / "eta.svg", cli::render_svg({"Effect of eta", "eta (log scale)", "value", true, {rc, acc}}));
  }
  return 0;
}

// ---- gradcheck

int gradcheck_cmd(const Flags& f) {
  const auto results = run_gradient_suite(f.size("probes"), f.size("seed"));
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-28s %.3e  %s\n", r.name.c_str(), r.max_error, r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  std::printf("%zu cases, tolerance %.0e: %s\n", results.size(), kGradCheckTolerance, ok ? "all passed" : "failures");
  return ok ? 0 : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention supervision from explanation maps on a synthetic VQA task."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset container");
  Flags gen_flags(gen);
  gen_flags.add("n", "2000", "samples");
  gen_flags.add("seed", "7", "dataset seed");
  gen_flags.add("image_size", "28", "image side in pixels");
  gen_flags.add("grid", "7", "region grid side");
  gen_flags.add("max_objects", "5", "objects per scene lie in [3, max]");
  gen_flags.add("background_noise", "0.15", "background noise amplitude");
  gen_flags.add("out", "data.avqd", "output container");
  gen_flags.add("export_csv", "", "also write reference maps as CSV into this directory");
  gen_flags.add_config_file();

  auto* tr = app.add_subcommand("train", "warm start, then adversarial or matching training");
  Flags train_flags(tr);
  train_flags.add_train_config();
  add_data_flags(train_flags);
  train_flags.add("out", "run", "output directory");
  train_flags.add("warm", "", "warm-start state (ATCK1) to reuse instead of warm training");
  train_flags.add_config_file();

  auto* ev = app.add_subcommand("eval", "held-out metrics of a trained state");
  Flags eval_flags(ev);
  eval_flags.add_train_config();
  add_data_flags(eval_flags);
  eval_flags.add("checkpoint", "run/checkpoint.atck", "state to evaluate");
  eval_flags.add("out", "", "also write the metrics JSON here");
  eval_flags.add("maps_dir", "", "write held-out maps as CSV into <dir>/attention and <dir>/gradcam");
  eval_flags.add_config_file();

  auto* sw = app.add_subcommand("sweep-eta", "one run per eta from a shared warm start");
  Flags sweep_flags(sw);
  sweep_flags.add_train_config();
  add_data_flags(sweep_flags);
  sweep_flags.add("etas", "0,0.01,0.1,1,10,100", "comma separated eta values");
  sweep_flags.add("out", "sweep", "output directory");
  sweep_flags.add_config_file();

  auto* cmp = app.add_subcommand("compare-maps", "per-sample rank correlation and EMD of two map directories");
  Flags cmp_flags(cmp);
  cmp_flags.add("a", "", "first directory of CSV maps");
  cmp_flags.add("b", "", "second directory of CSV maps");
  cmp_flags.add("out", "", "write the table here instead of stdout");
  cmp->get_option("--a")->required();
  cmp->get_option("--b")->required();

  auto* rep = app.add_subcommand("report", "SVG charts and a summary table from training logs");
  Flags rep_flags(rep);
  std::vector<std::string> logs;
  rep->add_option("--log", logs, "log.tsv of a training run (repeatable)");
  rep_flags.add("sweep", "", "sweep.tsv for the eta chart");
  rep_flags.add("out", "report", "output directory");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every primitive and loss");
  Flags gc_flags(gc);
  gc_flags.add("probes", "20", "random probes per case");
  gc_flags.add("seed", "1", "probe seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*gen) return gen_flags.resolve(), gen_data(gen_flags);
    if (*tr) return train_flags.resolve(), train_cmd(train_flags);
    if (*ev) return eval_flags.resolve(), eval_cmd(eval_flags);
    if (*sw) return sweep_flags.resolve(), sweep_cmd(sweep_flags);
    if (*cmp) return compare_cmd(cmp_flags);
    if (*rep) return report_cmd(rep_flags, logs);
    if (*gc) return gradcheck_cmd(gc_flags);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const train::TrainingAborted& e) {
    std::cerr << "aborted: " << e.diagnostics() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kConfigError;
}
