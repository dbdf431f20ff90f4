#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attn_tutor/adversary.hpp"
#include "attn_tutor/metrics.hpp"
#include "attn_tutor/optim.hpp"
#include "attn_tutor/synthdata.hpp"
#include "attn_tutor/vqa_net.hpp"

namespace attn_tutor::train {

enum class Variant { baseline, mse, mmd, coral, aan, paan };
enum class ExplainerKind { gradcam, rise, random };

std::string to_string(Variant v);
std::string to_string(ExplainerKind e);
Variant parse_variant(const std::string& text);
ExplainerKind parse_explainer(const std::string& text);

struct TrainConfig {
  double eta = 10.0;
  Variant variant = Variant::paan;
  ExplainerKind explainer = ExplainerKind::gradcam;
  double random_overlap = 0.07;  // explainer == random
  std::size_t warm_epochs = 10;
  std::size_t adv_epochs = 30;
  std::size_t batch_size = 16;
  OptimizerKind optimizer = OptimizerKind::adam;  // main model; the discriminator always uses SGD
  double lr_main = 0.001;
  double lr_disc = 0.01;
  std::size_t d_steps_per_g_step = 1;
  double lambda_js = 1.0;
  double lambda_chi2 = 1.0;
  adversary::GeneratorForm generator_form = adversary::GeneratorForm::non_saturating;
  double clip_norm = 5.0;
  double holdout_fraction = 0.2;
  std::size_t rise_masks = 16;
  double rise_keep_prob = 0.5;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;

  /// key -> value text, one entry per field, keys sorted.
  std::map<std::string, std::string> to_map() const;
  /// Sets one field from text; throws std::invalid_argument on an unknown key
  /// or malformed value.
  void set(const std::string& key, const std::string& value);
  /// Canonical "key = value" lines (sorted keys, '\n' endings).
  std::string canonical() const;
  /// FNV-1a 64 of canonical().
  std::uint64_t fingerprint() const;
  /// Row label: paan, paan_rise, paan_ran07, baseline, ...
  std::string label() const;
};

/// Parses `key = value` lines; '#' starts a comment. Later keys win.
std::map<std::string, std::string> parse_config_text(const std::string& text);

/// Held-out split: every fifth sample (indices 4, 9, ...) at the default 0.2.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held_out;
};
Split split_dataset(std::size_t n, double holdout_fraction);

vqa::VqaModelConfig model_config_for(const synth::Dataset& data);

/// Model parameters (theta_f, theta_y) plus the main optimizer's buffers.
struct ModelState {
  vqa::VqaModel model;
  ParamStore optimizer;  // Optimizer::buffers() layout
  std::size_t steps = 0;

  ModelState clone() const;
};

ModelState initial_state(const synth::Dataset& data, const TrainConfig& config);

/// "ATCK1" bytes: model parameters, "opt.<buffer>" optimizer buffers and an
/// "opt_steps" scalar.
std::string encode_state(const ModelState& state);
ModelState decode_state(const std::string& bytes, const vqa::VqaModelConfig& config);

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::string diagnostics, std::string last_good_checkpoint);
  const std::string& diagnostics() const { return diagnostics_; }
  /// encode_state bytes from before the failing step.
  const std::string& last_good_checkpoint() const { return checkpoint_; }

 private:
  std::string diagnostics_;
  std::string checkpoint_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double classification_loss = 0.0;  // mean L_c over the epoch's batches
  double d_loss = 0.0;
  double g_loss = 0.0;
  double js_term = 0.0;
  double chi2_term = 0.0;
  double match_loss = 0.0;
  double explanation_rc = 0.0;  // rank correlation of mu with the reference on training batches
  metrics::MetricReport metrics;  // held-out split
};

struct RunReport {
  std::string variant;
  std::uint64_t fingerprint = 0;
  std::vector<EpochRecord> epochs;  // 0 = state before the first adversarial epoch
  std::string final_checkpoint;     // encode_state of the final model
  std::string discriminator_checkpoint;  // "ATCK1" of theta_d; empty unless aan/paan

  std::vector<double> entropy_series() const;
  const EpochRecord& last() const { return epochs.back(); }
};

/// Trailing moving average (window 5 by default; shorter at the start).
std::vector<double> smooth(const std::vector<double>& series, std::size_t window = 5);

struct WarmStartResult {
  ModelState state;
  std::vector<double> validation_accuracy;  // one per warm epoch
};

/// Cross-entropy training of theta_f and theta_y for config.warm_epochs.
WarmStartResult warm_start(ModelState state, const synth::Dataset& data, const TrainConfig& config);

/// Held-out evaluation on a snapshot.
metrics::MetricReport evaluate(const vqa::VqaModel& model, const synth::Dataset& data,
                               const std::vector<std::size_t>& indices, std::size_t batch_size = 64);

/// Attention maps [N,K] and argmax predictions for `indices`.
struct Predictions {
  std::vector<double> attention;
  std::vector<int> answers;
};
Predictions predict(const vqa::VqaModel& model, const synth::Dataset& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size = 64);

/// Per batch: forward, explanation maps mu (true labels, detached),
/// d_steps discriminator updates on (mu, alpha), then one optimizer step on
/// L_c + eta * (adversarial or matching term). Records adv_epochs + 1 epochs.
RunReport train_adversarial(const ModelState& warm, const synth::Dataset& data, const TrainConfig& config,
                            std::ostream* progress = nullptr);

struct SweepRow {
  double eta = 0.0;
  double rank_correlation = 0.0;
  double emd = 0.0;
  double accuracy = 0.0;
  double entropy = 0.0;
};
/// One train_adversarial per eta from the same warm state, fanned out over
/// `workers` independent threads. Rows follow the order of `etas`.
std::vector<SweepRow> eta_sweep(const ModelState& warm, const synth::Dataset& data, const TrainConfig& config,
                                const std::vector<double>& etas, std::size_t workers = 1);

void write_report_tsv(std::ostream& out, const RunReport& report);
void write_report_tsv(const std::filesystem::path& path, const RunReport& report);
void write_summary(std::ostream& out, const RunReport& report, const TrainConfig& config);
void write_sweep_tsv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace attn_tutor::train
