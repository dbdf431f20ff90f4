#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "attn_tutor/grid_map.hpp"
#include "attn_tutor/params.hpp"
#include "attn_tutor/tensor.hpp"

namespace attn_tutor::vqa {

struct VqaModelConfig {
  std::size_t image_size = 28;
  std::size_t region_grid = 7;  // attention map is G x G
  std::size_t feature_dim = 32;
  std::size_t question_vocab = 11;
  std::size_t answer_classes = 11;
  std::size_t recurrent_hidden = 32;
  std::size_t embed_dim = 16;
  std::size_t attention_dim = 32;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t classifier_hidden = 64;
  // Images enter the encoder as (x - pixel_shift) * pixel_gain.
  double pixel_shift = 0.1;
  double pixel_gain = 5.0;
  // Init scale of att.wq relative to 1/sqrt(h). A large question term moves
  // the tanh off its linear range, where the question cancels in the softmax.
  double query_init_gain = 4.0;

  std::size_t regions() const { return region_grid * region_grid; }
  /// Throws std::invalid_argument when the encoder cannot map image_size onto
  /// region_grid or when the recurrent state cannot be fused with g_i.
  void validate() const;
  /// Zero padding of the first two convolutions that lands the encoder on
  /// the region grid.
  std::pair<std::size_t, std::size_t> encoder_padding() const;
};

/// Intermediate activations of one forward pass.
struct FeatureBundle {
  Tensor activation;  // A: [N, d, G, G], last conv activation (Grad-CAM input)
  Tensor regions;     // g_i: [N, K, d]
  Tensor question;    // g_q: [N, d]
  Tensor alpha;       // [N, K] attention, rows on the simplex
  Tensor fused;       // g_f: [N, d]
  Tensor logits;      // [N, answer_classes], pre-softmax
};

struct Attended {
  Tensor alpha;
  Tensor fused;
};

/// One-stack stacked-attention VQA model: conv image encoder, LSTM question
/// encoder, softmax region attention and a one-hidden-layer answer classifier.
///
/// Parameter names are stable and grouped by prefix: `enc.`, `q.` and `att.`
/// form the attention/feature parameters, `cls.` the classifier.
class VqaModel {
 public:
  VqaModel(VqaModelConfig config, std::uint64_t seed);

  const VqaModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// images: [N, 3, S, S] -> A: [N, d, G, G].
  Tensor encode_image(const Tensor& images) const;
  /// tokens: N questions of `length` ids each, row-major -> g_q: [N, d].
  Tensor encode_question(std::span<const int> tokens, std::size_t length) const;
  Attended attend(const Tensor& regions, const Tensor& question) const;
  Tensor logits(const Tensor& fused) const;
  /// Log-probabilities over answers.
  Tensor classify(const Tensor& fused) const;

  FeatureBundle forward(const Tensor& images, std::span<const int> tokens, std::size_t length) const;
  /// Attention and classifier applied to a given activation A; used by
  /// Grad-CAM to differentiate a class logit with respect to A.
  Tensor head_logits(const Tensor& activation, const Tensor& question) const;

  /// Copy whose parameters do not require grad (evaluation, explanation).
  VqaModel snapshot() const;
  /// Deep copy that keeps parameters trainable.
  VqaModel clone() const;

 private:
  VqaModel(VqaModelConfig config, ParamStore params) : config_(config), params_(std::move(params)) {}
  VqaModelConfig config_;
  ParamStore params_;
};

/// [N, d, G, G] -> [N, G*G, d].
Tensor regions_from_activation(const Tensor& activation);

/// True for attention/feature parameters (theta_f), false for classifier.
bool is_feature_param(std::string_view name);
/// Subset of theta_f moved by the attention game: the attention network and
/// the question encoder feeding it. The image encoder stands in for a
/// pretrained backbone and learns from the classification loss only.
bool is_generator_param(std::string_view name);

}  // namespace attn_tutor::vqa
