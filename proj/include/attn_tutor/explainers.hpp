#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "attn_tutor/grid_map.hpp"
#include "attn_tutor/vqa_net.hpp"

namespace attn_tutor::explain {

/// Maps class logits [N, classes] from an activation [N, C, G, G].
using HeadFunction = std::function<Tensor(const Tensor& activation)>;

struct ExplanationBatch {
  Tensor maps;                // [N, G*G], detached, rows on the simplex
  std::vector<bool> fallback; // row was replaced by the uniform map
};

/// Grad-CAM over an activation: mu_k = spatial mean of d(logit_c)/dA_k,
/// map = relu(sum_k mu_k A_k), normalised (uniform when all zero).
ExplanationBatch grad_cam(const Tensor& activation, const HeadFunction& head, std::span<const int> classes);

/// Grad-CAM of the VQA model for a forward pass it produced. Runs on a
/// parameter snapshot, so neither the model nor the features receive
/// gradient.
ExplanationBatch grad_cam(const vqa::VqaModel& model, const vqa::FeatureBundle& features, std::span<const int> classes);

GridMap grad_cam_map(const vqa::VqaModel& model, const Tensor& image, std::span<const int> question, int true_class);

struct RiseOptions {
  std::size_t n_masks = 16;
  double keep_prob = 0.5;
  std::uint64_t seed = 0;
};

/// Binary masks on a ceil(G/2) lattice, bilinearly upsampled with a random
/// shift and cropped to the image: [n_masks, S*S] values in [0, 1].
std::vector<std::vector<double>> rise_masks(std::size_t image_size, std::size_t grid, const RiseOptions& options);

/// Mean of a [S*S] pixel field over each of the G x G regions.
std::vector<double> pool_to_grid(std::span<const double> pixels, std::size_t image_size, std::size_t grid);

/// Probability of sample `sample`'s true class for each of its masked
/// copies [M, 3, S, S].
using ProbabilityFunction = std::function<std::vector<double>(const Tensor& masked, std::size_t sample)>;

/// RISE for a batch; sample i draws its masks from derive_seed(seed, {i}).
ExplanationBatch rise(const Tensor& images, std::span<const int> classes, std::size_t grid, const RiseOptions& options,
                      const ProbabilityFunction& prob);

ExplanationBatch rise(const vqa::VqaModel& model, const Tensor& images, std::span<const int> tokens,
                      std::size_t question_length, std::span<const int> classes, const RiseOptions& options);

/// Thrown when the requested histogram overlap cannot be reached.
class OverlapRangeError : public std::invalid_argument {
 public:
  OverlapRangeError(double low, double high, double target);
  double low, high;
};

/// Mixture t * reference + (1 - t) * r with r a random map on the cells
/// where the reference is smallest; t is found by bisection so that
/// sum(min(map, reference)) matches overlap_target.
GridMap random_explanation(const GridMap& reference, double overlap_target, std::uint64_t seed);

}  // namespace attn_tutor::explain
