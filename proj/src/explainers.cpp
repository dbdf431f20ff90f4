#include "attn_tutor/explainers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "attn_tutor/ops.hpp"
#include "attn_tutor/rng.hpp"

namespace attn_tutor::explain {

ExplanationBatch grad_cam(const Tensor& activation, const HeadFunction& head, std::span<const int> classes) {
  if (activation.rank() != 4 || activation.size(2) != activation.size(3)) {
    throw ShapeError("grad_cam: activation=" + shape_string(activation.shape()) + ", expected [N,C,G,G]");
  }
  const std::size_t n = activation.size(0), channels = activation.size(1);
  const std::size_t cells = activation.size(2) * activation.size(3);
  if (classes.size() != n) {
    throw ShapeError("grad_cam: " + std::to_string(classes.size()) + " classes for " + std::to_string(n) + " samples");
  }
  const auto av = activation.values();
  Tensor probe(activation.shape(), std::vector<double>(av.begin(), av.end()), true);
  const auto logits = head(probe);
  if (logits.rank() != 2 || logits.size(0) != n) {
    throw ShapeError("grad_cam: head returned " + shape_string(logits.shape()) + ", expected [N,classes]");
  }
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= logits.size(1)) {
      throw std::out_of_range("grad_cam: class " + std::to_string(c) + " outside [0, " + std::to_string(logits.size(1)) + ")");
    }
  }
  std::vector<double> grad(av.size(), 0.0);
  if (logits.requires_grad()) {
    // Samples are independent, so one backward of the summed class logits
    // yields every per-sample gradient at once.
    sum(gather(logits, classes)).backward();
    if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), grad.begin());
  }

  ExplanationBatch out;
  out.fallback.resize(n);
  std::vector<double> maps(n * cells);
  std::vector<double> weights(channels);
  std::vector<double> row(cells);
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = av.data() + i * channels * cells;
    const double* g = grad.data() + i * channels * cells;
    for (std::size_t k = 0; k < channels; ++k) {
      double total = 0.0;
      for (std::size_t c = 0; c < cells; ++c) total += g[k * cells + c];
      weights[k] = total / static_cast<double>(cells);
    }
    for (std::size_t c = 0; c < cells; ++c) {
      double v = 0.0;
      for (std::size_t k = 0; k < channels; ++k) v += weights[k] * a[k * cells + c];
      row[c] = v > 0.0 ? v : 0.0;
    }
    out.fallback[i] = !normalize_or_uniform(row);
    std::copy(row.begin(), row.end(), maps.begin() + static_cast<std::ptrdiff_t>(i * cells));
  }
  out.maps = Tensor(Shape{n, cells}, std::move(maps));
  return out;
}

ExplanationBatch grad_cam(const vqa::VqaModel& model, const vqa::FeatureBundle& features, std::span<const int> classes) {
  const auto frozen = model.snapshot();
  const auto question = features.question.detach();
  return grad_cam(features.activation, [&](const Tensor& a) { return frozen.head_logits(a, question); }, classes);
}

GridMap grad_cam_map(const vqa::VqaModel& model, const Tensor& image, std::span<const int> question, int true_class) {
  const auto frozen = model.snapshot();
  const auto features = frozen.forward(image, question, question.size());
  if (features.activation.size(0) != 1) throw ShapeError("grad_cam_map: expected a single image [1,3,S,S]");
  const int cls[] = {true_class};
  auto batch = grad_cam(frozen, features, cls);
  return maps_from_rows(batch.maps, MapSource::gradcam).front();
}

// ---------------------------------------------------------------------------
// RISE

std::vector<std::vector<double>> rise_masks(std::size_t image_size, std::size_t grid, const RiseOptions& options) {
  if (options.n_masks == 0) throw std::invalid_argument("rise: n_masks must be >= 1");
  if (!(options.keep_prob > 0.0 && options.keep_prob < 1.0)) throw std::invalid_argument("rise: keep_prob must lie in (0, 1)");
  const std::size_t lattice = (grid + 1) / 2;
  const std::size_t cell = (image_size + lattice - 1) / lattice;
  const std::size_t up = (lattice + 1) * cell;
  Rng rng(options.seed);
  std::bernoulli_distribution keep(options.keep_prob);
  std::uniform_int_distribution<std::size_t> shift(0, cell - 1);
  std::vector<std::vector<double>> masks(options.n_masks, std::vector<double>(image_size * image_size));
  std::vector<double> coarse(lattice * lattice);
  const double scale = static_cast<double>(lattice) / static_cast<double>(up);
  auto source = [&](std::size_t pixel) {
    const double s = (static_cast<double>(pixel) + 0.5) * scale - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(lattice - 1));
  };
  for (auto& mask : masks) {
    for (auto& c : coarse) c = keep(rng) ? 1.0 : 0.0;
    const std::size_t dy = shift(rng), dx = shift(rng);
    for (std::size_t y = 0; y < image_size; ++y) {
      const double sy = source(y + dy);
      const auto y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, lattice - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < image_size; ++x) {
        const double sx = source(x + dx);
        const auto x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, lattice - 1);
        const double fx = sx - static_cast<double>(x0);
        const double top = coarse[y0 * lattice + x0] * (1 - fx) + coarse[y0 * lattice + x1] * fx;
        const double bottom = coarse[y1 * lattice + x0] * (1 - fx) + coarse[y1 * lattice + x1] * fx;
        mask[y * image_size + x] = top * (1 - fy) + bottom * fy;
      }
    }
  }
  return masks;
}

std::vector<double> pool_to_grid(std::span<const double> pixels, std::size_t image_size, std::size_t grid) {
  if (pixels.size() != image_size * image_size || grid == 0 || grid > image_size) {
    throw ShapeError("pool_to_grid: " + std::to_string(pixels.size()) + " pixels for a " + std::to_string(image_size) +
                     " px image onto " + std::to_string(grid) + "x" + std::to_string(grid));
  }
  std::vector<double> out(grid * grid, 0.0);
  for (std::size_t r = 0; r < grid; ++r) {
    const std::size_t y0 = r * image_size / grid, y1 = (r + 1) * image_size / grid;
    for (std::size_t c = 0; c < grid; ++c) {
      const std::size_t x0 = c * image_size / grid, x1 = (c + 1) * image_size / grid;
      double total = 0.0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) total += pixels[y * image_size + x];
      out[r * grid + c] = total / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

ExplanationBatch rise(const Tensor& images, std::span<const int> classes, std::size_t grid, const RiseOptions& options,
                      const ProbabilityFunction& prob) {
  if (images.rank() != 4 || images.size(1) != 3 || images.size(2) != images.size(3)) {
    throw ShapeError("rise: images=" + shape_string(images.shape()) + ", expected [N,3,S,S]");
  }
  const std::size_t n = images.size(0), size = images.size(2), pixels = size * size;
  if (classes.size() != n) throw ShapeError("rise: " + std::to_string(classes.size()) + " classes for " + std::to_string(n) + " images");
  const auto iv = images.values();
  ExplanationBatch out;
  out.fallback.resize(n);
  std::vector<double> maps;
  maps.reserve(n * grid * grid);
  for (std::size_t i = 0; i < n; ++i) {
    auto opts = options;
    opts.seed = derive_seed(options.seed, {i});
    const auto masks = rise_masks(size, grid, opts);
    std::vector<double> masked(masks.size() * 3 * pixels);
    for (std::size_t m = 0; m < masks.size(); ++m)
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t p = 0; p < pixels; ++p)
          masked[(m * 3 + ch) * pixels + p] = iv[(i * 3 + ch) * pixels + p] * masks[m][p];
    const auto probs = prob(Tensor(Shape{masks.size(), 3, size, size}, std::move(masked)), i);
    if (probs.size() != masks.size()) throw ShapeError("rise: probability function returned the wrong count");
    std::vector<double> saliency(pixels, 0.0);
    for (std::size_t m = 0; m < masks.size(); ++m)
      for (std::size_t p = 0; p < pixels; ++p) saliency[p] += probs[m] * masks[m][p];
    auto cells = pool_to_grid(saliency, size, grid);
    out.fallback[i] = !normalize_or_uniform(cells);
    maps.insert(maps.end(), cells.begin(), cells.end());
  }
  out.maps = Tensor(Shape{n, grid * grid}, std::move(maps));
  return out;
}

ExplanationBatch rise(const vqa::VqaModel& model, const Tensor& images, std::span<const int> tokens,
                      std::size_t question_length, std::span<const int> classes, const RiseOptions& options) {
  const auto frozen = model.snapshot();
  return rise(images, classes, model.config().region_grid, options, [&](const Tensor& masked, std::size_t sample) {
    const std::size_t m = masked.size(0);
    std::vector<int> repeated;
    repeated.reserve(m * question_length);
    for (std::size_t r = 0; r < m; ++r)
      repeated.insert(repeated.end(), tokens.begin() + static_cast<std::ptrdiff_t>(sample * question_length),
                      tokens.begin() + static_cast<std::ptrdiff_t>((sample + 1) * question_length));
    const auto probs = softmax(frozen.forward(masked, repeated, question_length).logits);
    const std::size_t classes_n = probs.size(1);
    std::vector<double> out(m);
    for (std::size_t r = 0; r < m; ++r) out[r] = probs.value(r * classes_n + static_cast<std::size_t>(classes[sample]));
    return out;
  });
}

// ---------------------------------------------------------------------------
// random control

OverlapRangeError::OverlapRangeError(double lo, double hi, double target)
    : std::invalid_argument("random_explanation: overlap " + std::to_string(target) + " unattainable; achievable range is [" +
                            std::to_string(lo) + ", " + std::to_string(hi) + "]"),
      low(lo),
      high(hi) {}

namespace {

double histogram_overlap(std::span<const double> p, std::span<const double> q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::min(p[i], q[i]);
  return total;
}

}  // namespace

GridMap random_explanation(const GridMap& reference, double overlap_target, std::uint64_t seed) {
  const auto& ref = reference.values;
  const double floor_value = *std::min_element(ref.begin(), ref.end());
  if (!(overlap_target >= 0.0 && overlap_target <= 1.0) || overlap_target < floor_value) {
    throw OverlapRangeError(floor_value, 1.0, overlap_target);
  }
  if (overlap_target == 1.0) return {reference.side, ref, MapSource::random};

  std::vector<std::size_t> lowest;
  for (std::size_t i = 0; i < ref.size(); ++i)
    if (ref[i] == floor_value) lowest.push_back(i);
  Rng rng(seed);
  std::vector<double> noise(ref.size(), 0.0);
  if (floor_value == 0.0) {
    // Random mass spread over cells the reference does not touch.
    std::gamma_distribution<double> gamma(0.5, 1.0);
    for (auto i : lowest) noise[i] = gamma(rng);
    normalize_or_uniform(noise);
  } else {
    // Full support: only a point mass on a lightest cell reaches the floor.
    std::uniform_int_distribution<std::size_t> pick(0, lowest.size() - 1);
    noise[lowest[pick(rng)]] = 1.0;
  }

  std::vector<double> mix(ref.size());
  auto blend = [&](double t) {
    for (std::size_t i = 0; i < ref.size(); ++i) mix[i] = t * ref[i] + (1.0 - t) * noise[i];
    return histogram_overlap(mix, ref);
  };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (blend(mid) < overlap_target ? lo : hi) = mid;
  }
  blend(hi);
  return {reference.side, mix, MapSource::random};
}

}  // namespace attn_tutor::explain
