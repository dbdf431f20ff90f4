#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "attn_tutor/tensor.hpp"

namespace attn_tutor::synth {

enum class Template : std::uint32_t { color = 0, count = 1, existence = 2 };
enum class ShapeKind { circle = 0, square = 1, triangle = 2 };

// Token ids. 0 is padding.
enum Token : int { kPad = 0, kWhat, kColor, kHow, kMany, kIs, kThere, kCircle, kSquare, kTriangle, kQuestionMark, kVocabSize };

// Answer classes: 0..5 colours, 6..8 counts 1..3, 9 no, 10 yes.
inline constexpr int kColorCount = 6;
inline constexpr int kCountBase = 6;
inline constexpr int kMaxCount = 3;
inline constexpr int kNo = 9;
inline constexpr int kYes = 10;
inline constexpr int kAnswerClasses = 11;
inline constexpr std::size_t kQuestionLength = 4;

std::string answer_name(int answer);
std::string token_name(int token);

struct DatasetSpec {
  std::size_t n_samples = 2000;
  std::size_t image_size = 28;
  std::size_t grid = 7;
  std::size_t max_objects = 5;  // objects per scene lie in [3, max_objects]
  double background_noise = 0.15;
  std::uint64_t seed = 7;

  /// Throws std::invalid_argument for infeasible specs.
  void validate() const;
};

struct VqaSample {
  Template kind = Template::color;
  int answer = 0;
  std::vector<int> question;          // kQuestionLength ids
  std::vector<std::uint8_t> pixels;   // channel-major [3][S][S], value / 255 is the intensity
  std::vector<double> gt_attention;   // G*G, on the simplex
};

struct Dataset {
  std::size_t image_size = 0;
  std::size_t grid = 0;
  std::size_t question_length = kQuestionLength;
  std::vector<VqaSample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Objects sit on single lattice cells; gt_attention is uniform over the
/// cells holding the queried shape (uniform over the grid when absent).
/// Deterministic in spec.seed; sample i depends only on (seed, i).
Dataset generate(const DatasetSpec& spec);

/// Answer read off the scene at the cells gt_attention marks.
int answer_from_reference(const Dataset& data, const VqaSample& sample);

struct Batch {
  Tensor images;             // [N,3,S,S]
  std::vector<int> tokens;   // N * question_length
  std::vector<int> labels;
  Tensor reference;          // [N,K]
};
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "AVQD1" container, little-endian:
//   magic, u32 n, u32 image_size, u32 grid, u32 channels (3), u32 question_length,
//   per record: u32 template, u32 answer, u32 tokens[question_length],
//               u8 pixels[3*S*S], f64 gt[G*G],
//   u32 CRC-32 (zlib polynomial) of every preceding byte.
std::string encode_container(const Dataset& data);
Dataset decode_container(std::string_view bytes);
void write_container(const std::filesystem::path& path, const Dataset& data);
Dataset read_container(const std::filesystem::path& path);

/// One CSV grid per sample, `gt_<index>.csv`, zero-padded to 6 digits.
void export_reference_csv(const Dataset& data, const std::filesystem::path& directory);

}  // namespace attn_tutor::synth
