#include "attn_tutor/synthdata.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include "attn_tutor/binary_io.hpp"
#include "attn_tutor/checkpoint.hpp"
#include "attn_tutor/grid_map.hpp"
#include "attn_tutor/rng.hpp"

namespace attn_tutor::synth {

namespace {

constexpr std::string_view kMagic = "AVQD1";

// red, green, blue, yellow, magenta, cyan
constexpr double kPalette[kColorCount][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}};

bool covers(ShapeKind shape, double u, double v) {
  switch (shape) {
    case ShapeKind::square: return true;
    case ShapeKind::circle: return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
    case ShapeKind::triangle: return v >= u;
  }
  return false;
}

int shape_token(ShapeKind s) { return kCircle + static_cast<int>(s); }

struct Object {
  ShapeKind shape;
  int color;
  std::size_t cell;
};

std::uint8_t quantize(double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); }

VqaSample make_sample(const DatasetSpec& spec, std::size_t index) {
  Rng rng(derive_seed(spec.seed, {0x73616d70ULL, index}));
  const std::size_t g = spec.grid, k = g * g, s = spec.image_size, cell_px = s / g;
  const auto kind = static_cast<Template>(index % 3);
  const std::size_t slot = index / 3;  // answers cycle within each template

  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const auto queried = static_cast<ShapeKind>(pick(0, 2));
  std::vector<ShapeKind> others;
  for (int i = 0; i < 3; ++i)
    if (i != static_cast<int>(queried)) others.push_back(static_cast<ShapeKind>(i));

  VqaSample out;
  out.kind = kind;
  int targets = 0;
  int target_color = -1;
  switch (kind) {
    case Template::color:
      targets = 1;
      target_color = static_cast<int>(slot % kColorCount);
      out.answer = target_color;
      out.question = {kWhat, kColor, shape_token(queried), kQuestionMark};
      break;
    case Template::count:
      targets = 1 + static_cast<int>(slot % kMaxCount);
      out.answer = kCountBase + targets - 1;
      out.question = {kHow, kMany, shape_token(queried), kQuestionMark};
      break;
    case Template::existence:
      targets = slot % 2 == 0 ? pick(1, 2) : 0;
      out.answer = targets > 0 ? kYes : kNo;
      out.question = {kIs, kThere, shape_token(queried), kQuestionMark};
      break;
  }
  const int total = pick(std::max(3, targets), static_cast<int>(spec.max_objects));

  std::vector<std::size_t> cells(k);
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::vector<Object> objects;
  for (int i = 0; i < total; ++i) {
    const bool is_target = i < targets;
    const ShapeKind shape = is_target ? queried : others[static_cast<std::size_t>(pick(0, 1))];
    const int color = is_target && target_color >= 0 ? target_color : pick(0, kColorCount - 1);
    objects.push_back({shape, color, cells[static_cast<std::size_t>(i)]});
  }

  std::uniform_real_distribution<double> noise(0.0, spec.background_noise);
  std::vector<double> image(3 * s * s);
  for (auto& v : image) v = noise(rng);
  for (const auto& obj : objects) {
    const std::size_t r0 = (obj.cell / g) * cell_px, c0 = (obj.cell % g) * cell_px;
    for (std::size_t y = 0; y < cell_px; ++y) {
      for (std::size_t x = 0; x < cell_px; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(cell_px);
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(cell_px);
        if (!covers(obj.shape, u, v)) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          image[(ch * s + r0 + y) * s + c0 + x] = 0.1 + 0.8 * kPalette[obj.color][ch] + 0.5 * noise(rng) - 0.25 * spec.background_noise;
        }
      }
    }
  }
  out.pixels.resize(image.size());
  std::transform(image.begin(), image.end(), out.pixels.begin(), quantize);

  out.gt_attention.assign(k, 0.0);
  for (int i = 0; i < targets; ++i) out.gt_attention[objects[static_cast<std::size_t>(i)].cell] = 1.0 / targets;
  if (targets == 0) out.gt_attention.assign(k, 1.0 / static_cast<double>(k));
  return out;
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string answer_name(int answer) {
  static const char* const kNames[kAnswerClasses] = {"red", "green", "blue", "yellow", "magenta", "cyan",
                                                     "1",   "2",     "3",    "no",     "yes"};
  if (answer < 0 || answer >= kAnswerClasses) throw std::out_of_range("answer id " + std::to_string(answer));
  return kNames[answer];
}

std::string token_name(int token) {
  static const char* const kNames[kVocabSize] = {"<pad>", "what", "color", "how", "many", "is",
                                                 "there", "circle", "square", "triangle", "?"};
  if (token < 0 || token >= kVocabSize) throw std::out_of_range("token id " + std::to_string(token));
  return kNames[token];
}

void DatasetSpec::validate() const {
  if (n_samples == 0) throw std::invalid_argument("dataset: n_samples must be >= 1");
  if (grid == 0 || image_size == 0 || image_size % grid != 0) {
    throw std::invalid_argument("dataset: image_size " + std::to_string(image_size) + " must be a positive multiple of grid " +
                                std::to_string(grid));
  }
  if (max_objects < 3 || max_objects > grid * grid) {
    throw std::invalid_argument("dataset: max_objects " + std::to_string(max_objects) + " must lie in [3, " +
                                std::to_string(grid * grid) + "] for a " + std::to_string(grid) + "x" +
                                std::to_string(grid) + " grid");
  }
  if (!(background_noise >= 0.0 && background_noise <= 0.5)) throw std::invalid_argument("dataset: background_noise must lie in [0, 0.5]");
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset data;
  data.image_size = spec.image_size;
  data.grid = spec.grid;
  data.samples.resize(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) data.samples[i] = make_sample(spec, i);
  return data;
}

int answer_from_reference(const Dataset& data, const VqaSample& sample) {
  const std::size_t g = data.grid, s = data.image_size, cell_px = s / g;
  std::vector<std::size_t> marked;
  for (std::size_t c = 0; c < sample.gt_attention.size(); ++c)
    if (sample.gt_attention[c] > 0.0) marked.push_back(c);
  switch (sample.kind) {
    case Template::existence: return marked.size() == g * g ? kNo : kYes;
    case Template::count: return kCountBase + static_cast<int>(marked.size()) - 1;
    case Template::color: {
      // Brightest pixel of the marked cell, thresholded per channel.
      const std::size_t cell = marked.front();
      const std::size_t r0 = (cell / g) * cell_px, c0 = (cell % g) * cell_px;
      std::size_t best = 0;
      int best_sum = -1;
      for (std::size_t y = 0; y < cell_px; ++y) {
        for (std::size_t x = 0; x < cell_px; ++x) {
          const std::size_t p = (r0 + y) * s + c0 + x;
          const int total = sample.pixels[p] + sample.pixels[s * s + p] + sample.pixels[2 * s * s + p];
          if (total > best_sum) best_sum = total, best = p;
        }
      }
      const bool on[3] = {sample.pixels[best] > 127, sample.pixels[s * s + best] > 127, sample.pixels[2 * s * s + best] > 127};
      for (int c = 0; c < kColorCount; ++c) {
        if (on[0] == (kPalette[c][0] > 0) && on[1] == (kPalette[c][1] > 0) && on[2] == (kPalette[c][2] > 0)) return c;
      }
      return -1;
    }
  }
  return -1;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t n = indices.size(), s = data.image_size, k = data.grid * data.grid, px = 3 * s * s;
  std::vector<double> images(n * px), reference(n * k);
  Batch batch;
  batch.tokens.reserve(n * data.question_length);
  batch.labels.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& sample = data.samples.at(indices[b]);
    for (std::size_t p = 0; p < px; ++p) images[b * px + p] = sample.pixels[p] / 255.0;
    std::copy(sample.gt_attention.begin(), sample.gt_attention.end(), reference.begin() + static_cast<std::ptrdiff_t>(b * k));
    batch.tokens.insert(batch.tokens.end(), sample.question.begin(), sample.question.end());
    batch.labels.push_back(sample.answer);
  }
  batch.images = Tensor(Shape{n, 3, s, s}, std::move(images));
  batch.reference = Tensor(Shape{n, k}, std::move(reference));
  return batch;
}

std::string encode_container(const Dataset& data) {
  binary::Writer w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(data.samples.size()));
  w.u32(static_cast<std::uint32_t>(data.image_size));
  w.u32(static_cast<std::uint32_t>(data.grid));
  w.u32(3);
  w.u32(static_cast<std::uint32_t>(data.question_length));
  const std::size_t px = 3 * data.image_size * data.image_size, k = data.grid * data.grid;
  for (const auto& s : data.samples) {
    if (s.question.size() != data.question_length || s.pixels.size() != px || s.gt_attention.size() != k) {
      throw ContainerError("container: sample does not match the dataset geometry");
    }
    w.u32(static_cast<std::uint32_t>(s.kind));
    w.u32(static_cast<std::uint32_t>(s.answer));
    for (int t : s.question) w.u32(static_cast<std::uint32_t>(t));
    w.bytes(std::string_view(reinterpret_cast<const char*>(s.pixels.data()), s.pixels.size()));
    for (double v : s.gt_attention) w.f64(v);
  }
  w.u32(crc32_of(w.data()));
  return w.take();
}

Dataset decode_container(std::string_view bytes) {
  binary::Reader r(bytes, [](std::size_t offset) -> void {
    throw ContainerError("container: truncated at byte offset " + std::to_string(offset));
  });
  if (r.bytes(kMagic.size()) != kMagic) throw ContainerError("container: bad magic (expected AVQD1)");
  Dataset data;
  const std::uint32_t n = r.u32();
  data.image_size = r.u32();
  data.grid = r.u32();
  const std::uint32_t channels = r.u32();
  data.question_length = r.u32();
  if (channels != 3) throw ContainerError("container: expected 3 channels, found " + std::to_string(channels));
  const std::size_t px = 3 * data.image_size * data.image_size, k = data.grid * data.grid;
  const std::size_t record = 8 + 4 * data.question_length + px + 8 * k;
  if (record * n > r.remaining()) {
    throw ContainerError("container: truncated at byte offset " + std::to_string(bytes.size()) + " (header announces " +
                         std::to_string(n) + " records)");
  }
  data.samples.resize(n);
  for (auto& s : data.samples) {
    const auto kind = r.u32();
    if (kind > 2) throw ContainerError("container: unknown template id " + std::to_string(kind) + " at byte offset " + std::to_string(r.offset() - 4));
    s.kind = static_cast<Template>(kind);
    s.answer = static_cast<int>(r.u32());
    s.question.resize(data.question_length);
    for (auto& t : s.question) t = static_cast<int>(r.u32());
    const auto raw = r.bytes(px);
    s.pixels.assign(raw.begin(), raw.end());
    s.gt_attention.resize(k);
    for (auto& v : s.gt_attention) v = r.f64();
  }
  const std::size_t body = r.offset();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) throw ContainerError("container: " + std::to_string(r.remaining()) + " trailing bytes after checksum");
  const std::uint32_t actual = crc32_of(bytes.substr(0, body));
  if (stored != actual) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "container: checksum mismatch (stored %08x, computed %08x)", stored, actual);
    throw ContainerError(buf);
  }
  return data;
}

void write_container(const std::filesystem::path& path, const Dataset& data) { write_file(path, encode_container(data)); }

Dataset read_container(const std::filesystem::path& path) { return decode_container(read_file(path)); }

void export_reference_csv(const Dataset& data, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "gt_%06zu.csv", i);
    write_map_csv(directory / name, GridMap{data.grid, data.samples[i].gt_attention, MapSource::reference});
  }
}

}  // namespace attn_tutor::synth
