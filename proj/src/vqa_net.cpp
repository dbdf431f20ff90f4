#include "attn_tutor/vqa_net.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "attn_tutor/ops.hpp"
#include "attn_tutor/rng.hpp"

namespace attn_tutor::vqa {

namespace {

std::size_t encoder_output(std::size_t size, std::size_t pad1, std::size_t pad2) {
  // conv3x3(pad1) -> pool -> conv3x3(pad2) -> pool -> conv1x1
  if (size + 2 * pad1 < 3) return 0;
  std::size_t s = (size + 2 * pad1 - 2) / 2;
  if (s + 2 * pad2 < 3) return 0;
  return (s + 2 * pad2 - 2) / 2;
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0, true); }

}  // namespace

std::pair<std::size_t, std::size_t> VqaModelConfig::encoder_padding() const {
  for (auto [p1, p2] : {std::pair<std::size_t, std::size_t>{1, 1}, {0, 1}, {1, 0}, {0, 0}}) {
    if (encoder_output(image_size, p1, p2) == region_grid) return {p1, p2};
  }
  throw std::invalid_argument("vqa config: a " + std::to_string(image_size) + " px image cannot be encoded onto a " +
                              std::to_string(region_grid) + "x" + std::to_string(region_grid) +
                              " region grid (two stride-2 pools need image_size in [4G, 4G+7])");
}

void VqaModelConfig::validate() const {
  if (region_grid == 0 || feature_dim == 0 || question_vocab == 0 || answer_classes == 0 || embed_dim == 0 ||
      attention_dim == 0 || conv1_channels == 0 || conv2_channels == 0 || classifier_hidden == 0) {
    throw std::invalid_argument("vqa config: all sizes must be positive");
  }
  if (recurrent_hidden != feature_dim) {
    throw std::invalid_argument("vqa config: recurrent_hidden must equal feature_dim for g_f = attended + g_q");
  }
  if (!(query_init_gain > 0.0)) throw std::invalid_argument("vqa config: query_init_gain must be positive");
  (void)encoder_padding();
}

VqaModel::VqaModel(VqaModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(seed, {0x76716161ULL}));
  const auto& c = config_;
  const auto d = c.feature_dim;
  auto conv = [&](const char* name, std::size_t out, std::size_t in, std::size_t kernel) {
    const double fan_in = static_cast<double>(in * kernel * kernel);
    params_.add(std::string("enc.") + name + ".w", normal_init({out, in, kernel, kernel}, std::sqrt(2.0 / fan_in), rng));
    params_.add(std::string("enc.") + name + ".b", zeros({out}));
  };
  conv("conv1", c.conv1_channels, 3, 3);
  conv("conv2", c.conv2_channels, c.conv1_channels, 3);
  // 1x1 so each region feature describes its own cell.
  conv("conv3", d, c.conv2_channels, 1);

  const auto h = c.recurrent_hidden;
  params_.add("q.embed", normal_init({c.question_vocab, c.embed_dim}, 1.0, rng));
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  params_.add("q.lstm.wx", uniform_init({c.embed_dim, 4 * h}, bound, rng));
  params_.add("q.lstm.wh", uniform_init({h, 4 * h}, bound, rng));
  auto& lstm_bias = params_.add("q.lstm.b", zeros({4 * h}));
  for (std::size_t i = h; i < 2 * h; ++i) lstm_bias.mutable_values()[i] = 1.0;  // forget gate

  const auto a = c.attention_dim;
  params_.add("att.wi", normal_init({d, a}, std::sqrt(1.0 / d), rng));
  params_.add("att.wq", normal_init({h, a}, c.query_init_gain * std::sqrt(1.0 / h), rng));
  params_.add("att.b", zeros({a}));
  params_.add("att.wp", normal_init({a, 1}, std::sqrt(1.0 / a), rng));

  params_.add("cls.w1", normal_init({d, c.classifier_hidden}, std::sqrt(2.0 / d), rng));
  params_.add("cls.b1", zeros({c.classifier_hidden}));
  params_.add("cls.w2", normal_init({c.classifier_hidden, c.answer_classes}, std::sqrt(1.0 / c.classifier_hidden), rng));
  params_.add("cls.b2", zeros({c.answer_classes}));
}

Tensor VqaModel::encode_image(const Tensor& images) const {
  const auto s = config_.image_size;
  if (images.rank() != 4 || images.size(1) != 3 || images.size(2) != s || images.size(3) != s) {
    throw ShapeError("encode_image: images=" + shape_string(images.shape()) + ", expected [N,3," + std::to_string(s) +
                     "," + std::to_string(s) + "]");
  }
  const auto [pad1, pad2] = config_.encoder_padding();
  auto x = scale(add_scalar(images, -config_.pixel_shift), config_.pixel_gain);
  x = relu(conv2d(x, params_.get("enc.conv1.w"), params_.get("enc.conv1.b"), pad1));
  x = avg_pool2(x);
  x = relu(conv2d(x, params_.get("enc.conv2.w"), params_.get("enc.conv2.b"), pad2));
  x = avg_pool2(x);
  return relu(conv2d(x, params_.get("enc.conv3.w"), params_.get("enc.conv3.b"), 0));
}

Tensor VqaModel::encode_question(std::span<const int> tokens, std::size_t length) const {
  if (length == 0 || tokens.empty()) throw std::invalid_argument("encode_question: empty question");
  if (tokens.size() % length != 0) {
    throw ShapeError("encode_question: " + std::to_string(tokens.size()) + " tokens do not split into questions of length " +
                     std::to_string(length));
  }
  for (int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.question_vocab) {
      throw std::invalid_argument("encode_question: token id " + std::to_string(id) + " outside vocabulary of " +
                                  std::to_string(config_.question_vocab));
    }
  }
  const std::size_t n = tokens.size() / length;
  const auto h = config_.recurrent_hidden;
  LstmState state{Tensor(Shape{n, h}), Tensor(Shape{n, h})};
  std::vector<int> step_ids(n);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < n; ++i) step_ids[i] = tokens[i * length + t];
    const auto x = embedding(params_.get("q.embed"), step_ids);
    state = lstm_step(x, state, params_.get("q.lstm.wx"), params_.get("q.lstm.wh"), params_.get("q.lstm.b"));
  }
  return state.hidden;
}

Attended VqaModel::attend(const Tensor& regions, const Tensor& question) const {
  const auto d = config_.feature_dim;
  if (regions.rank() != 3 || regions.size(2) != d || question.rank() != 2 || question.size(0) != regions.size(0) ||
      question.size(1) != d) {
    throw ShapeError("attend: regions=" + shape_string(regions.shape()) + ", question=" + shape_string(question.shape()) +
                     "; expected [N,K," + std::to_string(d) + "] and [N," + std::to_string(d) + "]");
  }
  const std::size_t n = regions.size(0), k = regions.size(1);
  const auto a = config_.attention_dim;
  auto query = reshape(linear(question, params_.get("att.wq"), params_.get("att.b")), {n, 1, a});
  auto hidden = tanh(add(matmul(regions, params_.get("att.wi")), query));  // [N,K,a]
  auto scores = reshape(matmul(hidden, params_.get("att.wp")), {n, k});
  auto alpha = softmax(scores);
  auto attended = reshape(matmul(reshape(alpha, {n, 1, k}), regions), {n, d});
  return {alpha, add(attended, question)};
}

Tensor VqaModel::logits(const Tensor& fused) const {
  if (fused.rank() != 2 || fused.size(1) != config_.feature_dim) {
    throw ShapeError("classify: fused=" + shape_string(fused.shape()) + ", expected [N," +
                     std::to_string(config_.feature_dim) + "]");
  }
  const auto hidden = relu(linear(fused, params_.get("cls.w1"), params_.get("cls.b1")));
  return linear(hidden, params_.get("cls.w2"), params_.get("cls.b2"));
}

Tensor VqaModel::classify(const Tensor& fused) const { return log_softmax(logits(fused)); }

FeatureBundle VqaModel::forward(const Tensor& images, std::span<const int> tokens, std::size_t length) const {
  FeatureBundle out;
  out.activation = encode_image(images);
  out.regions = regions_from_activation(out.activation);
  out.question = encode_question(tokens, length);
  if (out.question.size(0) != images.size(0)) {
    throw ShapeError("forward: " + std::to_string(images.size(0)) + " images but " +
                     std::to_string(out.question.size(0)) + " questions");
  }
  auto att = attend(out.regions, out.question);
  out.alpha = att.alpha;
  out.fused = att.fused;
  out.logits = logits(out.fused);
  return out;
}

Tensor VqaModel::head_logits(const Tensor& activation, const Tensor& question) const {
  return logits(attend(regions_from_activation(activation), question).fused);
}

VqaModel VqaModel::snapshot() const { return VqaModel(config_, params_.snapshot()); }

VqaModel VqaModel::clone() const { return VqaModel(config_, params_.clone()); }

Tensor regions_from_activation(const Tensor& activation) {
  if (activation.rank() != 4) throw ShapeError("regions_from_activation: expected [N,d,G,G], got " + shape_string(activation.shape()));
  const std::size_t n = activation.size(0), d = activation.size(1), k = activation.size(2) * activation.size(3);
  return permute(reshape(activation, {n, d, k}), {0, 2, 1});
}

bool is_feature_param(std::string_view name) { return !name.starts_with("cls."); }

bool is_generator_param(std::string_view name) { return name.starts_with("att.") || name.starts_with("q."); }

}  // namespace attn_tutor::vqa
