#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "attn_tutor/synthdata.hpp"
#include "doctest.h"

using namespace attn_tutor::synth;

namespace {

Dataset small(std::size_t n = 120, std::uint64_t seed = 7) {
  DatasetSpec spec;
  spec.n_samples = n;
  spec.seed = seed;
  return generate(spec);
}

bool same(const VqaSample& a, const VqaSample& b) {
  return a.kind == b.kind && a.answer == b.answer && a.question == b.question && a.pixels == b.pixels &&
         a.gt_attention == b.gt_attention;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  CHECK(encode_container(small()) == encode_container(small()));
  CHECK(encode_container(small(120, 8)) != encode_container(small()));
  // Sample i depends on (seed, i) only.
  const auto a = small(30), b = small(90);
  for (std::size_t i = 0; i < 30; ++i) CHECK(same(a.samples[i], b.samples[i]));
}

TEST_CASE("reference maps follow the construction") {
  const auto data = small(300);
  bool saw_absent = false, saw_three = false;
  for (const auto& s : data.samples) {
    const double total = std::accumulate(s.gt_attention.begin(), s.gt_attention.end(), 0.0);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.question.size() == kQuestionLength);
    if (s.kind == Template::existence && s.answer == kNo) {
      saw_absent = true;
      for (double v : s.gt_attention) CHECK(v == 1.0 / 49.0);
    }
    if (s.kind == Template::count && s.answer == kCountBase + 2) {
      saw_three = true;
      std::size_t marked = 0;
      for (double v : s.gt_attention) {
        if (v == 0.0) continue;
        CHECK(v == 1.0 / 3.0);
        ++marked;
      }
      CHECK(marked == 3);
      CHECK(s.question[2] != kPad);
    }
  }
  CHECK(saw_absent);
  CHECK(saw_three);
}

TEST_CASE("answers are recoverable from the reference map") {
  const auto data = small(600);
  for (const auto& s : data.samples) CHECK(answer_from_reference(data, s) == s.answer);
}

TEST_CASE("vocabulary is closed and answers are balanced per template") {
  const auto data = small(2000);
  std::map<Template, std::map<int, int>> counts;
  for (const auto& s : data.samples) {
    for (int t : s.question) CHECK((t > kPad && t < kVocabSize));
    CHECK((s.answer >= 0 && s.answer < kAnswerClasses));
    ++counts[s.kind][s.answer];
  }
  for (const auto& [kind, per_answer] : counts) {
    int total = 0;
    for (const auto& [a, c] : per_answer) total += c;
    const double uniform = static_cast<double>(total) / static_cast<double>(per_answer.size());
    for (const auto& [a, c] : per_answer) CHECK(std::abs(c - uniform) <= 0.2 * uniform);
  }
  CHECK(counts[Template::color].size() == kColorCount);
  CHECK(counts[Template::count].size() == kMaxCount);
  CHECK(counts[Template::existence].size() == 2);
}

TEST_CASE("infeasible specs are rejected") {
  DatasetSpec spec;
  spec.n_samples = 0;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec = {};
  spec.max_objects = 50;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec = {};
  spec.image_size = 30;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec = {};
  spec.background_noise = 0.9;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
}

TEST_CASE("container round trip") {
  const auto data = small(100);
  const auto back = decode_container(encode_container(data));
  CHECK(back.image_size == data.image_size);
  CHECK(back.grid == data.grid);
  CHECK(back.question_length == data.question_length);
  REQUIRE(back.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) CHECK(same(back.samples[i], data.samples[i]));

  const auto path = std::filesystem::temp_directory_path() / "attn_tutor_roundtrip.avqd";
  write_container(path, data);
  CHECK(encode_container(read_container(path)) == encode_container(data));
  std::filesystem::remove(path);
}

TEST_CASE("empty container holds zero samples") {
  Dataset empty;
  empty.image_size = 28;
  empty.grid = 7;
  CHECK(decode_container(encode_container(empty)).size() == 0);
}

TEST_CASE("container errors") {
  const auto bytes = encode_container(small(5));
  SUBCASE("truncation names the byte offset") {
    try {
      (void)decode_container(bytes.substr(0, 1000));
      FAIL("expected ContainerError");
    } catch (const ContainerError& e) {
      CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_container(bad), doctest::Contains("magic"), ContainerError);
  }
  SUBCASE("flipped payload byte fails the checksum") {
    auto bad = bytes;
    bad[bytes.size() / 2] ^= 0x01;
    CHECK_THROWS_WITH_AS(decode_container(bad), doctest::Contains("checksum"), ContainerError);
  }
  SUBCASE("missing file") { CHECK_THROWS(read_container("/nonexistent/attn_tutor.avqd")); }
}

TEST_CASE("reference maps export as csv") {
  const auto dir = std::filesystem::temp_directory_path() / "attn_tutor_csv";
  std::filesystem::remove_all(dir);
  export_reference_csv(small(3), dir);
  CHECK(std::filesystem::exists(dir / "gt_000002.csv"));
  std::ifstream in(dir / "gt_000000.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) rows += !line.empty();
  CHECK(rows >= 7);
  std::filesystem::remove_all(dir);
}

TEST_CASE("batches stack samples") {
  const auto data = small(10);
  const std::vector<std::size_t> idx{3, 7};
  const auto b = make_batch(data, idx);
  CHECK(b.images.shape() == attn_tutor::Shape{2, 3, 28, 28});
  CHECK(b.reference.shape() == attn_tutor::Shape{2, 49});
  CHECK(b.labels == std::vector<int>{data.samples[3].answer, data.samples[7].answer});
  CHECK(b.tokens.size() == 8);
  CHECK(b.images.values()[0] == data.samples[3].pixels[0] / 255.0);
}
