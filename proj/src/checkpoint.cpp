#include "attn_tutor/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "attn_tutor/binary_io.hpp"

namespace attn_tutor {

namespace {

constexpr std::string_view kMagic = "ATCK1";

}  // namespace

std::string encode_checkpoint(const ParamStore& params) {
  binary::Writer w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(tensor.rank()));
    for (auto extent : tensor.shape()) w.u64(extent);
    for (double v : tensor.values()) w.f64(v);
  }
  return w.take();
}

ParamStore decode_checkpoint(std::string_view bytes) {
  auto short_read = [](std::size_t offset) -> void {
    throw CheckpointError("checkpoint: truncated at byte offset " + std::to_string(offset));
  };
  binary::Reader r(bytes, short_read);
  if (r.bytes(kMagic.size()) != kMagic) throw CheckpointError("checkpoint: bad magic (expected ATCK1)");
  const auto count = r.u32();
  ParamStore params;
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto name_len = r.u32();
    std::string name(r.bytes(name_len));
    const auto rank = r.u32();
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank " + std::to_string(rank) + " for '" + name + "'");
    Shape shape(rank);
    for (auto& extent : shape) extent = static_cast<std::size_t>(r.u64());
    const auto n = element_count(shape);
    if (n > r.remaining() / 8) {
      throw CheckpointError("checkpoint: truncated at byte offset " + std::to_string(r.offset()) + " in '" + name + "'");
    }
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) {
    throw CheckpointError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes after offset " +
                          std::to_string(r.offset()));
  }
  return params;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  write_file(path, encode_checkpoint(params));
}

ParamStore load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace attn_tutor
