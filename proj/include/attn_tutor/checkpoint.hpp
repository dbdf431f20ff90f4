#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "attn_tutor/params.hpp"

namespace attn_tutor {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "ATCK1" checkpoints: magic, u32 section count, then per section
// u32 name length, utf8 name, u32 rank, u64 extents[rank], f64 payload.
// All integers and reals little-endian.
std::string encode_checkpoint(const ParamStore& params);
ParamStore decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
ParamStore load_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace attn_tutor
