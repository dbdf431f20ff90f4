#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>

namespace attn_tutor::binary {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  void bytes(std::string_view raw) { out_.append(raw); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(to_little(v)); }
  void u64(std::uint64_t v) { put(to_little(v)); }
  void f64(double v) { put(to_little(std::bit_cast<std::uint64_t>(v))); }
  const std::string& data() const { return out_; }
  std::string take() { return std::move(out_); }

 private:
  template <class T>
  void put(T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    out_.append(raw, sizeof(T));
  }
  std::string out_;
};

/// Bounds-checked little-endian cursor. `on_short` is invoked with the offset
/// at which a read would overrun; it must throw.
template <class OnShort>
class Reader {
 public:
  Reader(std::string_view data, OnShort on_short) : data_(data), on_short_(on_short) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  std::string_view bytes(std::size_t n) {
    need(n);
    auto view = data_.substr(pos_, n);
    pos_ += n;
    return view;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint32_t u32() { return to_little(get<std::uint32_t>()); }
  std::uint64_t u64() { return to_little(get<std::uint64_t>()); }
  double f64() { return std::bit_cast<double>(to_little(get<std::uint64_t>())); }

 private:
  void need(std::size_t n) {
    if (n > remaining()) on_short_(pos_);
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view data_;
  OnShort on_short_;
  std::size_t pos_ = 0;
};

}  // namespace attn_tutor::binary
