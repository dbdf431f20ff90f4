#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attn_tutor/tensor.hpp"

namespace attn_tutor {

/// Ordered collection of named trainable leaves. Insertion order is the
/// serialization order, so names and order are stable across runs.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor& add(std::string name, Tensor value);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  /// Deep copy whose tensors do not require grad.
  ParamStore snapshot() const;
  /// Deep copy that keeps requires_grad flags.
  ParamStore clone() const;
  /// Overwrites values of same-named entries; shapes must match.
  void assign(const ParamStore& other);

 private:
  std::vector<Entry> entries_;
};

}  // namespace attn_tutor
