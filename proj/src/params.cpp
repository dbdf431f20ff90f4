#include "attn_tutor/params.hpp"

#include <algorithm>
#include <stdexcept>

namespace attn_tutor {

Tensor& ParamStore::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("params: duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

Tensor& ParamStore::get(std::string_view name) {
  for (auto& [key, value] : entries_)
    if (key == name) return value;
  throw std::out_of_range("params: no parameter named '" + std::string(name) + "'");
}

const Tensor& ParamStore::get(std::string_view name) const {
  for (const auto& [key, value] : entries_)
    if (key == name) return value;
  throw std::out_of_range("params: no parameter named '" + std::string(name) + "'");
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& entry : entries_) n += entry.second.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& entry : entries_) entry.second.zero_grad();
}

ParamStore ParamStore::snapshot() const {
  ParamStore copy;
  for (const auto& [name, value] : entries_) copy.add(name, value.detach());
  return copy;
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  for (const auto& [name, value] : entries_) {
    auto t = value.detach();
    t.set_requires_grad(value.requires_grad());
    copy.add(name, std::move(t));
  }
  return copy;
}

void ParamStore::assign(const ParamStore& other) {
  for (const auto& [name, value] : other) {
    auto& target = get(name);
    if (target.shape() != value.shape()) {
      throw ShapeError("params: shape mismatch for '" + name + "': " + shape_string(target.shape()) + " vs " +
                       shape_string(value.shape()));
    }
    std::copy(value.values().begin(), value.values().end(), target.mutable_values().begin());
  }
}

}  // namespace attn_tutor
