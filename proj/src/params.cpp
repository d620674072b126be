#include "fewgen/params.hpp"

namespace fewgen {

void ParameterSet::add(std::string name, Tensor value, bool trainable) {
  if (contains(name)) throw Error("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  return entries_[index_of(name)].value;
}

void ParameterSet::set(const std::string& name, Tensor value) {
  auto& e = entries_[index_of(name)];
  if (e.value.shape() != value.shape()) {
    throw Error("shape change for parameter " + name + ": " + shape_string(e.value.shape()) +
                " -> " + shape_string(value.shape()));
  }
  e.value = std::move(value);
}

bool ParameterSet::trainable(const std::string& name) const {
  return entries_[index_of(name)].trainable;
}

void ParameterSet::set_trainable(const std::string& name, bool trainable) {
  entries_[index_of(name)].trainable = trainable;
}

void ParameterSet::set_all_trainable(bool trainable) {
  for (auto& e : entries_) e.trainable = trainable;
}

std::size_t ParameterSet::flat_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.value.size();
  return n;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> out;
  out.reserve(flat_size());
  for (const auto& e : entries_)
    if (e.trainable) out.insert(out.end(), e.value.values().begin(), e.value.values().end());
  return out;
}

void ParameterSet::assign_flat(std::span<const double> flat) {
  if (flat.size() != flat_size()) {
    throw Error("assign_flat: expected " + std::to_string(flat_size()) + " values, got " +
                std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto& e : entries_) {
    if (!e.trainable) continue;
    auto n = e.value.size();
    e.value = Tensor(e.value.shape(), std::vector<double>(flat.begin() + off, flat.begin() + off + n));
    off += n;
  }
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.trainable != b.trainable || !(a.value == b.value)) return false;
  }
  return true;
}

const Tensor& GradientSet::get(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  throw Error("no gradient for parameter: " + name);
}

std::vector<double> GradientSet::flatten() const {
  std::vector<double> out;
  for (const auto& t : tensors) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

}  // namespace fewgen
