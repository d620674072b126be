#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fewgen/tensor.hpp"

namespace fewgen {

/// Named tensors in insertion order, each flagged trainable or frozen.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  void add(std::string name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  /// Replaces a tensor's value; the shape must not change.
  void set(const std::string& name, Tensor value);
  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);
  void set_all_trainable(bool trainable);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Length of the concatenation of all trainable tensors.
  std::size_t flat_size() const;
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  bool operator==(const ParameterSet& other) const;

 private:
  std::size_t index_of(const std::string& name) const;

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One gradient tensor per trainable parameter, in parameter order.
struct GradientSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  const Tensor& get(const std::string& name) const;
  std::vector<double> flatten() const;
};

}  // namespace fewgen
