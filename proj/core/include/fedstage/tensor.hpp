#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedstage {

struct LayoutEntry {
  std::string name;
  std::vector<uint32_t> dims;

  size_t count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }

  bool operator==(const LayoutEntry&) const = default;
};

// Ordered, named description of the flat parameter vector. Two parameter
// sets can be exchanged or averaged only when their layouts compare equal.
struct TensorLayout {
  std::vector<LayoutEntry> entries;

  size_t total() const;
  const LayoutEntry* find(std::string_view name) const;
  size_t offset_of(std::string_view name) const;  // throws ShapeMismatch
  void validate() const;

  bool operator==(const TensorLayout&) const = default;
};

struct ParameterSet {
  TensorLayout layout;
  std::vector<double> values;

  std::span<double> entry(std::string_view name);
  std::span<const double> entry(std::string_view name) const;

  // Checks length against layout and that every value is finite.
  void check() const;

  bool operator==(const ParameterSet&) const = default;
};

}  // namespace fedstage
