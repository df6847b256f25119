#include "fedstage/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "fedstage/errors.hpp"

namespace fedstage {

size_t TensorLayout::total() const {
  size_t n = 0;
  for (const auto& e : entries) n += e.count();
  return n;
}

const LayoutEntry* TensorLayout::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

size_t TensorLayout::offset_of(std::string_view name) const {
  size_t off = 0;
  for (const auto& e : entries) {
    if (e.name == name) return off;
    off += e.count();
  }
  fail(ErrorCode::ShapeMismatch, "layout has no entry named '" + std::string(name) + "'");
}

void TensorLayout::validate() const {
  if (entries.empty()) fail(ErrorCode::Format, "layout has no entries");
  std::unordered_set<std::string_view> seen;
  for (const auto& e : entries) {
    if (e.name.empty()) fail(ErrorCode::Format, "layout entry with empty name");
    if (!seen.insert(e.name).second) {
      fail(ErrorCode::Format, "duplicate layout entry '" + e.name + "'");
    }
    if (e.dims.empty()) fail(ErrorCode::Format, "entry '" + e.name + "' has no dims");
    for (uint32_t d : e.dims) {
      if (d == 0) fail(ErrorCode::Format, "entry '" + e.name + "' has a zero dim");
    }
  }
  if (total() == 0) fail(ErrorCode::Format, "layout has zero total parameters");
}

std::span<double> ParameterSet::entry(std::string_view name) {
  const size_t off = layout.offset_of(name);
  return {values.data() + off, layout.find(name)->count()};
}

std::span<const double> ParameterSet::entry(std::string_view name) const {
  const size_t off = layout.offset_of(name);
  return {values.data() + off, layout.find(name)->count()};
}

void ParameterSet::check() const {
  layout.validate();
  if (values.size() != layout.total()) {
    fail(ErrorCode::ShapeMismatch, "parameter vector length does not match layout");
  }
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorCode::Format, "non-finite parameter value");
  }
}

}  // namespace fedstage
