#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "barnet/errors.hpp"
#include "barnet/tensor.hpp"

namespace barnet {

/// H×W class-index map, row-major. Class 0 is background.
struct LabelMap {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(Index h, Index w, std::uint8_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h * w), fill) {}

  Index size() const { return height * width; }
  std::uint8_t& at(Index y, Index x) { return labels[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t at(Index y, Index x) const { return labels[static_cast<std::size_t>(y * width + x)]; }

  bool operator==(const LabelMap&) const = default;
};

inline void check_labels(const LabelMap& mask, Index num_classes) {
  for (std::size_t i = 0; i < mask.labels.size(); ++i)
    if (mask.labels[i] >= num_classes)
      throw DataError("label " + std::to_string(mask.labels[i]) + " at pixel " + std::to_string(i) +
                      " is outside [0," + std::to_string(num_classes) + ")");
}

/// K×H×W one-hot encoding of a mask.
template <typename T>
Dense<T> one_hot(const LabelMap& mask, Index num_classes) {
  check_labels(mask, num_classes);
  Dense<T> out({num_classes, mask.height, mask.width});
  const Index hw = mask.size();
  for (Index i = 0; i < hw; ++i) out.data[mask.labels[static_cast<std::size_t>(i)] * hw + i] = T(1);
  return out;
}

}  // namespace barnet
