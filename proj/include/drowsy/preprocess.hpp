#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "drowsy/error.hpp"

namespace drowsy {

constexpr double kScaledLowerClamp = -1.0;
constexpr double kScaledUpperClamp = 2.0;

// Per-feature min-max scaling into [0, 1], fitted on training data only.
struct MinMaxScaler {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t size() const { return min.size(); }

  void validate() const {
    if (min.size() != max.size()) fail(ErrorKind::Structure, "scaler min/max lengths differ");
    for (std::size_t i = 0; i < min.size(); ++i)
      if (!(min[i] <= max[i]) || !std::isfinite(min[i]) || !std::isfinite(max[i]))
        fail(ErrorKind::Structure, "scaler feature " + std::to_string(i) + " has min > max");
  }

  /// Constant features map to 0. Values outside the fitted range follow the same
  /// affine map and are clamped to [-1, 2].
  std::vector<double> transform(std::span<const double> x) const {
    if (x.size() != min.size())
      fail(ErrorKind::InputShape, "scaler expects " + std::to_string(min.size()) +
                                      " features, got " + std::to_string(x.size()));
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double range = max[i] - min[i];
      if (!(range > 0.0)) {
        y[i] = 0.0;
        continue;
      }
      y[i] = std::clamp((x[i] - min[i]) / range, kScaledLowerClamp, kScaledUpperClamp);
    }
    return y;
  }
};

template <class Rows>
MinMaxScaler fit_scaler(const Rows& rows) {
  auto it = std::begin(rows);
  if (it == std::end(rows)) fail(ErrorKind::Fit, "cannot fit a scaler on an empty collection");
  const std::size_t width = std::size(*it);
  MinMaxScaler scaler{std::vector<double>(std::begin(*it), std::end(*it)),
                      std::vector<double>(std::begin(*it), std::end(*it))};
  std::size_t row_index = 0;
  for (const auto& row : rows) {
    if (std::size(row) != width)
      fail(ErrorKind::InputShape, "row " + std::to_string(row_index) + " has " +
                                      std::to_string(std::size(row)) + " features, expected " +
                                      std::to_string(width));
    std::size_t i = 0;
    for (double v : row) {
      if (!std::isfinite(v))
        fail(ErrorKind::NumericInput, "non-finite value in row " + std::to_string(row_index));
      scaler.min[i] = std::min(scaler.min[i], v);
      scaler.max[i] = std::max(scaler.max[i], v);
      ++i;
    }
    ++row_index;
  }
  return scaler;
}

}  // namespace drowsy
