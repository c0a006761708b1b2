#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fmkd {

/// Channel-major (C,H,W) grid of doubles, row-major within a channel.
/// The one tensor type shared by images, logits, probabilities and
/// detection head fields.
struct DenseMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  DenseMap() = default;
  DenseMap(int c, int h, int w, double fill = 0.0);

  double& at(int c, int y, int x) { return values[index(c, y, x)]; }
  double at(int c, int y, int x) const { return values[index(c, y, x)]; }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }
  std::size_t size() const { return values.size(); }
  bool same_shape(const DenseMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool all_finite() const;
};

/// Integer class-id grid; 255 marks pixels excluded from supervised scoring.
struct LabelMap {
  static constexpr int kIgnore = 255;

  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> ids;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x) { return ids[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const LabelMap& o) const { return height == o.height && width == o.width; }
};

/// Per-pixel channel softmax with max-subtraction. Requires channels >= 2.
DenseMap softmax_channels(const DenseMap& logits);

/// Channel-wise bilinear interpolation, half-pixel centers
/// (align-corners=false), clamped at the edges.
DenseMap bilinear_resize(const DenseMap& map, int out_h, int out_w);

/// Nearest-neighbor resampling for label grids; never invents a class id.
LabelMap nearest_resize(const LabelMap& labels, int out_h, int out_w);

/// Per-pixel argmax over channels; ties resolved to the smallest index.
LabelMap argmax_channels(const DenseMap& map);

/// Throws std::invalid_argument naming `what` if the map holds NaN/Inf.
void require_finite(const DenseMap& map, const std::string& what);

}  // namespace fmkd
