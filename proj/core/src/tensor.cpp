#include "fmkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fmkd {

DenseMap::DenseMap(int c, int h, int w, double fill)
    : channels(c), height(h), width(w),
      values(static_cast<std::size_t>(c) * h * w, fill) {
  if (c < 0 || h < 0 || w < 0) throw std::invalid_argument("DenseMap: negative extent");
}

bool DenseMap::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

LabelMap::LabelMap(int h, int w, std::uint8_t fill)
    : height(h), width(w), ids(static_cast<std::size_t>(h) * w, fill) {
  if (h < 0 || w < 0) throw std::invalid_argument("LabelMap: negative extent");
}

void require_finite(const DenseMap& map, const std::string& what) {
  if (!map.all_finite())
    throw std::invalid_argument(what + ": non-finite values");
}

DenseMap softmax_channels(const DenseMap& logits) {
  if (logits.channels < 2)
    throw std::invalid_argument("softmax_channels: need at least 2 channels");
  DenseMap out(logits.channels, logits.height, logits.width);
  const int plane = logits.height * logits.width;
  for (int p = 0; p < plane; ++p) {
    double mx = logits.values[p];
    for (int c = 1; c < logits.channels; ++c)
      mx = std::max(mx, logits.values[static_cast<std::size_t>(c) * plane + p]);
    double sum = 0.0;
    for (int c = 0; c < logits.channels; ++c) {
      const double e = std::exp(logits.values[static_cast<std::size_t>(c) * plane + p] - mx);
      out.values[static_cast<std::size_t>(c) * plane + p] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < logits.channels; ++c)
      out.values[static_cast<std::size_t>(c) * plane + p] *= inv;
  }
  return out;
}

namespace {

// Half-pixel source coordinate split into base index and weight, clamped.
inline void src_coord(int dst, int in_extent, double scale, int& i0, int& i1, double& w1) {
  const double s = (dst + 0.5) * scale - 0.5;
  const double f = std::floor(s);
  i0 = static_cast<int>(f);
  w1 = s - f;
  i1 = i0 + 1;
  i0 = std::clamp(i0, 0, in_extent - 1);
  i1 = std::clamp(i1, 0, in_extent - 1);
}

}  // namespace

DenseMap bilinear_resize(const DenseMap& map, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("bilinear_resize: zero-sized output");
  if (out_h == map.height && out_w == map.width) return map;
  DenseMap out(map.channels, out_h, out_w);
  const double sy = static_cast<double>(map.height) / out_h;
  const double sx = static_cast<double>(map.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    int y0, y1;
    double wy;
    src_coord(y, map.height, sy, y0, y1, wy);
    for (int x = 0; x < out_w; ++x) {
      int x0, x1;
      double wx;
      src_coord(x, map.width, sx, x0, x1, wx);
      for (int c = 0; c < map.channels; ++c) {
        const double top = (1.0 - wx) * map.at(c, y0, x0) + wx * map.at(c, y0, x1);
        const double bot = (1.0 - wx) * map.at(c, y1, x0) + wx * map.at(c, y1, x1);
        out.at(c, y, x) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

LabelMap nearest_resize(const LabelMap& labels, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("nearest_resize: zero-sized output");
  LabelMap out(out_h, out_w);
  const double sy = static_cast<double>(labels.height) / out_h;
  const double sx = static_cast<double>(labels.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    int ny = std::clamp(static_cast<int>(std::floor((y + 0.5) * sy)), 0, labels.height - 1);
    for (int x = 0; x < out_w; ++x) {
      int nx = std::clamp(static_cast<int>(std::floor((x + 0.5) * sx)), 0, labels.width - 1);
      out.at(y, x) = labels.at(ny, nx);
    }
  }
  return out;
}

LabelMap argmax_channels(const DenseMap& map) {
  LabelMap out(map.height, map.width);
  const int plane = map.height * map.width;
  for (int p = 0; p < plane; ++p) {
    int best = 0;
    double bv = map.values[p];
    for (int c = 1; c < map.channels; ++c) {
      const double v = map.values[static_cast<std::size_t>(c) * plane + p];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    out.ids[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace fmkd
