#include "fmkd/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fmkd/rng.hpp"

namespace fmkd {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::Relu: return "relu";
    case LayerKind::BilinearUp2: return "bilinear-up2";
    case LayerKind::HeadSoftmax: return "head-softmax";
    case LayerKind::HeadSigmoid: return "head-sigmoid";
    case LayerKind::HeadExp: return "head-exp";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "conv3x3") return LayerKind::Conv3x3;
  if (name == "relu") return LayerKind::Relu;
  if (name == "bilinear-up2") return LayerKind::BilinearUp2;
  if (name == "head-softmax") return LayerKind::HeadSoftmax;
  if (name == "head-sigmoid") return LayerKind::HeadSigmoid;
  if (name == "head-exp") return LayerKind::HeadExp;
  throw std::invalid_argument("unknown layer kind: " + name);
}

void validate_spec(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw std::invalid_argument("network spec: no layers");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (l.in_channels < 1 || l.out_channels < 1)
      throw std::invalid_argument(where + ": channel counts must be positive");
    if (l.kind != LayerKind::Conv3x3 && l.in_channels != l.out_channels)
      throw std::invalid_argument(where + ": " + layer_kind_name(l.kind) +
                                  " must preserve channel count");
    if (l.kind == LayerKind::HeadSoftmax && l.in_channels < 2)
      throw std::invalid_argument(where + ": head-softmax needs at least 2 channels");
    if (i > 0 && l.in_channels != spec.layers[i - 1].out_channels)
      throw std::invalid_argument(where + ": in_channels " + std::to_string(l.in_channels) +
                                  " does not match previous out_channels " +
                                  std::to_string(spec.layers[i - 1].out_channels));
  }
}

std::size_t param_count(const NetworkSpec& spec) {
  std::size_t n = 0;
  for (const LayerSpec& l : spec.layers)
    if (l.kind == LayerKind::Conv3x3)
      n += static_cast<std::size_t>(l.out_channels) * l.in_channels * 9 + l.out_channels;
  return n;
}

NetworkSpec conv_relu_stack(NetRole role, int in_channels,
                            const std::vector<int>& hidden, int out_channels) {
  NetworkSpec spec;
  spec.role = role;
  int in = in_channels;
  for (int h : hidden) {
    spec.layers.push_back({LayerKind::Conv3x3, in, h});
    spec.layers.push_back({LayerKind::Relu, h, h});
    in = h;
  }
  spec.layers.push_back({LayerKind::Conv3x3, in, out_channels});
  validate_spec(spec);
  return spec;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const Entry& e : entries) n += e.values.size();
  return n;
}

bool ParamSet::same_shape(const ParamSet& o) const {
  if (entries.size() != o.entries.size()) return false;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name != o.entries[i].name ||
        entries[i].values.size() != o.entries[i].values.size())
      return false;
  return true;
}

ParamSet zeros_like(const ParamSet& p) {
  ParamSet z;
  z.entries.reserve(p.entries.size());
  for (const auto& e : p.entries)
    z.entries.push_back({e.name, std::vector<double>(e.values.size(), 0.0)});
  return z;
}

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  ParamSet params;
  Rng rng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind != LayerKind::Conv3x3) continue;
    const double stddev = std::sqrt(2.0 / (l.in_channels * 9.0));
    ParamSet::Entry w{"layer" + std::to_string(i) + ".weight",
                      std::vector<double>(static_cast<std::size_t>(l.out_channels) *
                                          l.in_channels * 9)};
    for (double& v : w.values) v = rng.normal(0.0, stddev);
    params.entries.push_back(std::move(w));
    params.entries.push_back({"layer" + std::to_string(i) + ".bias",
                              std::vector<double>(l.out_channels, 0.0)});
  }
  return params;
}

namespace {

// conv3x3, zero padding 1, stride 1. Accumulation order over (ci,ky,kx) is
// fixed per output value, which keeps results bitwise reproducible.
void conv3x3_forward(const DenseMap& in, const double* w, const double* b,
                     DenseMap& out) {
  const int h = in.height, wd = in.width, ci_n = in.channels, co_n = out.channels;
  for (int co = 0; co < co_n; ++co) {
    double* op = &out.values[static_cast<std::size_t>(co) * h * wd];
    std::fill(op, op + static_cast<std::size_t>(h) * wd, b[co]);
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* ip = &in.values[static_cast<std::size_t>(ci) * h * wd];
      const double* wp = w + (static_cast<std::size_t>(co) * ci_n + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        const int y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const int x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? wd - 1 : wd;
          const double wv = wp[ky * 3 + kx];
          for (int y = y0; y < y1; ++y) {
            const double* irow = ip + static_cast<std::size_t>(y + dy) * wd + dx;
            double* orow = op + static_cast<std::size_t>(y) * wd;
            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
}

void conv3x3_backward(const DenseMap& in, const double* w, const DenseMap& gout,
                      DenseMap& gin, double* gw, double* gb) {
  const int h = in.height, wd = in.width, ci_n = in.channels, co_n = gout.channels;
  for (int co = 0; co < co_n; ++co) {
    const double* gp = &gout.values[static_cast<std::size_t>(co) * h * wd];
    double acc = 0.0;
    for (int i = 0; i < h * wd; ++i) acc += gp[i];
    gb[co] += acc;
    for (int ci = 0; ci < ci_n; ++ci) {
      double* gip = &gin.values[static_cast<std::size_t>(ci) * h * wd];
      const double* ip = &in.values[static_cast<std::size_t>(ci) * h * wd];
      const std::size_t woff = (static_cast<std::size_t>(co) * ci_n + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        const int y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const int x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? wd - 1 : wd;
          const double wv = w[woff + ky * 3 + kx];
          double wacc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* grow = gp + static_cast<std::size_t>(y) * wd;
            const double* irow = ip + static_cast<std::size_t>(y + dy) * wd + dx;
            double* girow = gip + static_cast<std::size_t>(y + dy) * wd + dx;
            for (int x = x0; x < x1; ++x) {
              wacc += grow[x] * irow[x];
              girow[x] += wv * grow[x];
            }
          }
          gw[woff + ky * 3 + kx] += wacc;
        }
      }
    }
  }
}

inline void bilinear_src(int dst, int in_extent, double scale, int& i0, int& i1,
                         double& w1) {
  const double s = (dst + 0.5) * scale - 0.5;
  const double f = std::floor(s);
  i0 = static_cast<int>(f);
  w1 = s - f;
  i1 = std::clamp(i0 + 1, 0, in_extent - 1);
  i0 = std::clamp(i0, 0, in_extent - 1);
}

// Adjoint of bilinear_resize for the up-by-2 layer: scatter each output
// gradient to its four source taps with the forward weights.
DenseMap bilinear_up2_backward(const DenseMap& gout, int in_h, int in_w) {
  DenseMap gin(gout.channels, in_h, in_w);
  const double sy = static_cast<double>(in_h) / gout.height;
  const double sx = static_cast<double>(in_w) / gout.width;
  for (int y = 0; y < gout.height; ++y) {
    int y0, y1;
    double wy;
    bilinear_src(y, in_h, sy, y0, y1, wy);
    for (int x = 0; x < gout.width; ++x) {
      int x0, x1;
      double wx;
      bilinear_src(x, in_w, sx, x0, x1, wx);
      for (int c = 0; c < gout.channels; ++c) {
        const double g = gout.at(c, y, x);
        gin.at(c, y0, x0) += (1.0 - wy) * (1.0 - wx) * g;
        gin.at(c, y0, x1) += (1.0 - wy) * wx * g;
        gin.at(c, y1, x0) += wy * (1.0 - wx) * g;
        gin.at(c, y1, x1) += wy * wx * g;
      }
    }
  }
  return gin;
}

}  // namespace

DenseMap forward(const NetworkSpec& spec, const ParamSet& params,
                 const DenseMap& input, ForwardCache* cache) {
  validate_spec(spec);
  if (input.channels != spec.layers.front().in_channels)
    throw std::invalid_argument("forward: input has " + std::to_string(input.channels) +
                                " channels, first layer expects " +
                                std::to_string(spec.layers.front().in_channels));
  require_finite(input, "forward input");
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(input);
  }
  DenseMap cur = input;
  std::size_t pi = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    DenseMap next;
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        next = DenseMap(l.out_channels, cur.height, cur.width);
        conv3x3_forward(cur, params.entries[pi].values.data(),
                        params.entries[pi + 1].values.data(), next);
        pi += 2;
        break;
      }
      case LayerKind::Relu: {
        next = cur;
        for (double& v : next.values) v = v > 0.0 ? v : 0.0;
        break;
      }
      case LayerKind::BilinearUp2:
        next = bilinear_resize(cur, cur.height * 2, cur.width * 2);
        break;
      case LayerKind::HeadSoftmax:
        next = softmax_channels(cur);
        break;
      case LayerKind::HeadSigmoid: {
        next = cur;
        for (double& v : next.values) v = 1.0 / (1.0 + std::exp(-v));
        break;
      }
      case LayerKind::HeadExp: {
        next = cur;
        for (double& v : next.values) v = std::exp(v);
        break;
      }
    }
    if (!next.all_finite())
      throw std::runtime_error("forward: non-finite output at layer " + std::to_string(i) +
                               " (" + layer_kind_name(l.kind) + ")");
    cur = std::move(next);
    if (cache) cache->acts.push_back(cur);
  }
  return cur;
}

BackwardResult backward(const NetworkSpec& spec, const ParamSet& params,
                        const ForwardCache& cache, const DenseMap& grad_output) {
  if (cache.acts.size() != spec.layers.size() + 1)
    throw std::invalid_argument("backward: cache does not match spec");
  if (!grad_output.same_shape(cache.acts.back()))
    throw std::invalid_argument("backward: grad_output shape does not match cached output");

  BackwardResult res;
  res.param_grads = zeros_like(params);
  DenseMap g = grad_output;

  // param entry index just past the last conv's bias
  std::size_t pi = params.entries.size();
  for (std::size_t ri = spec.layers.size(); ri-- > 0;) {
    const LayerSpec& l = spec.layers[ri];
    const DenseMap& in = cache.acts[ri];
    const DenseMap& out = cache.acts[ri + 1];
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        pi -= 2;
        DenseMap gin(in.channels, in.height, in.width);
        conv3x3_backward(in, params.entries[pi].values.data(), g, gin,
                         res.param_grads.entries[pi].values.data(),
                         res.param_grads.entries[pi + 1].values.data());
        g = std::move(gin);
        break;
      }
      case LayerKind::Relu: {
        for (std::size_t k = 0; k < g.values.size(); ++k)
          if (in.values[k] <= 0.0) g.values[k] = 0.0;
        break;
      }
      case LayerKind::BilinearUp2:
        g = bilinear_up2_backward(g, in.height, in.width);
        break;
      case LayerKind::HeadSoftmax: {
        const int plane = out.height * out.width;
        for (int p = 0; p < plane; ++p) {
          double dot = 0.0;
          for (int c = 0; c < out.channels; ++c)
            dot += g.values[static_cast<std::size_t>(c) * plane + p] *
                   out.values[static_cast<std::size_t>(c) * plane + p];
          for (int c = 0; c < out.channels; ++c) {
            const std::size_t k = static_cast<std::size_t>(c) * plane + p;
            g.values[k] = out.values[k] * (g.values[k] - dot);
          }
        }
        break;
      }
      case LayerKind::HeadSigmoid: {
        for (std::size_t k = 0; k < g.values.size(); ++k)
          g.values[k] *= out.values[k] * (1.0 - out.values[k]);
        break;
      }
      case LayerKind::HeadExp: {
        for (std::size_t k = 0; k < g.values.size(); ++k) g.values[k] *= out.values[k];
        break;
      }
    }
  }
  res.input_grad = std::move(g);
  return res;
}

}  // namespace fmkd
