#include "fmkd/det_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fmkd {
namespace {

constexpr double kLogFloor = 1e-30;

inline double safe_log(double x) { return std::log(x < kLogFloor ? kLogFloor : x); }

// BCE with 0*log0 = 0 on both coefficients.
inline double bce(double target, double prob) {
  double s = 0.0;
  if (target > 0.0) s -= target * safe_log(prob);
  if (target < 1.0) s -= (1.0 - target) * safe_log(1.0 - prob);
  return s;
}

inline int level_extent(int extent, int stride) { return (extent + stride - 1) / stride; }

void check_level_geometry(const DetField& a, const DetField& b) {
  if (a.levels.size() != b.levels.size())
    throw std::invalid_argument("det loss: level count mismatch");
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    if (!a.levels[l].cls.same_shape(b.levels[l].cls) ||
        !a.levels[l].reg.same_shape(b.levels[l].reg) ||
        !a.levels[l].center.same_shape(b.levels[l].center))
      throw std::invalid_argument("det loss: geometry mismatch at level " + std::to_string(l));
  }
}

}  // namespace

void validate_levels(const std::vector<LevelSpec>& levels) {
  if (levels.empty()) throw std::invalid_argument("levels: empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i].stride < 1) throw std::invalid_argument("levels: stride must be >= 1");
    if (i > 0 && levels[i].stride <= levels[i - 1].stride)
      throw std::invalid_argument("levels: strides must be strictly increasing");
    if (i > 0 && levels[i].range_min != levels[i - 1].range_max)
      throw std::invalid_argument("levels: ranges must partition (0, inf)");
  }
  if (levels.front().range_min != 0.0)
    throw std::invalid_argument("levels: first range must start at 0");
  if (levels.back().range_max < kInfRange)
    throw std::invalid_argument("levels: last range must be unbounded");
}

long DetTargets::positive_count() const {
  long n = 0;
  for (const auto& lvl : levels)
    for (std::uint8_t p : lvl.positive) n += p;
  return n;
}

DetTargets assign_targets(const GroundTruth& gt, const std::vector<LevelSpec>& levels,
                          int image_h, int image_w, int num_classes) {
  validate_levels(levels);
  for (const GtBox& b : gt.boxes) {
    if (!(b.x1 < b.x2 && b.y1 < b.y2))
      throw std::invalid_argument("assign_targets: degenerate box");
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > image_w || b.y2 > image_h)
      throw std::invalid_argument("assign_targets: box outside image");
    if (b.cls < 0 || b.cls >= num_classes)
      throw std::invalid_argument("assign_targets: class id out of range");
  }

  DetTargets targets;
  for (const LevelSpec& lvl : levels) {
    const int lh = level_extent(image_h, lvl.stride);
    const int lw = level_extent(image_w, lvl.stride);
    DetLevelTargets t;
    t.cls_onehot = DenseMap(num_classes, lh, lw);
    t.reg = DenseMap(4, lh, lw, 1.0);
    t.center = DenseMap(1, lh, lw);
    t.positive.assign(static_cast<std::size_t>(lh) * lw, 0);

    for (int i = 0; i < lh; ++i) {
      const double cy = lvl.stride / 2 + static_cast<double>(i) * lvl.stride;
      for (int j = 0; j < lw; ++j) {
        const double cx = lvl.stride / 2 + static_cast<double>(j) * lvl.stride;
        int best = -1;
        double best_area = 0.0;
        double bl = 0, bt = 0, br = 0, bb = 0;
        for (std::size_t k = 0; k < gt.boxes.size(); ++k) {
          const GtBox& box = gt.boxes[k];
          const double l = cx - box.x1, tt = cy - box.y1;
          const double r = box.x2 - cx, b = box.y2 - cy;
          if (l <= 0 || tt <= 0 || r <= 0 || b <= 0) continue;
          const double md = std::max(std::max(l, tt), std::max(r, b));
          if (!(md > lvl.range_min && md <= lvl.range_max)) continue;
          if (best < 0 || box.area() < best_area) {
            best = static_cast<int>(k);
            best_area = box.area();
            bl = l;
            bt = tt;
            br = r;
            bb = b;
          }
        }
        if (best >= 0) {
          t.positive[static_cast<std::size_t>(i) * lw + j] = 1;
          t.cls_onehot.at(gt.boxes[best].cls, i, j) = 1.0;
          t.reg.at(0, i, j) = bl;
          t.reg.at(1, i, j) = bt;
          t.reg.at(2, i, j) = br;
          t.reg.at(3, i, j) = bb;
          t.center.at(0, i, j) = centerness_target(bl, bt, br, bb);
        }
      }
    }
    targets.levels.push_back(std::move(t));
  }
  return targets;
}

double centerness_target(double l, double t, double r, double b) {
  if (l <= 0 || t <= 0 || r <= 0 || b <= 0)
    throw std::invalid_argument("centerness_target: distances must be positive");
  return std::sqrt((std::min(l, r) / std::max(l, r)) * (std::min(t, b) / std::max(t, b)));
}

GiouResult giou_pair(const std::array<double, 4>& ta, const std::array<double, 4>& tb) {
  for (int i = 0; i < 4; ++i)
    if (ta[i] <= 0 || tb[i] <= 0)
      throw std::invalid_argument("giou_pair: distances must be positive");

  const double la = ta[0], taa = ta[1], ra = ta[2], ba = ta[3];
  const double lb = tb[0], tbb = tb[1], rb = tb[2], bb = tb[3];

  const double wi = std::min(la, lb) + std::min(ra, rb);
  const double hi = std::min(taa, tbb) + std::min(ba, bb);
  const double inter = wi * hi;
  const double area_a = (la + ra) * (taa + ba);
  const double area_b = (lb + rb) * (tbb + bb);
  const double uni = area_a + area_b - inter;
  const double wc = std::max(la, lb) + std::max(ra, rb);
  const double hc = std::max(taa, tbb) + std::max(ba, bb);
  const double enc = wc * hc;

  GiouResult res;
  res.giou = inter / uni + uni / enc - 1.0;

  // Branch indicators; at ties both min and max attribute the derivative to
  // tb, which makes the gradient vanish exactly at tb == ta.
  const double d_inter[4] = {(lb <= la) ? hi : 0.0, (tbb <= taa) ? wi : 0.0,
                             (rb <= ra) ? hi : 0.0, (bb <= ba) ? wi : 0.0};
  const double d_area[4] = {tbb + bb, lb + rb, tbb + bb, lb + rb};
  const double d_enc[4] = {(lb >= la) ? hc : 0.0, (tbb >= taa) ? wc : 0.0,
                           (rb >= ra) ? hc : 0.0, (bb >= ba) ? wc : 0.0};
  for (int i = 0; i < 4; ++i) {
    const double d_uni = d_area[i] - d_inter[i];
    res.grad_b[i] = (d_inter[i] * uni - inter * d_uni) / (uni * uni) +
                    (d_uni * enc - uni * d_enc[i]) / (enc * enc);
  }
  return res;
}

DetLossResult det_distill_loss(const DetField& teacher, const DetField& student) {
  check_level_geometry(teacher, student);
  for (std::size_t l = 0; l < teacher.levels.size(); ++l) {
    const DetLevel& t = teacher.levels[l];
    if (!t.cls.all_finite() || !t.reg.all_finite() || !t.center.all_finite())
      throw std::invalid_argument("det_distill_loss: non-finite teacher values at level " +
                                  std::to_string(l));
  }

  DetLossResult res;
  for (const DetLevel& t : teacher.levels)
    for (double v : t.cls.values) res.n_pos += v;
  const double npos = std::max(res.n_pos, 1.0);
  const double inv_npos = 1.0 / npos;

  double cls_sum = 0.0, reg_sum = 0.0, center_sum = 0.0;
  for (std::size_t l = 0; l < teacher.levels.size(); ++l) {
    const DetLevel& t = teacher.levels[l];
    const DetLevel& s = student.levels[l];
    const int plane = t.cls.height * t.cls.width;
    const int nc = t.cls.channels;

    DetLevelGrads g;
    g.cls = DenseMap(nc, t.cls.height, t.cls.width);
    g.reg = DenseMap(4, t.cls.height, t.cls.width);
    g.center = DenseMap(1, t.cls.height, t.cls.width);

    for (int p = 0; p < plane; ++p) {
      double wloc = 0.0;
      for (int c = 0; c < nc; ++c) {
        const std::size_t k = static_cast<std::size_t>(c) * plane + p;
        const double pt = t.cls.values[k];
        const double psv = s.cls.values[k];
        cls_sum += bce(pt, psv);
        g.cls.values[k] = (psv - pt) * inv_npos;
        wloc += pt;
      }

      const std::array<double, 4> tt = {t.reg.values[p], t.reg.values[plane + p],
                                        t.reg.values[2 * static_cast<std::size_t>(plane) + p],
                                        t.reg.values[3 * static_cast<std::size_t>(plane) + p]};
      const std::array<double, 4> ts = {s.reg.values[p], s.reg.values[plane + p],
                                        s.reg.values[2 * static_cast<std::size_t>(plane) + p],
                                        s.reg.values[3 * static_cast<std::size_t>(plane) + p]};
      const GiouResult gr = giou_pair(tt, ts);
      reg_sum += wloc * (1.0 - gr.giou);
      const double wn = wloc * inv_npos;
      for (int i = 0; i < 4; ++i)
        g.reg.values[static_cast<std::size_t>(i) * plane + p] =
            -wn * gr.grad_b[i] * ts[i];  // chain through distance = exp(logit)*stride

      const double qt = t.center.values[p];
      const double qs = s.center.values[p];
      center_sum += bce(qt, qs);
      g.center.values[p] = qs - qt;
    }
    res.head_grads.push_back(std::move(g));
  }

  res.cls_loss = cls_sum * inv_npos;
  res.reg_loss = reg_sum * inv_npos;
  res.center_loss = center_sum;
  res.distill_loss = res.cls_loss + res.reg_loss + res.center_loss;
  return res;
}

DetField hard_label_field(const DetTargets& targets) {
  DetField field;
  for (const DetLevelTargets& t : targets.levels)
    field.levels.push_back({t.cls_onehot, t.reg, t.center});
  return field;
}

DetLossResult det_supervised_loss(const DetField& student, const DetTargets& targets) {
  return det_distill_loss(hard_label_field(targets), student);
}

DenseMap sample_stride(const DenseMap& full, int stride) {
  const int lh = level_extent(full.height, stride);
  const int lw = level_extent(full.width, stride);
  DenseMap out(full.channels, lh, lw);
  for (int c = 0; c < full.channels; ++c)
    for (int i = 0; i < lh; ++i) {
      const int y = std::min(stride / 2 + i * stride, full.height - 1);
      for (int j = 0; j < lw; ++j) {
        const int x = std::min(stride / 2 + j * stride, full.width - 1);
        out.at(c, i, j) = full.at(c, y, x);
      }
    }
  return out;
}

void scatter_stride(const DenseMap& level_grad, int stride, DenseMap& full_grad) {
  for (int c = 0; c < level_grad.channels; ++c)
    for (int i = 0; i < level_grad.height; ++i) {
      const int y = std::min(stride / 2 + i * stride, full_grad.height - 1);
      for (int j = 0; j < level_grad.width; ++j) {
        const int x = std::min(stride / 2 + j * stride, full_grad.width - 1);
        full_grad.at(c, y, x) += level_grad.at(c, i, j);
      }
    }
}

DetLevel det_level_from_logits(const DenseMap& level_logits, int num_classes, int stride) {
  if (level_logits.channels != num_classes + 5)
    throw std::invalid_argument("det_level_from_logits: expected " +
                                std::to_string(num_classes + 5) + " channels");
  const int h = level_logits.height, w = level_logits.width;
  const int plane = h * w;
  DetLevel lvl;
  lvl.cls = DenseMap(num_classes, h, w);
  lvl.reg = DenseMap(4, h, w);
  lvl.center = DenseMap(1, h, w);
  for (int c = 0; c < num_classes; ++c)
    for (int p = 0; p < plane; ++p) {
      const double z = level_logits.values[static_cast<std::size_t>(c) * plane + p];
      lvl.cls.values[static_cast<std::size_t>(c) * plane + p] = 1.0 / (1.0 + std::exp(-z));
    }
  for (int i = 0; i < 4; ++i)
    for (int p = 0; p < plane; ++p) {
      const double z = level_logits.values[static_cast<std::size_t>(num_classes + i) * plane + p];
      lvl.reg.values[static_cast<std::size_t>(i) * plane + p] = std::exp(z) * stride;
    }
  for (int p = 0; p < plane; ++p) {
    const double z = level_logits.values[static_cast<std::size_t>(num_classes + 4) * plane + p];
    lvl.center.values[p] = 1.0 / (1.0 + std::exp(-z));
  }
  return lvl;
}

DetField det_field_from_map(const DenseMap& full_logits,
                            const std::vector<LevelSpec>& levels, int num_classes) {
  validate_levels(levels);
  DetField field;
  for (const LevelSpec& lvl : levels)
    field.levels.push_back(
        det_level_from_logits(sample_stride(full_logits, lvl.stride), num_classes, lvl.stride));
  return field;
}

DenseMap det_grads_to_map(const DetLossResult& result, const std::vector<LevelSpec>& levels,
                          int num_classes, int full_h, int full_w) {
  if (result.head_grads.size() != levels.size())
    throw std::invalid_argument("det_grads_to_map: level count mismatch");
  DenseMap full(num_classes + 5, full_h, full_w);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const DetLevelGrads& g = result.head_grads[l];
    DenseMap merged(num_classes + 5, g.cls.height, g.cls.width);
    const std::size_t plane = static_cast<std::size_t>(g.cls.height) * g.cls.width;
    std::copy(g.cls.values.begin(), g.cls.values.end(), merged.values.begin());
    std::copy(g.reg.values.begin(), g.reg.values.end(),
              merged.values.begin() + static_cast<std::size_t>(num_classes) * plane);
    std::copy(g.center.values.begin(), g.center.values.end(),
              merged.values.begin() + static_cast<std::size_t>(num_classes + 4) * plane);
    scatter_stride(merged, levels[l].stride, full);
  }
  return full;
}

}  // namespace fmkd
