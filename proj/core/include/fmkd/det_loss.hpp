#pragma once

#include <array>
#include <vector>

#include "fmkd/tensor.hpp"

namespace fmkd {

/// One pyramid level: stride in input pixels and the (min,max] interval of
/// max side-distances it is responsible for. Ranges of consecutive levels
/// must partition (0, inf).
struct LevelSpec {
  int stride = 1;
  double range_min = 0.0;
  double range_max = 0.0;  // use kInfRange for the last level
};

constexpr double kInfRange = 1e30;

void validate_levels(const std::vector<LevelSpec>& levels);

/// Per-level head outputs in value space: class probabilities (independent
/// sigmoids), strictly positive (l,t,r,b) side distances in input pixels,
/// and centerness in [0,1].
struct DetLevel {
  DenseMap cls;     // (num_classes, H_l, W_l)
  DenseMap reg;     // (4, H_l, W_l), order l,t,r,b
  DenseMap center;  // (1, H_l, W_l)
};

struct DetField {
  std::vector<DetLevel> levels;
};

struct GtBox {
  double x1, y1, x2, y2;
  int cls;
  double area() const { return (x2 - x1) * (y2 - y1); }
};

struct GroundTruth {
  std::vector<GtBox> boxes;
};

/// Hard-label training targets. reg holds 1.0 placeholders at negative
/// locations so the GIoU term stays defined there (its weight is zero).
struct DetLevelTargets {
  DenseMap cls_onehot;
  DenseMap reg;
  DenseMap center;
  std::vector<std::uint8_t> positive;  // H_l*W_l mask
};

struct DetTargets {
  std::vector<DetLevelTargets> levels;
  long positive_count() const;
};

/// FCOS assignment. A location is mapped to input coordinates
/// (stride/2 + x*stride, stride/2 + y*stride); it is positive iff it lies
/// strictly inside at least one box and max(l,t,r,b) falls in the level's
/// (min,max] range. Ties across boxes resolve to the smallest box area,
/// then first in list order.
DetTargets assign_targets(const GroundTruth& gt, const std::vector<LevelSpec>& levels,
                          int image_h, int image_w, int num_classes);

/// sqrt((min(l,r)/max(l,r)) * (min(t,b)/max(t,b))), inputs must be > 0.
double centerness_target(double l, double t, double r, double b);

struct GiouResult {
  double giou;
  std::array<double, 4> grad_b;  // d giou / d tb
};

/// GIoU of two boxes decoded around a shared location from side distances
/// (all > 0, so the intersection is nonempty). At tb == ta the min/max tie
/// convention makes the returned gradient exactly zero.
GiouResult giou_pair(const std::array<double, 4>& ta, const std::array<double, 4>& tb);

/// Gradients with respect to the student's head logits: pre-sigmoid class
/// and centerness maps, pre-exp regression maps (d distance/d logit =
/// distance).
struct DetLevelGrads {
  DenseMap cls;
  DenseMap reg;
  DenseMap center;
};

struct DetLossResult {
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  double center_loss = 0.0;
  double distill_loss = 0.0;
  double n_pos = 0.0;  // sum of teacher class probabilities, before clamping
  std::vector<DetLevelGrads> head_grads;
};

/// Soft-target detection loss over all levels:
///   L_cls    = (1/N_pos) sum_{x,y,c} BCE(pT, pS)
///   L_reg    = (1/N_pos) sum_{x,y} (sum_c pT) * (1 - GIoU(tT, tS))
///   L_center = sum_{x,y} BCE(qT, qS)            (summed, not normalized)
///   L_distill = L_cls + L_reg + L_center
/// with N_pos = sum pT clamped to >= 1 before dividing. The regression term
/// is evaluated at every location; its weight vanishes where the teacher
/// predicts nothing.
DetLossResult det_distill_loss(const DetField& teacher, const DetField& student);

/// The same loss with the teacher replaced by the hard-label field, which
/// recovers the supervised FCOS-style objective. N_pos becomes the positive
/// count.
DetLossResult det_supervised_loss(const DetField& student, const DetTargets& targets);

/// One-hot class maps, target distances and centerness targets at
/// positives; zeros (and reg placeholders) elsewhere.
DetField hard_label_field(const DetTargets& targets);

// -- head plumbing between full-resolution trunk maps and level fields --

/// Picks the pixel at input coords (stride/2 + i*stride) per level cell,
/// clamped at the image border. Output extent is ceil(extent/stride).
DenseMap sample_stride(const DenseMap& full, int stride);

/// Adjoint of sample_stride; accumulates into full_grad.
void scatter_stride(const DenseMap& level_grad, int stride, DenseMap& full_grad);

/// Splits a (num_classes+5, H_l, W_l) logit map into sigmoid class
/// probabilities, exp(logit)*stride distances and sigmoid centerness.
DetLevel det_level_from_logits(const DenseMap& level_logits, int num_classes, int stride);

/// Full trunk map (num_classes+5, H, W) -> per-level value fields.
DetField det_field_from_map(const DenseMap& full_logits,
                            const std::vector<LevelSpec>& levels, int num_classes);

/// Reassembles per-level logit gradients into a (num_classes+5, H, W) map,
/// the adjoint of det_field_from_map's sampling.
DenseMap det_grads_to_map(const DetLossResult& result, const std::vector<LevelSpec>& levels,
                          int num_classes, int full_h, int full_w);

}  // namespace fmkd
