#include "fmkd/seg_loss.hpp"

#include <cmath>
#include <stdexcept>

namespace fmkd {
namespace {

constexpr double kLogFloor = 1e-30;

inline double safe_log(double x) { return std::log(x < kLogFloor ? kLogFloor : x); }

}  // namespace

bool is_prob_map(const DenseMap& map, double tol) {
  const int plane = map.height * map.width;
  for (double v : map.values)
    if (!(v >= 0.0 && v <= 1.0)) return false;
  for (int p = 0; p < plane; ++p) {
    double sum = 0.0;
    for (int c = 0; c < map.channels; ++c)
      sum += map.values[static_cast<std::size_t>(c) * plane + p];
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

LossGrad pixelwise_kl_loss(const ProbMap& teacher_probs, const DenseMap& student_logits) {
  if (!teacher_probs.same_shape(student_logits))
    throw std::invalid_argument("pixelwise_kl_loss: shape mismatch");
  if (teacher_probs.height * teacher_probs.width == 0)
    throw std::invalid_argument("pixelwise_kl_loss: empty prediction grid");
  if (!is_prob_map(teacher_probs))
    throw std::invalid_argument("pixelwise_kl_loss: teacher_probs is not a probability map");

  const DenseMap ps = softmax_channels(student_logits);
  const std::size_t n = teacher_probs.values.size();
  const double inv_pixels = 1.0 / (teacher_probs.height * teacher_probs.width);

  double sum = 0.0;
  LossGrad out;
  out.grad = DenseMap(ps.channels, ps.height, ps.width);
  for (std::size_t k = 0; k < n; ++k) {
    const double pt = teacher_probs.values[k];
    if (pt > 0.0) sum += pt * (safe_log(pt) - safe_log(ps.values[k]));
    out.grad.values[k] = (ps.values[k] - pt) * inv_pixels;
  }
  out.loss = sum * inv_pixels;
  return out;
}

LossGrad pixelwise_ce_loss(const DenseMap& student_logits, const LabelMap& labels) {
  if (labels.height != student_logits.height || labels.width != student_logits.width)
    throw std::invalid_argument("pixelwise_ce_loss: label extent mismatch");
  const int plane = labels.height * labels.width;
  for (int p = 0; p < plane; ++p)
    if (labels.ids[p] != LabelMap::kIgnore && labels.ids[p] >= student_logits.channels)
      throw std::invalid_argument("pixelwise_ce_loss: label id out of range");

  const DenseMap ps = softmax_channels(student_logits);
  long valid = 0;
  double sum = 0.0;
  for (int p = 0; p < plane; ++p) {
    if (labels.ids[p] == LabelMap::kIgnore) continue;
    ++valid;
    sum += -safe_log(ps.values[static_cast<std::size_t>(labels.ids[p]) * plane + p]);
  }
  if (valid == 0) throw std::invalid_argument("pixelwise_ce_loss: all pixels ignored");

  LossGrad out;
  out.loss = sum / valid;
  out.grad = DenseMap(ps.channels, ps.height, ps.width);
  const double inv = 1.0 / valid;
  for (int p = 0; p < plane; ++p) {
    if (labels.ids[p] == LabelMap::kIgnore) continue;
    for (int c = 0; c < ps.channels; ++c) {
      const std::size_t k = static_cast<std::size_t>(c) * plane + p;
      out.grad.values[k] = (ps.values[k] - (c == labels.ids[p] ? 1.0 : 0.0)) * inv;
    }
  }
  return out;
}

}  // namespace fmkd
