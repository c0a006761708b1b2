#pragma once

#include "fmkd/tensor.hpp"

namespace fmkd {

/// A DenseMap whose per-pixel channel vector is a probability distribution.
using ProbMap = DenseMap;

/// Checks values in [0,1] and per-pixel channel sums within tol of 1.
bool is_prob_map(const DenseMap& map, double tol = 1e-9);

struct LossGrad {
  double loss = 0.0;
  DenseMap grad;  // with respect to the student logits
};

/// Pixel-wise KL distillation loss:
///   (1/|I|) sum_{x,y} sum_c [ -pT log pS + pT log pT ],
/// pS = softmax_channels(student_logits). Zero iff the student matches the
/// teacher at every pixel. grad = (pS - pT)/|I|. Conventions: 0*log 0 = 0,
/// log arguments floored at 1e-30. All pixels participate; the ignore
/// sentinel has no meaning here.
LossGrad pixelwise_kl_loss(const ProbMap& teacher_probs, const DenseMap& student_logits);

/// Standard pixel-wise cross entropy: mean over non-ignored pixels of
/// -log pS[label]. grad = (pS - onehot)/N_valid at scored pixels, zero at
/// ignored ones. Throws if every pixel is ignored.
LossGrad pixelwise_ce_loss(const DenseMap& student_logits, const LabelMap& labels);

}  // namespace fmkd
