#pragma once

#include <array>
#include <optional>
#include <vector>
#include <span>
#include <utility>

#include "sds/geometry.hpp"
#include "sds/supervision.hpp"
#include "sds/tensor.hpp"

namespace sds {

struct ClassLoss {
  double loss = 0.0;
  /// d loss / d (background logit, foreground logit)
  std::array<double, 2> grad{0.0, 0.0};
};

/// -weight * ln softmax(logits)[label], max-subtracted.
ClassLoss softmax_ce(std::pair<double, double> logits, int label, double weight = 1.0);

struct RegressionLoss {
  double loss = 0.0;
  /// d loss / d (pred.tx, pred.ty, pred.tw, pred.th)
  std::array<double, 4> grad{0.0, 0.0, 0.0, 0.0};
};

/// Smooth L1 summed over the four coordinates of pred - target.
RegressionLoss smooth_l1(const BoxTransform& pred, const BoxTransform& target);

struct SegLoss {
  double loss = 0.0;
  Tensor grad;  // same shape as the logits
  /// Number of locations with non-zero weight.
  std::size_t active = 0;
};

/// sum_i w_i * softmax_ce(logits[:, i], S_i) over a (2, H, W) logit map;
/// channel 0 is background, channel 1 pedestrian.
SegLoss segmentation_loss(const Tensor& mask_logits, const WeakMask& mask);

struct LossWeights {
  double cls = 1.0;
  double reg = 5.0;
  double seg = 1.0;

  static LossWeights rpn_defaults() { return {1.0, 5.0, 1.0}; }
  static LossWeights bcn_defaults() { return {1.0, 0.0, 1.0}; }
};

struct LossBreakdown {
  double classification = 0.0;
  double regression = 0.0;
  double segmentation = 0.0;
  double total = 0.0;
  LossWeights weights_used;
};

/// cls and reg terms are summed and divided by `batch_size` (the sampled
/// minibatch); `seg_term` is taken as already normalized.
LossBreakdown rpn_joint_loss(std::span<const double> cls_terms, std::span<const double> reg_terms,
                             double seg_term, std::size_t batch_size, const LossWeights& weights);

/// Classification terms are scaled by their cost-sensitive weights, summed
/// and divided by `batch_size`. No regression term.
LossBreakdown bcn_joint_loss(std::span<const double> cls_terms, std::span<const double> cost_weights,
                             double seg_term, std::size_t batch_size, const LossWeights& weights);

/// Training targets for one image of RPN training.
struct RpnTargets {
  std::vector<std::size_t> sampled;       // anchor indices in the minibatch
  std::vector<int> labels;                // per sampled anchor: 1 pedestrian, 0 background
  std::vector<BoxTransform> reg_targets;  // per sampled anchor; read only where label == 1
  WeakMask mask;                          // feature-resolution weak segmentation target
};

/// Full RPN objective over the three head outputs. Anchor a = (y*W + x)*A + s
/// reads cls channels (2s, 2s+1) and bbox channels 4s..4s+3 at (y, x).
/// Segmentation is averaged over locations with non-zero weight. When
/// weights.seg == 0 no segmentation gradient is produced.
struct RpnObjective {
  LossBreakdown breakdown;
  Tensor cls_grad;
  Tensor bbox_grad;
  std::optional<Tensor> seg_grad;
};

RpnObjective rpn_objective(const Tensor& cls_out, const Tensor& bbox_out, const Tensor& seg_out,
                           const RpnTargets& targets, std::size_t num_anchors, const LossWeights& weights);

/// BCN objective over a minibatch of crops: cost-weighted classification
/// averaged over the crops, segmentation averaged over all active cells of
/// all crop masks.
struct BcnObjective {
  LossBreakdown breakdown;
  std::vector<Tensor> cls_grads;
  std::vector<Tensor> seg_grads;  // empty when weights.seg == 0
};

BcnObjective bcn_objective(std::span<const Tensor> cls_logits, std::span<const Tensor> seg_logits,
                           std::span<const int> labels, std::span<const double> cost_weights,
                           std::span<const WeakMask> masks, const LossWeights& weights);

}  // namespace sds
