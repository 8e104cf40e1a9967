#include "sds/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace sds {

ClassLoss softmax_ce(std::pair<double, double> logits, int label, double weight) {
  if (!(weight >= 0.0)) throw std::invalid_argument("softmax_ce: weight must be >= 0");
  if (label != 0 && label != 1) throw std::invalid_argument("softmax_ce: label must be 0 or 1");
  const double z0 = logits.first;
  const double z1 = logits.second;
  const double m = std::max(z0, z1);
  const double log_sum = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
  const double p0 = std::exp(z0 - log_sum);
  const double p1 = std::exp(z1 - log_sum);
  ClassLoss out;
  out.loss = weight * (log_sum - (label == 1 ? z1 : z0));
  out.grad = {weight * (p0 - (label == 0 ? 1.0 : 0.0)), weight * (p1 - (label == 1 ? 1.0 : 0.0))};
  return out;
}

RegressionLoss smooth_l1(const BoxTransform& pred, const BoxTransform& target) {
  const std::array<double, 4> d{pred.tx - target.tx, pred.ty - target.ty, pred.tw - target.tw,
                                pred.th - target.th};
  RegressionLoss out;
  for (std::size_t k = 0; k < 4; ++k) {
    const double a = std::abs(d[k]);
    if (a < 1.0) {
      out.loss += 0.5 * d[k] * d[k];
      out.grad[k] = d[k];
    } else {
      out.loss += a - 0.5;
      out.grad[k] = d[k] > 0 ? 1.0 : -1.0;
    }
  }
  return out;
}

SegLoss segmentation_loss(const Tensor& mask_logits, const WeakMask& mask) {
  if (mask_logits.rank() != 3 || mask_logits.dim(0) != 2 ||
      mask_logits.dim(1) != static_cast<std::size_t>(mask.height) ||
      mask_logits.dim(2) != static_cast<std::size_t>(mask.width)) {
    throw std::invalid_argument("segmentation_loss: logits " + shape_string(mask_logits.shape()) +
                                " do not match a " + std::to_string(mask.width) + "x" +
                                std::to_string(mask.height) + " mask");
  }
  SegLoss out;
  out.grad = Tensor(mask_logits.shape());
  const std::size_t plane = mask.values.size();
  for (std::size_t i = 0; i < plane; ++i) {
    const double w = mask.weights[i];
    if (w == 0.0) continue;
    ++out.active;
    const ClassLoss c = softmax_ce({mask_logits[i], mask_logits[plane + i]}, mask.values[i], w);
    out.loss += c.loss;
    out.grad[i] = c.grad[0];
    out.grad[plane + i] = c.grad[1];
  }
  return out;
}

namespace {

double sum(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s;
}

}  // namespace

LossBreakdown rpn_joint_loss(std::span<const double> cls_terms, std::span<const double> reg_terms,
                             double seg_term, std::size_t batch_size, const LossWeights& weights) {
  LossBreakdown out;
  out.weights_used = weights;
  const double n = batch_size > 0 ? static_cast<double>(batch_size) : 1.0;
  out.classification = sum(cls_terms) / n;
  out.regression = sum(reg_terms) / n;
  out.segmentation = seg_term;
  out.total = weights.cls * out.classification + weights.reg * out.regression + weights.seg * out.segmentation;
  return out;
}

LossBreakdown bcn_joint_loss(std::span<const double> cls_terms, std::span<const double> cost_weights,
                             double seg_term, std::size_t batch_size, const LossWeights& weights) {
  if (cls_terms.size() != cost_weights.size()) {
    throw std::invalid_argument("bcn_joint_loss: one cost weight per classification term");
  }
  LossBreakdown out;
  out.weights_used = {weights.cls, 0.0, weights.seg};
  const double n = batch_size > 0 ? static_cast<double>(batch_size) : 1.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < cls_terms.size(); ++i) weighted += cost_weights[i] * cls_terms[i];
  out.classification = weighted / n;
  out.segmentation = seg_term;
  out.total = weights.cls * out.classification + weights.seg * out.segmentation;
  return out;
}

RpnObjective rpn_objective(const Tensor& cls_out, const Tensor& bbox_out, const Tensor& seg_out,
                           const RpnTargets& targets, std::size_t num_anchors, const LossWeights& weights) {
  if (cls_out.rank() != 3 || cls_out.dim(0) != 2 * num_anchors || bbox_out.rank() != 3 ||
      bbox_out.dim(0) != 4 * num_anchors || bbox_out.dim(1) != cls_out.dim(1) || bbox_out.dim(2) != cls_out.dim(2)) {
    throw std::invalid_argument("rpn_objective: head shapes " + shape_string(cls_out.shape()) + " / " +
                                shape_string(bbox_out.shape()) + " do not fit " + std::to_string(num_anchors) +
                                " anchors");
  }
  if (targets.labels.size() != targets.sampled.size() || targets.reg_targets.size() != targets.sampled.size()) {
    throw std::invalid_argument("rpn_objective: targets are not aligned with the sampled anchors");
  }
  const std::size_t fh = cls_out.dim(1);
  const std::size_t fw = cls_out.dim(2);
  const std::size_t plane = fh * fw;
  const std::size_t batch = targets.sampled.size();
  const double inv_batch = batch > 0 ? 1.0 / static_cast<double>(batch) : 1.0;

  RpnObjective out;
  out.cls_grad = Tensor(cls_out.shape());
  out.bbox_grad = Tensor(bbox_out.shape());
  std::vector<double> cls_terms;
  std::vector<double> reg_terms;
  cls_terms.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t a = targets.sampled[i];
    const std::size_t cell = a / num_anchors;
    const std::size_t s = a % num_anchors;
    if (cell >= plane) throw std::invalid_argument("rpn_objective: anchor index out of range");
    const std::size_t bg = (2 * s) * plane + cell;
    const std::size_t fg = (2 * s + 1) * plane + cell;
    const ClassLoss c = softmax_ce({cls_out[bg], cls_out[fg]}, targets.labels[i]);
    cls_terms.push_back(c.loss);
    out.cls_grad[bg] += weights.cls * inv_batch * c.grad[0];
    out.cls_grad[fg] += weights.cls * inv_batch * c.grad[1];
    if (targets.labels[i] != 1) continue;
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) idx[k] = (4 * s + k) * plane + cell;
    const BoxTransform pred{bbox_out[idx[0]], bbox_out[idx[1]], bbox_out[idx[2]], bbox_out[idx[3]]};
    const RegressionLoss r = smooth_l1(pred, targets.reg_targets[i]);
    reg_terms.push_back(r.loss);
    for (std::size_t k = 0; k < 4; ++k) out.bbox_grad[idx[k]] += weights.reg * inv_batch * r.grad[k];
  }

  const SegLoss seg = segmentation_loss(seg_out, targets.mask);
  const double seg_norm = seg.active > 0 ? 1.0 / static_cast<double>(seg.active) : 0.0;
  out.breakdown = rpn_joint_loss(cls_terms, reg_terms, seg.loss * seg_norm, batch, weights);
  if (weights.seg != 0.0) {
    Tensor g = seg.grad;
    g *= weights.seg * seg_norm;
    out.seg_grad = std::move(g);
  }
  return out;
}

BcnObjective bcn_objective(std::span<const Tensor> cls_logits, std::span<const Tensor> seg_logits,
                           std::span<const int> labels, std::span<const double> cost_weights,
                           std::span<const WeakMask> masks, const LossWeights& weights) {
  const std::size_t n = cls_logits.size();
  if (labels.size() != n || cost_weights.size() != n || seg_logits.size() != n || masks.size() != n) {
    throw std::invalid_argument("bcn_objective: per-crop inputs are not aligned");
  }
  const double inv_batch = n > 0 ? 1.0 / static_cast<double>(n) : 1.0;
  BcnObjective out;
  std::vector<double> cls_terms;
  for (std::size_t i = 0; i < n; ++i) {
    if (cls_logits[i].size() != 2) throw std::invalid_argument("bcn_objective: classifier output must have 2 logits");
    const ClassLoss c = softmax_ce({cls_logits[i][0], cls_logits[i][1]}, labels[i]);
    cls_terms.push_back(c.loss);
    Tensor g(cls_logits[i].shape());
    // d/dz of w_i * L_c / n
    g[0] = weights.cls * inv_batch * cost_weights[i] * c.grad[0];
    g[1] = weights.cls * inv_batch * cost_weights[i] * c.grad[1];
    out.cls_grads.push_back(std::move(g));
  }

  std::vector<SegLoss> segs;
  std::size_t active = 0;
  double seg_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    segs.push_back(segmentation_loss(seg_logits[i], masks[i]));
    active += segs.back().active;
    seg_sum += segs.back().loss;
  }
  const double seg_norm = active > 0 ? 1.0 / static_cast<double>(active) : 0.0;
  out.breakdown = bcn_joint_loss(cls_terms, cost_weights, seg_sum * seg_norm, n, weights);
  if (weights.seg != 0.0) {
    for (SegLoss& s : segs) {
      s.grad *= weights.seg * seg_norm;
      out.seg_grads.push_back(std::move(s.grad));
    }
  }
  return out;
}

}  // namespace sds
