#include "sds/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sds/random.hpp"

namespace sds {

void validate_annotation(const Annotation& a) {
  if (!(a.occlusion >= 0.0 && a.occlusion <= 1.0)) {
    throw std::invalid_argument("annotation: occlusion outside [0,1]");
  }
  constexpr double tol = 1e-6;
  const Box& b = a.box;
  const Box& v = a.visible_box;
  if (v.x < b.x - tol || v.y < b.y - tol || v.right() > b.right() + tol ||
      v.bottom() > b.bottom() + tol) {
    throw std::invalid_argument("annotation: visible box is not inside the full box");
  }
  const double visible_fraction = v.area() / b.area();
  if (std::abs((1.0 - visible_fraction) - a.occlusion) > 0.01) {
    throw std::invalid_argument("annotation: occlusion inconsistent with visible area");
  }
}

LabelPolicy LabelPolicy::rpn() { return {"rpn", 0.5, true, false}; }
LabelPolicy LabelPolicy::bcn_strict() { return {"bcn-strict", 0.7, false, false}; }

WeakMask::WeakMask(int w, int h)
    : width(w), height(h),
      values(static_cast<std::size_t>(w) * h, 0),
      weights(static_cast<std::size_t>(w) * h, 1.0) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("WeakMask: dimensions must be positive");
}

std::size_t WeakMask::positive_count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

std::vector<ProposalLabel> label_proposals(std::span<const Box> proposals,
                                           std::span<const Annotation> gts,
                                           const LabelPolicy& policy) {
  if (!(policy.fg_iou_min > 0.0 && policy.fg_iou_min < 1.0)) {
    throw std::invalid_argument("label_proposals: fg_iou_min must lie in (0,1)");
  }
  std::vector<ProposalLabel> labels(proposals.size());
  // per-gt best proposal for the optional fallback
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<std::size_t> gt_best_idx(gts.size(), 0);

  for (std::size_t p = 0; p < proposals.size(); ++p) {
    double best = 0.0;
    std::optional<std::size_t> best_gt;
    double best_ignore = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(proposals[p], gts[g].box);
      if (gts[g].ignore) {
        best_ignore = std::max(best_ignore, o);
        continue;
      }
      if (o > best) {
        best = o;
        best_gt = g;
      }
      if (o > gt_best[g]) {
        gt_best[g] = o;
        gt_best_idx[g] = p;
      }
    }
    ProposalLabel& label = labels[p];
    label.iou = best;
    if (best_gt && policy.accepts(best)) {
      label.cls = LabelClass::foreground;
      label.matched_gt = best_gt;
    } else if (best_ignore >= kIgnoreIou && best_ignore > best) {
      label.cls = LabelClass::ignored;
    } else {
      label.cls = LabelClass::background;
      label.matched_gt = best_gt;
    }
  }

  if (policy.best_match_fallback) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].ignore || gt_best[g] <= 0.0) continue;
      ProposalLabel& label = labels[gt_best_idx[g]];
      if (label.cls != LabelClass::foreground) {
        label.cls = LabelClass::foreground;
        label.matched_gt = g;
        label.iou = gt_best[g];
      }
    }
  }
  return labels;
}

namespace {

// First `k` entries of a seeded Fisher-Yates shuffle of `pool`.
void take_random(std::vector<std::size_t>& pool, std::size_t k, Rng& rng,
                 std::vector<std::size_t>& out) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.index(pool.size() - i));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
}

}  // namespace

std::vector<std::size_t> sample_minibatch(std::span<const ProposalLabel> labels, std::size_t total,
                                          double fg_fraction, std::uint64_t rng_seed) {
  if (total < 1) throw std::invalid_argument("sample_minibatch: total must be >= 1");
  if (!(fg_fraction > 0.0 && fg_fraction < 1.0)) {
    throw std::invalid_argument("sample_minibatch: fg_fraction must lie in (0,1)");
  }
  std::vector<std::size_t> fg;
  std::vector<std::size_t> bg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].cls == LabelClass::foreground) fg.push_back(i);
    else if (labels[i].cls == LabelClass::background) bg.push_back(i);
  }
  Rng rng(mix_seed(rng_seed));
  std::vector<std::size_t> picked;
  const auto fg_target = static_cast<std::size_t>(std::llround(static_cast<double>(total) * fg_fraction));
  take_random(fg, fg_target, rng, picked);
  take_random(bg, total - picked.size(), rng, picked);
  std::sort(picked.begin(), picked.end());
  return picked;
}

double cost_weight(double height, double mean_height) {
  if (!(mean_height > 0.0)) throw std::invalid_argument("cost_weight: mean_height must be > 0");
  return 1.0 + height / mean_height;
}

double mean_gt_height(std::span<const std::vector<Annotation>> dataset) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& image : dataset) {
    for (const Annotation& a : image) {
      if (a.ignore) continue;
      sum += a.box.h;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("mean_gt_height: no non-ignore ground truth");
  return sum / static_cast<double>(n);
}

namespace {

// Shared cell-center rasterizer. Cell (i, j) has center
// (origin_x + (i + 0.5) * cell_w, origin_y + (j + 0.5) * cell_h).
WeakMask rasterize(std::span<const Annotation> gts, int cols, int rows, double origin_x,
                   double origin_y, double cell_w, double cell_h, double mean_height) {
  WeakMask mask(cols, rows);
  std::vector<double> tallest(mask.values.size(), 0.0);
  std::vector<char> in_ignore(mask.values.size(), 0);
  for (const Annotation& a : gts) {
    const Box& b = a.box;
    // only cells whose centers can fall in b
    const int i0 = std::max(0, static_cast<int>(std::floor((b.x - origin_x) / cell_w - 0.5)));
    const int i1 = std::min(cols - 1, static_cast<int>(std::ceil((b.right() - origin_x) / cell_w - 0.5)));
    const int j0 = std::max(0, static_cast<int>(std::floor((b.y - origin_y) / cell_h - 0.5)));
    const int j1 = std::min(rows - 1, static_cast<int>(std::ceil((b.bottom() - origin_y) / cell_h - 0.5)));
    for (int j = j0; j <= j1; ++j) {
      const double cy = origin_y + (j + 0.5) * cell_h;
      for (int i = i0; i <= i1; ++i) {
        const double cx = origin_x + (i + 0.5) * cell_w;
        if (!b.contains(cx, cy)) continue;
        const std::size_t k = static_cast<std::size_t>(j) * cols + i;
        if (a.ignore) {
          in_ignore[k] = 1;
        } else {
          mask.values[k] = 1;
          tallest[k] = std::max(tallest[k], b.h);
        }
      }
    }
  }
  for (std::size_t k = 0; k < mask.values.size(); ++k) {
    if (mask.values[k]) {
      mask.weights[k] = mean_height > 0.0 ? cost_weight(tallest[k], mean_height) : 1.0;
    } else if (in_ignore[k]) {
      mask.weights[k] = 0.0;
    }
  }
  return mask;
}

}  // namespace

WeakMask rasterize_weak_mask(std::span<const Annotation> gts, int feat_w, int feat_h, double stride,
                             double mean_height) {
  if (!(stride > 0.0)) throw std::invalid_argument("rasterize_weak_mask: stride must be > 0");
  return rasterize(gts, feat_w, feat_h, 0.0, 0.0, stride, stride, mean_height);
}

WeakMask proposal_mask(const Box& proposal_padded, std::span<const Annotation> gts, int grid,
                       double mean_height) {
  if (grid < 1) throw std::invalid_argument("proposal_mask: grid must be >= 1");
  return rasterize(gts, grid, grid, proposal_padded.x, proposal_padded.y, proposal_padded.w / grid,
                   proposal_padded.h / grid, mean_height);
}

}  // namespace sds
