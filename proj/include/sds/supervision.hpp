#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sds/geometry.hpp"

namespace sds {

/// Ground-truth pedestrian. `occlusion` is the occluded fraction of `box`;
/// `visible_box` is the unoccluded part.
struct Annotation {
  Box box;
  Box visible_box;
  double occlusion = 0.0;
  bool ignore = false;

  static Annotation unoccluded(const Box& b, bool ignore = false) { return {b, b, 0.0, ignore}; }

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Throws std::invalid_argument if the annotation breaks its invariants
/// (visible box inside the full box, occlusion in [0,1] and consistent with
/// the visible area to within 0.01).
void validate_annotation(const Annotation& a);

struct LabelPolicy {
  std::string name;
  double fg_iou_min = 0.5;
  /// true: IoU >= fg_iou_min is foreground; false: IoU > fg_iou_min.
  bool inclusive = true;
  /// Mark the best proposal of every gt as foreground even below the threshold.
  bool best_match_fallback = false;

  static LabelPolicy rpn();         // IoU >= 0.5
  static LabelPolicy bcn_strict();  // IoU > 0.7

  bool accepts(double overlap) const {
    return inclusive ? overlap >= fg_iou_min : overlap > fg_iou_min;
  }
};

enum class LabelClass : std::uint8_t { background, foreground, ignored };

struct ProposalLabel {
  LabelClass cls = LabelClass::background;
  std::optional<std::size_t> matched_gt;
  double iou = 0.0;
};

/// Weak segmentation target on a feature-resolution grid. A weight of 0
/// excludes the cell from the loss.
struct WeakMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;
  std::vector<double> weights;

  WeakMask() = default;
  WeakMask(int w, int h);

  std::uint8_t value(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double weight(int x, int y) const { return weights[static_cast<std::size_t>(y) * width + x]; }
  std::size_t positive_count() const;
};

/// Ignore-flagged gts absorb proposals with IoU >= this value.
inline constexpr double kIgnoreIou = 0.5;

std::vector<ProposalLabel> label_proposals(std::span<const Box> proposals,
                                           std::span<const Annotation> gts,
                                           const LabelPolicy& policy);

/// Picks round(total * fg_fraction) foreground (capped by availability) and
/// fills the rest of `total` with background, without replacement. The
/// result is sorted ascending.
std::vector<std::size_t> sample_minibatch(std::span<const ProposalLabel> labels, std::size_t total,
                                          double fg_fraction, std::uint64_t rng_seed);

double cost_weight(double height, double mean_height);

/// Arithmetic mean of the non-ignore gt heights. Throws if there are none.
double mean_gt_height(std::span<const std::vector<Annotation>> dataset);

/// Feature-resolution mask: a cell is positive when its center (image
/// coordinates) falls inside a non-ignore gt. Positive cells weigh
/// 1 + h/mean_height of the tallest covering gt (1 when mean_height <= 0,
/// i.e. cost-sensitive weighting disabled); cells covered only by ignore gts
/// weigh 0.
WeakMask rasterize_weak_mask(std::span<const Annotation> gts, int feat_w, int feat_h, double stride,
                             double mean_height);

/// Same rule on a grid x grid lattice laid over `proposal_padded`.
WeakMask proposal_mask(const Box& proposal_padded, std::span<const Annotation> gts, int grid,
                       double mean_height);

}  // namespace sds
