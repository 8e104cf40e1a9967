#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sds/geometry.hpp"
#include "sds/supervision.hpp"

namespace sds {

/// Pedestrians at least `min_height` tall (full box) and strictly less than
/// `max_occlusion` occluded are evaluated; everything else is ignored.
struct ReasonableSetting {
  double min_height = 50.0;
  double max_occlusion = 0.35;

  bool evaluated(const Annotation& a) const {
    return !a.ignore && a.box.h >= min_height && a.occlusion < max_occlusion;
  }
};

struct FilteredGts {
  std::vector<Annotation> evaluated;
  std::vector<Annotation> ignored;  // ignore flag set on every entry
};

FilteredGts reasonable_filter(std::span<const Annotation> gts, const ReasonableSetting& setting = {});

/// Same gts in their original order with the ignore flag set on those the
/// setting excludes.
std::vector<Annotation> apply_reasonable(std::span<const Annotation> gts, const ReasonableSetting& setting = {});

/// Per detection (input order): index of the matched gt, or one of the
/// two sentinels.
inline constexpr int kFalsePositive = -1;
inline constexpr int kIgnoredDetection = -2;

struct MatchResult {
  std::vector<int> det_match;
  std::vector<bool> gt_detected;  // always false for ignore gts

  std::size_t true_positives() const;
  std::size_t false_positives() const;
  std::size_t evaluated_gts = 0;
};

/// Greedy matching in descending score order (ties by ascending index). A
/// detection takes the unmatched non-ignore gt of highest IoU >= iou_min
/// (ties by ascending gt index); failing that, an ignore gt with IoU >=
/// iou_min absorbs it; otherwise it is a false positive.
MatchResult match_detections(std::span<const ScoredBox> dets, std::span<const Annotation> gts, double iou_min);

struct ImageEval {
  std::vector<ScoredBox> dets;
  std::vector<Annotation> gts;  // ignore flags already applied
};

/// Ordered (x, y) points plus the score threshold that produced each.
struct EvalCurve {
  std::vector<std::pair<double, double>> points;
  std::vector<double> thresholds;
};

/// (FPPI, miss rate) at every distinct detection score, swept from high to
/// low. With no detections at all the curve is the single point (0, 1).
/// Throws std::invalid_argument if there are no images or no evaluated gts.
EvalCurve mr_fppi_curve(std::span<const ImageEval> images, double iou_min);

/// Nine references 10^-2 .. 10^0, evenly spaced in log.
std::array<double, 9> lamr_references();

/// Miss rate read at each reference: the last curve point with FPPI <= ref,
/// or the first point when none qualifies.
std::array<double, 9> lamr_samples(const EvalCurve& curve);

/// Geometric mean of the nine samples, each floored at 1e-10.
double log_average_miss_rate(const EvalCurve& curve);

/// (recall, precision) after each detection in global score order.
EvalCurve precision_recall_curve(std::span<const ImageEval> images, double iou_min);

/// 11-point interpolated AP: mean over recall r in {0, 0.1, ..., 1} of the
/// best precision at recall >= r (0 when unreachable).
double average_precision(std::span<const ImageEval> images, double iou_min);
std::array<double, 11> ap_samples(const EvalCurve& pr_curve);

/// CSV with header "x,y", one point per line, then one "# x=... y=..."
/// comment per summary sample.
std::string format_curve_csv(const EvalCurve& curve, std::span<const std::pair<double, double>> summary);
void write_curve_csv(const EvalCurve& curve, std::span<const std::pair<double, double>> summary,
                     const std::filesystem::path& path);

}  // namespace sds
