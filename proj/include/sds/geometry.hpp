#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace sds {

/// Axis-aligned box in continuous image coordinates; (x, y) is the top-left corner.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  Box() = default;
  /// Throws std::invalid_argument unless w > 0 and h > 0 (and all finite).
  Box(double x, double y, double w, double h);

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }
  bool contains(double px, double py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Center-offset / log-scale regression parameters relative to an anchor.
struct BoxTransform {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;

  friend bool operator==(const BoxTransform&, const BoxTransform&) = default;
};

/// A box with its two-class logits (background, foreground) and the
/// foreground softmax probability derived from them.
struct ScoredBox {
  Box box;
  double score = 0.0;
  std::pair<double, double> logits{0.0, 0.0};

  static ScoredBox from_logits(const Box& box, double background, double foreground);
};

struct AnchorGrid {
  int image_w = 0;
  int image_h = 0;
  int stride = 16;
  int cells_x = 0;
  int cells_y = 0;
  std::vector<double> scales;
  double aspect_ratio = 0.41;
  /// Indexed ((cell_y * cells_x) + cell_x) * scales.size() + scale.
  std::vector<Box> anchors;

  std::size_t num_scales() const { return scales.size(); }
  std::size_t index(int cell_y, int cell_x, std::size_t scale) const {
    return (static_cast<std::size_t>(cell_y) * cells_x + cell_x) * scales.size() + scale;
  }
};

double iou(const Box& a, const Box& b);
double intersection_area(const Box& a, const Box& b);

/// Geometric progression of `count` heights from `min_height` to `max_height`.
std::vector<double> geometric_scales(double min_height, double max_height, std::size_t count);

/// Nine heights spanning 25..350 px.
std::vector<double> default_anchor_scales();

AnchorGrid generate_anchor_grid(int image_w, int image_h, int stride,
                                std::span<const double> scales, double aspect_ratio);

BoxTransform encode_transform(const Box& anchor, const Box& target);

/// Inverse of encode_transform. When `clip` is set the result is clipped to
/// [0, image_w] x [0, image_h]; throws if nothing of the box is left.
Box decode_transform(const Box& anchor, const BoxTransform& t);
Box decode_transform(const Box& anchor, const BoxTransform& t, double image_w, double image_h);

/// Clip to [0, image_w] x [0, image_h]. Throws std::invalid_argument when the
/// box lies entirely outside the image.
Box clip_box(const Box& box, double image_w, double image_h);

/// Greedy NMS. Candidates are visited by descending score (ties by ascending
/// index); a candidate is dropped when its IoU with an already kept box
/// exceeds `iou_threshold`. Returns kept indices in visiting order.
std::vector<std::size_t> nms(std::span<const ScoredBox> candidates, double iou_threshold);

/// Extends every side by `fraction` of the matching dimension, then clips.
Box pad_box(const Box& box, double fraction, double image_w, double image_h);

}  // namespace sds
