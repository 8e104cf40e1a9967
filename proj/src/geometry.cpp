#include "sds/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sds {

Box::Box(double x_, double y_, double w_, double h_) : x(x_), y(y_), w(w_), h(h_) {
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(w) || !std::isfinite(h)) {
    throw std::invalid_argument("Box: non-finite coordinate");
  }
  if (!(w > 0.0) || !(h > 0.0)) {
    throw std::invalid_argument("Box: width and height must be positive (got w=" +
                                std::to_string(w) + ", h=" + std::to_string(h) + ")");
  }
}

ScoredBox ScoredBox::from_logits(const Box& box, double background, double foreground) {
  ScoredBox sb;
  sb.box = box;
  sb.logits = {background, foreground};
  // softmax over two classes == logistic of the logit difference
  const double d = background - foreground;
  sb.score = d > 0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
  return sb;
}

double intersection_area(const Box& a, const Box& b) {
  // Shared leading edges take the shorter extent directly, so a box overlaps
  // itself by exactly its own area.
  const double iw = a.x == b.x ? std::min(a.w, b.w) : std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = a.y == b.y ? std::min(a.h, b.h) : std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<double> geometric_scales(double min_height, double max_height, std::size_t count) {
  if (count == 0) throw std::invalid_argument("geometric_scales: count must be >= 1");
  if (!(min_height > 0.0) || !(max_height >= min_height)) {
    throw std::invalid_argument("geometric_scales: need 0 < min <= max");
  }
  std::vector<double> scales(count);
  if (count == 1) {
    scales[0] = min_height;
    return scales;
  }
  const double ratio = max_height / min_height;
  for (std::size_t k = 0; k < count; ++k) {
    scales[k] = min_height * std::pow(ratio, static_cast<double>(k) / static_cast<double>(count - 1));
  }
  // pin the endpoints exactly
  scales.front() = min_height;
  scales.back() = max_height;
  return scales;
}

std::vector<double> default_anchor_scales() { return geometric_scales(25.0, 350.0, 9); }

AnchorGrid generate_anchor_grid(int image_w, int image_h, int stride,
                                std::span<const double> scales, double aspect_ratio) {
  if (stride <= 0) throw std::invalid_argument("generate_anchor_grid: stride must be positive");
  if (image_w < stride || image_h < stride) {
    throw std::invalid_argument("generate_anchor_grid: image " + std::to_string(image_w) + "x" +
                                std::to_string(image_h) + " is smaller than one stride cell (" +
                                std::to_string(stride) + ")");
  }
  if (scales.empty()) throw std::invalid_argument("generate_anchor_grid: no scales");
  for (std::size_t k = 0; k < scales.size(); ++k) {
    if (!(scales[k] > 0.0)) throw std::invalid_argument("generate_anchor_grid: scale must be > 0");
    if (k > 0 && !(scales[k] > scales[k - 1])) {
      throw std::invalid_argument("generate_anchor_grid: scales must be strictly increasing");
    }
  }
  if (!(aspect_ratio > 0.0)) throw std::invalid_argument("generate_anchor_grid: aspect ratio must be > 0");

  AnchorGrid grid;
  grid.image_w = image_w;
  grid.image_h = image_h;
  grid.stride = stride;
  grid.cells_x = image_w / stride;
  grid.cells_y = image_h / stride;
  grid.scales.assign(scales.begin(), scales.end());
  grid.aspect_ratio = aspect_ratio;
  grid.anchors.reserve(static_cast<std::size_t>(grid.cells_x) * grid.cells_y * scales.size());
  for (int cy = 0; cy < grid.cells_y; ++cy) {
    for (int cx = 0; cx < grid.cells_x; ++cx) {
      const double center_x = (cx + 0.5) * stride;
      const double center_y = (cy + 0.5) * stride;
      for (const double height : scales) {
        const double width = aspect_ratio * height;
        grid.anchors.emplace_back(center_x - 0.5 * width, center_y - 0.5 * height, width, height);
      }
    }
  }
  return grid;
}

BoxTransform encode_transform(const Box& anchor, const Box& target) {
  return {(target.center_x() - anchor.center_x()) / anchor.w,
          (target.center_y() - anchor.center_y()) / anchor.h, std::log(target.w / anchor.w),
          std::log(target.h / anchor.h)};
}

Box decode_transform(const Box& anchor, const BoxTransform& t) {
  if (!std::isfinite(t.tx) || !std::isfinite(t.ty) || !std::isfinite(t.tw) || !std::isfinite(t.th)) {
    throw std::invalid_argument("decode_transform: non-finite transform");
  }
  const double cx = anchor.center_x() + t.tx * anchor.w;
  const double cy = anchor.center_y() + t.ty * anchor.h;
  const double w = anchor.w * std::exp(t.tw);
  const double h = anchor.h * std::exp(t.th);
  return Box(cx - 0.5 * w, cy - 0.5 * h, w, h);
}

Box decode_transform(const Box& anchor, const BoxTransform& t, double image_w, double image_h) {
  return clip_box(decode_transform(anchor, t), image_w, image_h);
}

Box clip_box(const Box& box, double image_w, double image_h) {
  const double x0 = std::clamp(box.x, 0.0, image_w);
  const double y0 = std::clamp(box.y, 0.0, image_h);
  const double x1 = std::clamp(box.right(), 0.0, image_w);
  const double y1 = std::clamp(box.bottom(), 0.0, image_h);
  if (!(x1 > x0) || !(y1 > y0)) throw std::invalid_argument("clip_box: box lies outside the image");
  return Box(x0, y0, x1 - x0, y1 - y0);
}

std::vector<std::size_t> nms(std::span<const ScoredBox> candidates, double iou_threshold) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].score > candidates[b].score;
  });

  std::vector<char> suppressed(candidates.size(), 0);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t cur = order[i];
    if (suppressed[cur]) continue;
    kept.push_back(cur);
    const Box& kb = candidates[cur].box;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (!suppressed[other] && iou(kb, candidates[other].box) > iou_threshold) suppressed[other] = 1;
    }
  }
  return kept;
}

Box pad_box(const Box& box, double fraction, double image_w, double image_h) {
  if (!(fraction >= 0.0)) throw std::invalid_argument("pad_box: fraction must be >= 0");
  const double dx = fraction * box.w;
  const double dy = fraction * box.h;
  return clip_box(Box(box.x - dx, box.y - dy, box.w + 2.0 * dx, box.h + 2.0 * dy), image_w, image_h);
}

}  // namespace sds
