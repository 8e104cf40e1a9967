#include "sds/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "sds/random.hpp"

namespace sds {

void SceneConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("scene config: " + msg); };
  if (image_w < 16 || image_h < 16) fail("image_w and image_h must be at least 16");
  if (pedestrians_min < 0 || pedestrians_max < pedestrians_min) fail("need 0 <= pedestrians_min <= pedestrians_max");
  if (!(height_min > 0.0) || !(height_max >= height_min)) fail("need 0 < height_min <= height_max");
  if (height_max > image_h) fail("height_max must not exceed image_h");
  if (!(aspect_ratio > 0.0)) fail("aspect_ratio must be positive");
  if (!(width_jitter >= 0.0 && width_jitter < 0.5)) fail("width_jitter must lie in [0, 0.5)");
  if (height_max * aspect_ratio * (1.0 + width_jitter) > image_w) fail("widest pedestrian does not fit the image");
  if (!(occluder_prob >= 0.0 && occluder_prob <= 1.0)) fail("occluder_prob must lie in [0, 1]");
  if (!(occlusion_min >= 0.0 && occlusion_max >= occlusion_min && occlusion_max < 1.0)) {
    fail("need 0 <= occlusion_min <= occlusion_max < 1");
  }
  if (distractors_min < 0 || distractors_max < distractors_min) fail("need 0 <= distractors_min <= distractors_max");
  if (!(noise >= 0.0 && noise <= 1.0)) fail("noise must lie in [0, 1]");
}

std::uint64_t scene_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index) {
  return mix_seed(mix_seed(seed, hash_name(stream)), index);
}

double analytic_mean_height(double height_min, double height_max) {
  if (height_max == height_min) return height_min;
  return (height_max - height_min) / std::log(height_max / height_min);
}

namespace {

// A filled shape: segment a-b thickened by r (a circle when a == b), or an
// axis-aligned rectangle.
struct Primitive {
  bool rect = false;
  double ax = 0, ay = 0, bx = 0, by = 0, r = 0;

  static Primitive capsule(double ax, double ay, double bx, double by, double r) {
    return {false, ax, ay, bx, by, r};
  }
  static Primitive circle(double cx, double cy, double r) { return {false, cx, cy, cx, cy, r}; }
  static Primitive box(double x0, double y0, double x1, double y1) { return {true, x0, y0, x1, y1, 0}; }

  bool inside(double px, double py) const {
    if (rect) return px >= ax && px < bx && py >= ay && py < by;
    const double dx = bx - ax;
    const double dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = px - (ax + t * dx);
    const double ey = py - (ay + t * dy);
    return ex * ex + ey * ey <= r * r;
  }

  void bounds(double& x0, double& y0, double& x1, double& y1) const {
    if (rect) {
      x0 = ax, y0 = ay, x1 = bx, y1 = by;
    } else {
      x0 = std::min(ax, bx) - r, x1 = std::max(ax, bx) + r;
      y0 = std::min(ay, by) - r, y1 = std::max(ay, by) + r;
    }
  }
};

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h, 0.0) {}

  double& at(int x, int y) { return px_[static_cast<std::size_t>(y) * w_ + x]; }

  // Blends `color` weighted by 2x2 supersampled coverage.
  void draw(const Primitive& p, double color) {
    double x0, y0, x1, y1;
    p.bounds(x0, y0, x1, y1);
    const int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
    const int ix1 = std::min(w_ - 1, static_cast<int>(std::ceil(x1)));
    const int iy1 = std::min(h_ - 1, static_cast<int>(std::ceil(y1)));
    for (int y = iy0; y <= iy1; ++y) {
      for (int x = ix0; x <= ix1; ++x) {
        int hits = 0;
        for (const double sy : {0.25, 0.75}) {
          for (const double sx : {0.25, 0.75}) hits += p.inside(x + sx, y + sy) ? 1 : 0;
        }
        if (hits == 0) continue;
        const double cov = hits / 4.0;
        double& v = at(x, y);
        v = v * (1.0 - cov) + color * cov;
      }
    }
  }

  std::vector<double>& pixels() { return px_; }

 private:
  int w_;
  int h_;
  std::vector<double> px_;
};

// Foreground shade clearly separated from a mid-gray background, either
// darker or lighter.
double figure_shade(Rng& rng) {
  return rng.bernoulli(0.5) ? rng.uniform(0.05, 0.3) : rng.uniform(0.7, 0.95);
}

// Upright figure filling `b`: head, torso, two legs, two arms, with a
// random stance.
void draw_pedestrian(Canvas& c, const Box& b, Rng& rng, bool with_head) {
  const double h = b.h;
  const double half_w = 0.5 * b.w;
  const double cx = b.center_x();
  const double body = figure_shade(rng);
  const double legs = std::clamp(body + rng.uniform(-0.08, 0.08), 0.0, 1.0);

  const double head_r = std::min(0.1 * h * rng.uniform(0.85, 1.0), half_w);
  const double head_cy = b.y + head_r;
  if (with_head) c.draw(Primitive::circle(cx, head_cy, head_r), body);

  const double torso_r = std::min(0.13 * h * rng.uniform(0.85, 1.05), half_w);
  const double torso_top = b.y + 0.22 * h + torso_r * 0.5;
  const double torso_bottom = b.y + 0.5 * h;
  c.draw(Primitive::capsule(cx, torso_top, cx, torso_bottom, torso_r), body);

  const double leg_r = 0.055 * h;
  const double max_spread = std::max(0.0, half_w - leg_r);
  const double hip_y = b.y + 0.52 * h;
  const double foot_y = b.bottom() - leg_r;
  const double stride = rng.uniform(0.0, 1.0);
  const double left_foot = cx - max_spread * std::clamp(0.2 + 0.8 * stride * rng.uniform(0.5, 1.0), 0.0, 1.0);
  const double right_foot = cx + max_spread * std::clamp(0.2 + 0.8 * (1.0 - stride) * rng.uniform(0.5, 1.0), 0.0, 1.0);
  c.draw(Primitive::capsule(cx - 0.05 * h, hip_y, left_foot, foot_y, leg_r), legs);
  c.draw(Primitive::capsule(cx + 0.05 * h, hip_y, right_foot, foot_y, leg_r), legs);

  const double arm_r = 0.04 * h;
  const double shoulder_y = b.y + 0.26 * h;
  const double reach = std::max(0.0, half_w - arm_r);
  for (const double side : {-1.0, 1.0}) {
    const double hand_x = cx + side * reach * rng.uniform(0.45, 1.0);
    const double hand_y = b.y + h * rng.uniform(0.42, 0.56);
    c.draw(Primitive::capsule(cx + side * 0.09 * h, shoulder_y, hand_x, hand_y, arm_r), body);
  }
}

void draw_distractor(Canvas& c, const Box& b, Rng& rng) {
  const double shade = figure_shade(rng);
  const std::uint64_t kind = rng.index(4);
  if (kind == 0) {  // pole
    c.draw(Primitive::box(b.x, b.y, b.right(), b.bottom()), shade);
  } else if (kind == 1) {  // block
    c.draw(Primitive::box(b.x, b.y, b.right(), b.bottom()), shade);
    c.draw(Primitive::box(b.x + 0.2 * b.w, b.y + 0.2 * b.h, b.right() - 0.2 * b.w, b.y + 0.45 * b.h),
           std::clamp(shade + rng.uniform(-0.2, 0.2), 0.0, 1.0));
  } else if (kind == 2) {  // figure without a head
    draw_pedestrian(c, b, rng, false);
  } else {  // lamp: round top on a stick
    const double r = 0.5 * b.w;
    c.draw(Primitive::circle(b.center_x(), b.y + r, r), shade);
    c.draw(Primitive::box(b.center_x() - 0.1 * b.w, b.y + r, b.center_x() + 0.1 * b.w, b.bottom()), shade);
  }
}

bool overlaps_any(const Box& b, const std::vector<Box>& others) {
  return std::any_of(others.begin(), others.end(), [&](const Box& o) { return intersection_area(b, o) > 0.0; });
}

double log_uniform(Rng& rng, double lo, double hi) { return std::exp(rng.uniform(std::log(lo), std::log(hi))); }

}  // namespace

Scene generate_scene(const SceneConfig& cfg, std::uint64_t index, std::string_view stream) {
  cfg.validate();
  Rng rng(scene_seed(cfg.seed, stream, index));
  const double W = cfg.image_w;
  const double H = cfg.image_h;

  // Layout first: pedestrians never intersect each other, distractors
  // never intersect pedestrians.
  std::vector<Box> peds;
  const int n_peds = static_cast<int>(rng.integer(cfg.pedestrians_min, cfg.pedestrians_max));
  for (int i = 0; i < n_peds; ++i) {
    const double h = log_uniform(rng, cfg.height_min, cfg.height_max);
    const double w = cfg.aspect_ratio * h * rng.uniform(1.0 - cfg.width_jitter, 1.0 + cfg.width_jitter);
    for (int attempt = 0; attempt < 50; ++attempt) {
      const Box b(rng.uniform(0.0, W - w), rng.uniform(0.0, H - h), w, h);
      if (!overlaps_any(b, peds)) {
        peds.push_back(b);
        break;
      }
    }
  }

  std::vector<Box> distractors;
  const int n_dis = static_cast<int>(rng.integer(cfg.distractors_min, cfg.distractors_max));
  for (int i = 0; i < n_dis; ++i) {
    const double h = log_uniform(rng, cfg.height_min, cfg.height_max);
    const double w = std::min(W, h * rng.uniform(0.08, 0.6));
    for (int attempt = 0; attempt < 20; ++attempt) {
      const Box b(rng.uniform(0.0, W - w), rng.uniform(0.0, H - h), w, h);
      if (!overlaps_any(b, peds)) {
        distractors.push_back(b);
        break;
      }
    }
  }

  // Background: mid-gray with a linear gradient and a few faint patches.
  Canvas canvas(cfg.image_w, cfg.image_h);
  const double base = rng.uniform(0.4, 0.6);
  const double gx = rng.uniform(-0.1, 0.1);
  const double gy = rng.uniform(-0.1, 0.1);
  for (int y = 0; y < cfg.image_h; ++y) {
    for (int x = 0; x < cfg.image_w; ++x) {
      canvas.at(x, y) = base + gx * (x / W - 0.5) + gy * (y / H - 0.5);
    }
  }
  const int patches = static_cast<int>(rng.integer(0, 3));
  for (int i = 0; i < patches; ++i) {
    const double pw = rng.uniform(0.1, 0.5) * W;
    const double ph = rng.uniform(0.05, 0.3) * H;
    const double px = rng.uniform(0.0, W - pw);
    const double py = rng.uniform(0.0, H - ph);
    canvas.draw(Primitive::box(px, py, px + pw, py + ph), base + rng.uniform(-0.12, 0.12));
  }

  for (const Box& d : distractors) draw_distractor(canvas, d, rng);
  for (const Box& p : peds) draw_pedestrian(canvas, p, rng, true);

  Scene scene;
  for (std::size_t i = 0; i < peds.size(); ++i) {
    const Box& p = peds[i];
    Annotation ann = Annotation::unoccluded(p);
    if (rng.bernoulli(cfg.occluder_prob)) {
      // A wall/car-like band covering the bottom `f` of the pedestrian over
      // its full width, so the visible part is exactly the top 1 - f.
      const double f = rng.uniform(cfg.occlusion_min, cfg.occlusion_max);
      const double top = p.y + p.h * (1.0 - f);
      const double margin = rng.uniform(0.0, 0.3) * p.w;
      const double bottom = std::min(H, p.bottom() + rng.uniform(0.0, 0.1) * p.h);
      std::vector<Box> others;
      for (std::size_t j = 0; j < peds.size(); ++j) {
        if (j != i) others.push_back(peds[j]);
      }
      const double x0 = std::max(0.0, p.x - margin);
      const double x1 = std::min(W, p.right() + margin);
      Box band(x0, top, x1 - x0, bottom - top);
      if (overlaps_any(band, others)) band = Box(p.x, top, p.w, p.bottom() - top);
      canvas.draw(Primitive::box(band.x, band.y, band.right(), band.bottom()), figure_shade(rng));
      if (f > 0.0) {
        ann.visible_box = Box(p.x, p.y, p.w, p.h * (1.0 - f));
        ann.occlusion = f;
      }
    }
    scene.annotations.push_back(ann);
  }

  std::vector<double>& px = canvas.pixels();
  for (double& v : px) {
    v += cfg.noise > 0.0 ? rng.uniform(-cfg.noise, cfg.noise) : 0.0;
    v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  }
  scene.image = Tensor({1, static_cast<std::size_t>(cfg.image_h), static_cast<std::size_t>(cfg.image_w)},
                       std::move(px));
  return scene;
}

std::filesystem::path generate_dataset(const SceneConfig& cfg, std::size_t n_images, const std::string& split,
                                       const std::filesystem::path& out_dir) {
  if (n_images == 0) throw std::invalid_argument("generate_dataset: n_images must be >= 1");
  if (split.empty() || split.find_first_of("/\\") != std::string::npos) {
    throw std::invalid_argument("generate_dataset: bad split name '" + split + "'");
  }
  std::filesystem::create_directories(out_dir / split);
  std::vector<ManifestRecord> records;
  records.reserve(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    const Scene scene = generate_scene(cfg, i, split);
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.pgm", i);
    const std::string rel = split + "/" + name;
    write_pgm(GrayImage::from_tensor(scene.image), out_dir / rel);
    records.push_back({rel, cfg.image_w, cfg.image_h, scene.annotations});
  }
  const std::filesystem::path manifest = out_dir / (split + ".jsonl");
  write_manifest(records, manifest);
  return manifest;
}

}  // namespace sds
