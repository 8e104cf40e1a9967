#include "sds/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <tuple>

#include "sds/layers.hpp"
#include "sds/random.hpp"
#include "sds/synthdata.hpp"

namespace sds {

std::string to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::fused: return "fused";
    case ScoreKind::rpn: return "rpn";
    case ScoreKind::bcn: return "bcn";
  }
  return "?";
}

ScoreKind parse_score_kind(const std::string& name) {
  if (name == "fused") return ScoreKind::fused;
  if (name == "rpn") return ScoreKind::rpn;
  if (name == "bcn") return ScoreKind::bcn;
  throw std::invalid_argument("unknown score '" + name + "' (expected fused, rpn or bcn)");
}

namespace {

double pick(ScoreKind kind, double fused, double rpn, double bcn) {
  switch (kind) {
    case ScoreKind::rpn: return rpn;
    case ScoreKind::bcn: return bcn;
    case ScoreKind::fused: break;
  }
  return fused;
}

}  // namespace

std::vector<ImageEval> eval_images(const std::vector<std::vector<Detection>>& dets,
                                   const std::vector<std::vector<Annotation>>& gts, ScoreKind kind,
                                   const ReasonableSetting& setting) {
  if (dets.size() != gts.size()) throw std::invalid_argument("eval_images: detections and gts differ in length");
  std::vector<ImageEval> out(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) {
    out[i].gts = apply_reasonable(gts[i], setting);
    for (const Detection& d : dets[i]) {
      out[i].dets.push_back({d.box, pick(kind, d.fused_score, d.rpn_score, d.bcn_score), {}});
    }
  }
  return out;
}

std::vector<ImageEval> eval_images(std::span<const DetectionRecord> records,
                                   const std::vector<std::vector<Annotation>>& gts, ScoreKind kind,
                                   const ReasonableSetting& setting) {
  std::vector<ImageEval> out(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) out[i].gts = apply_reasonable(gts[i], setting);
  for (const DetectionRecord& r : records) {
    if (r.image_id >= gts.size()) {
      throw DataError("detection image_id " + std::to_string(r.image_id) + " is outside the manifest (" +
                      std::to_string(gts.size()) + " images)");
    }
    out[r.image_id].dets.push_back({Box{r.x, r.y, r.w, r.h}, pick(kind, r.fused_score, r.rpn_score, r.bcn_score), {}});
  }
  return out;
}

double miss_rate(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Annotation>>& gts,
                 ScoreKind kind, double iou_min) {
  return log_average_miss_rate(mr_fppi_curve(eval_images(dets, gts, kind), iou_min));
}

// ---------------------------------------------------------------- ablation

std::vector<AblationSetting> ablation_settings() {
  std::vector<AblationSetting> rows(5);
  rows[0].name = "full";
  rows[1].name = "no-weak-segmentation";
  rows[1].toggles.weak_segmentation = false;
  rows[2].name = "no-proposal-padding";
  rows[2].toggles.proposal_padding = false;
  rows[3].name = "no-cost-sensitive";
  rows[3].toggles.cost_sensitive = false;
  rows[4].name = "no-strict-supervision";
  rows[4].toggles.strict_supervision = false;
  return rows;
}

std::vector<AblationRow> run_ablation(const Dataset& train, const Dataset& test, const RunConfig& cfg,
                                      std::span<const AblationSetting> settings, const LogFn& log) {
  const auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  // Only the segmentation weight and the mask weighting reach the RPN.
  std::map<std::pair<bool, bool>, Network> rpns;
  std::vector<AblationRow> rows;
  for (const AblationSetting& s : settings) {
    RunConfig run = cfg;
    run.toggles = s.toggles;
    PipelineConfig p = effective_pipeline(run);
    p.fusion = true;
    const std::pair<bool, bool> key{s.toggles.weak_segmentation, s.toggles.cost_sensitive};
    auto it = rpns.find(key);
    if (it == rpns.end()) {
      say(s.name + ": training RPN");
      it = rpns.emplace(key, train_rpn(train, p).net).first;
    } else {
      say(s.name + ": reusing RPN");
    }
    say(s.name + ": training BCN");
    const Network bcn = train_bcn(train, it->second, p).net;
    const auto dets = detect_dataset(test, it->second, &bcn, p);
    AblationRow row{s.name, s.toggles, miss_rate(dets, test.gts, ScoreKind::rpn, cfg.eval_iou),
                    miss_rate(dets, test.gts, ScoreKind::bcn, cfg.eval_iou),
                    miss_rate(dets, test.gts, ScoreKind::fused, cfg.eval_iou)};
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: rpn %.4f bcn %.4f fused %.4f", s.name.c_str(), row.rpn_mr, row.bcn_mr,
                  row.fused_mr);
    say(buf);
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::string out = "setting                   RPN MR   BCN MR   Fused MR\n";
  char buf[160];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %6.2f%%  %6.2f%%  %7.2f%%\n", r.name.c_str(), 100.0 * r.rpn_mr,
                  100.0 * r.bcn_mr, 100.0 * r.fused_mr);
    out += buf;
  }
  return out;
}

std::string format_ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "setting,rpn_mr,bcn_mr,fused_mr\n";
  for (const AblationRow& r : rows) {
    out += r.name + "," + format_double(r.rpn_mr) + "," + format_double(r.bcn_mr) + "," + format_double(r.fused_mr) +
           "\n";
  }
  return out;
}

// ---------------------------------------------------------- illumination

IlluminationResult measure_illumination(const Network& rpn, const Dataset& test, const PipelineConfig& cfg,
                                        const std::string& layer) {
  IlluminationResult result;
  const double stride = static_cast<double>(cfg.stride());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const ActivationRecord rec = forward(rpn, normalize_input(test.images[i].to_tensor(), cfg.input_mean));
    const Tensor map = channel_max(rec.layer_output(layer));
    const int fw = static_cast<int>(map.dim(1));
    const int fh = static_cast<int>(map.dim(0));

    // Every gt, ignored or not, counts as "inside" for the outside mean.
    std::vector<Annotation> all = test.gts[i];
    for (Annotation& a : all) a.ignore = false;
    const WeakMask covered = rasterize_weak_mask(all, fw, fh, stride, 0.0);
    double outside_sum = 0.0;
    std::size_t outside_n = 0;
    for (int y = 0; y < fh; ++y) {
      for (int x = 0; x < fw; ++x) {
        if (!covered.value(x, y)) {
          outside_sum += map[static_cast<std::size_t>(y) * fw + x];
          ++outside_n;
        }
      }
    }
    if (outside_n == 0) continue;
    const double outside_mean = outside_sum / static_cast<double>(outside_n);

    for (const Annotation& g : test.gts[i]) {
      if (g.ignore) continue;
      Annotation single = g;
      const WeakMask fp = rasterize_weak_mask(std::span<const Annotation>(&single, 1), fw, fh, stride, 0.0);
      double sum = 0.0;
      std::size_t n = 0;
      for (int y = 0; y < fh; ++y) {
        for (int x = 0; x < fw; ++x) {
          if (fp.value(x, y)) {
            sum += map[static_cast<std::size_t>(y) * fw + x];
            ++n;
          }
        }
      }
      if (n == 0) continue;
      ++result.pedestrians;
      if (sum / static_cast<double>(n) > outside_mean) ++result.illuminated;
    }
  }
  return result;
}

// ------------------------------------------------------------- gradcheck

bool GradcheckSuite::passed() const {
  if (cases.empty()) return false;
  for (const GradcheckCase& c : cases) {
    if (!c.passed) return false;
  }
  return true;
}

namespace {

constexpr double kStep = 1e-3;
constexpr double kScaleFloor = 1e-3;

struct Accumulator {
  double max_error = 0.0;
  std::size_t checked = 0;

  void add(std::span<const double> analytic, std::span<const double> numeric) {
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      max_error = std::max(max_error, relative_error(analytic[i], numeric[i], kScaleFloor));
      ++checked;
    }
  }

  GradcheckCase finish(std::string name, double tolerance) const {
    return {std::move(name), max_error, checked, 0, checked > 0 && max_error < tolerance, kStep, {}};
  }
};

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, so relu never sits within a step of its kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return t;
}

// Distinct values 0.01 apart in random order, so no max-pool window is near a tie.
Tensor distinct_values(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i) - 0.3;
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// L = <r, layer(x)> checked against backward() for the input and for every parameter tensor.
GradcheckCase check_layer(const std::string& name, Layer& layer, const Tensor& input, Rng& rng, double tolerance) {
  const Tensor out = layer.forward(input);
  const Tensor r = random_tensor(out.shape(), rng);
  std::vector<Tensor> grads;
  for (const Tensor& p : layer.parameters()) grads.emplace_back(p.shape());
  const Tensor gin = layer.backward(input, out, r, grads);

  Accumulator acc;
  const auto numeric_input = numeric_gradient(
      [&](std::span<const double> x) {
        Tensor t(input.shape(), std::vector<double>(x.begin(), x.end()));
        return dot(r, layer.forward(t));
      },
      input.values(), kStep);
  acc.add(gin.values(), numeric_input);

  const std::span<Tensor> params = layer.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor saved = params[k];
    const auto numeric = numeric_gradient(
        [&](std::span<const double> x) {
          std::copy(x.begin(), x.end(), params[k].values().begin());
          return dot(r, layer.forward(input));
        },
        saved.values(), kStep);
    params[k] = saved;
    acc.add(grads[k].values(), numeric);
  }
  return acc.finish("layer " + name, tolerance);
}

GradcheckCase from_report(const std::string& name, const GradcheckReport& report) {
  GradcheckCase c{name, report.max_error(), 0, 0, report.passed, kStep, {}};
  double worst = -1.0;
  for (const BlockError& b : report.blocks) {
    c.checked += b.checked;
    c.rejected += b.rejected;
    c.smallest_step = std::min(c.smallest_step, b.step);
    const double badness = b.checked == 0 ? INFINITY : b.max_relative_error;
    if (badness > worst) {
      worst = badness;
      c.detail = b.name + (b.checked == 0 ? ": no kink-free entry" : "");
    }
  }
  return c;
}

// Fresh networks have zero biases, so every cell whose input patch is all
// zeros sits exactly on a relu kink. Checks run at a generic point instead.
void jitter_biases(Network& net, Rng& rng) {
  const std::vector<std::string> names = net.parameter_names();
  const std::vector<Tensor*> params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (names[i].ends_with(".bias")) {
      for (double& v : params[i]->values()) v = rng.uniform(-0.1, 0.1);
    }
  }
}

Annotation person(double x, double y, double h) { return Annotation::unoccluded(Box{x, y, 0.41 * h, h}); }

}  // namespace

GradcheckSuite run_gradcheck_suite(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const double tol = cfg.gradcheck_tolerance;
  GradcheckSuite suite;
  suite.tolerance = tol;
  Rng rng(mix_seed(cfg.seed(), hash_name("gradcheck")));

  // ---- layers
  {
    Conv2d conv("conv3x3", 2, 3, 3);
    for (Tensor& p : conv.parameters()) p = random_tensor(p.shape(), rng, -0.5, 0.5);
    suite.cases.push_back(check_layer("conv 3x3", conv, random_tensor({2, 5, 6}, rng), rng, tol));
  }
  {
    Conv2d conv("conv1x1", 3, 2, 1);
    for (Tensor& p : conv.parameters()) p = random_tensor(p.shape(), rng, -0.5, 0.5);
    suite.cases.push_back(check_layer("conv 1x1", conv, random_tensor({3, 4, 4}, rng), rng, tol));
  }
  {
    MaxPool2d pool("pool", 2);
    suite.cases.push_back(check_layer("maxpool", pool, distinct_values({2, 6, 6}, rng), rng, tol));
  }
  {
    ReLU relu("relu");
    suite.cases.push_back(check_layer("relu", relu, away_from_zero({2, 4, 5}, rng), rng, tol));
  }
  {
    Linear fc("fc", 12, 5);
    for (Tensor& p : fc.parameters()) p = random_tensor(p.shape(), rng, -0.5, 0.5);
    suite.cases.push_back(check_layer("fc", fc, random_tensor({12}, rng), rng, tol));
  }
  {
    Softmax2 sm("softmax2");
    suite.cases.push_back(check_layer("softmax2", sm, random_tensor({2, 3, 4}, rng, -3.0, 3.0), rng, tol));
  }

  // ---- losses
  {
    Accumulator acc;
    for (int label = 0; label <= 1; ++label) {
      const std::vector<double> z{rng.uniform(-4, 4), rng.uniform(-4, 4)};
      const double w = rng.uniform(0.5, 3.0);
      const ClassLoss c = softmax_ce({z[0], z[1]}, label, w);
      acc.add(c.grad, numeric_gradient(
                          [&](std::span<const double> x) { return softmax_ce({x[0], x[1]}, label, w).loss; }, z,
                          kStep));
    }
    suite.cases.push_back(acc.finish("loss softmax_ce", tol));
  }
  {
    Accumulator acc;
    for (int trial = 0; trial < 4; ++trial) {
      // Differences kept off |d| = 1, where the second derivative jumps.
      std::vector<double> p(4);
      BoxTransform target{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const double tv[4] = {target.tx, target.ty, target.tw, target.th};
      for (int k = 0; k < 4; ++k) {
        const double mag = rng.bernoulli(0.5) ? rng.uniform(0.05, 0.9) : rng.uniform(1.1, 3.0);
        p[k] = tv[k] + (rng.bernoulli(0.5) ? mag : -mag);
      }
      const auto f = [&](std::span<const double> x) { return smooth_l1({x[0], x[1], x[2], x[3]}, target).loss; };
      acc.add(smooth_l1({p[0], p[1], p[2], p[3]}, target).grad, numeric_gradient(f, p, kStep));
    }
    suite.cases.push_back(acc.finish("loss smooth_l1", tol));
  }
  {
    WeakMask mask(5, 4);
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
      mask.values[i] = rng.bernoulli(0.4) ? 1 : 0;
      mask.weights[i] = rng.bernoulli(0.2) ? 0.0 : rng.uniform(1.0, 3.0);
    }
    const Tensor logits = random_tensor({2, 4, 5}, rng, -3.0, 3.0);
    const SegLoss s = segmentation_loss(logits, mask);
    Accumulator acc;
    acc.add(s.grad.values(), numeric_gradient(
                                 [&](std::span<const double> x) {
                                   return segmentation_loss(Tensor(logits.shape(), {x.begin(), x.end()}), mask).loss;
                                 },
                                 logits.values(), kStep));
    suite.cases.push_back(acc.finish("loss segmentation", tol));
  }
  {
    // RPN joint objective over all three head outputs.
    const std::size_t na = 2;
    const int fw = 4;
    const int fh = 3;
    RpnTargets t;
    t.mask = WeakMask(fw, fh);
    for (std::size_t i = 0; i < t.mask.values.size(); ++i) {
      t.mask.values[i] = rng.bernoulli(0.3) ? 1 : 0;
      t.mask.weights[i] = rng.uniform(1.0, 2.0);
    }
    for (std::size_t a = 0; a < na * fw * fh; a += 2) {
      t.sampled.push_back(a);
      t.labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
      t.reg_targets.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                               rng.uniform(-0.5, 0.5)});
    }
    const Tensor cls = random_tensor({2 * na, 3, 4}, rng, -2.0, 2.0);
    // Regression outputs within 0.9 of their targets stay on the quadratic branch.
    const Tensor bbox = random_tensor({4 * na, 3, 4}, rng, -0.4, 0.4);
    const Tensor seg = random_tensor({2, 3, 4}, rng, -2.0, 2.0);
    const LossWeights w = LossWeights::rpn_defaults();
    const RpnObjective obj = rpn_objective(cls, bbox, seg, t, na, w);

    std::vector<double> x;
    std::vector<double> g;
    for (const Tensor* p : {&cls, &bbox, &seg}) x.insert(x.end(), p->values().begin(), p->values().end());
    for (const Tensor* p : {&obj.cls_grad, &obj.bbox_grad, &*obj.seg_grad}) {
      g.insert(g.end(), p->values().begin(), p->values().end());
    }
    const auto f = [&](std::span<const double> v) {
      std::size_t o = 0;
      const auto take = [&](const Tensor& like) {
        Tensor out(like.shape(), std::vector<double>(v.begin() + o, v.begin() + o + like.size()));
        o += like.size();
        return out;
      };
      const Tensor c = take(cls);
      const Tensor b = take(bbox);
      const Tensor s = take(seg);
      return rpn_objective(c, b, s, t, na, w).breakdown.total;
    };
    Accumulator acc;
    acc.add(g, numeric_gradient(f, x, kStep));
    suite.cases.push_back(acc.finish("loss rpn joint", tol));
  }
  {
    // BCN joint objective over three crops.
    const std::size_t n = 3;
    std::vector<Tensor> cls;
    std::vector<Tensor> seg;
    std::vector<int> labels;
    std::vector<double> cw;
    std::vector<WeakMask> masks;
    for (std::size_t i = 0; i < n; ++i) {
      cls.push_back(random_tensor({2}, rng, -2.0, 2.0));
      seg.push_back(random_tensor({2, 3, 3}, rng, -2.0, 2.0));
      labels.push_back(static_cast<int>(i % 2));
      cw.push_back(rng.uniform(1.0, 3.0));
      WeakMask m(3, 3);
      for (std::size_t k = 0; k < m.values.size(); ++k) {
        m.values[k] = rng.bernoulli(0.5) ? 1 : 0;
        m.weights[k] = rng.bernoulli(0.2) ? 0.0 : rng.uniform(1.0, 2.0);
      }
      masks.push_back(std::move(m));
    }
    const LossWeights w = LossWeights::bcn_defaults();
    const BcnObjective obj = bcn_objective(cls, seg, labels, cw, masks, w);
    std::vector<double> x;
    std::vector<double> g;
    for (std::size_t i = 0; i < n; ++i) {
      x.insert(x.end(), cls[i].values().begin(), cls[i].values().end());
      g.insert(g.end(), obj.cls_grads[i].values().begin(), obj.cls_grads[i].values().end());
    }
    for (std::size_t i = 0; i < n; ++i) {
      x.insert(x.end(), seg[i].values().begin(), seg[i].values().end());
      g.insert(g.end(), obj.seg_grads[i].values().begin(), obj.seg_grads[i].values().end());
    }
    const auto f = [&](std::span<const double> v) {
      std::vector<Tensor> c;
      std::vector<Tensor> s;
      std::size_t o = 0;
      for (std::size_t i = 0; i < n; ++i, o += 2) c.emplace_back(Shape{2}, std::vector<double>(v.begin() + o, v.begin() + o + 2));
      for (std::size_t i = 0; i < n; ++i, o += 18) {
        s.emplace_back(Shape{2, 3, 3}, std::vector<double>(v.begin() + o, v.begin() + o + 18));
      }
      return bcn_objective(c, s, labels, cw, masks, w).breakdown.total;
    };
    Accumulator acc;
    acc.add(g, numeric_gradient(f, x, kStep));
    suite.cases.push_back(acc.finish("loss bcn joint", tol));
  }

  // ---- full networks through backward()
  const PipelineConfig p = effective_pipeline(cfg);
  GradcheckOptions opts;
  opts.step = kStep;
  opts.scale_floor = kScaleFloor;
  opts.seed = mix_seed(cfg.seed(), hash_name("gradcheck-sample"));
  opts.reject_kinks = true;
  opts.min_step = 1e-6;
  {
    // 48 x 32 image: a 3 x 2 feature map at stride 16. Small maps keep the
    // number of relu units, and so of kink crossings, low.
    SceneConfig sc = cfg.scene;
    sc.image_w = 48;
    sc.image_h = 32;
    sc.pedestrians_min = 0;
    sc.pedestrians_max = 0;
    sc.distractors_min = 0;
    sc.distractors_max = 1;
    sc.height_min = 16;
    sc.height_max = 30;
    const Scene scene = generate_scene(sc, 0, "gradcheck");
    const std::vector<Annotation> gts{person(6, 2, 28), person(30, 6, 24)};
    const auto scales = p.anchors.scales();
    const AnchorGrid grid = generate_anchor_grid(sc.image_w, sc.image_h, p.stride(), scales, p.anchors.aspect_ratio);
    PipelineConfig small = p;
    small.rpn_batch = 24;
    const RpnTargets targets = build_rpn_targets(grid, gts, small, p.cost_sensitive ? 35.0 : 0.0, opts.seed);
    Network rpn = make_rpn_network(p.trunk, scales.size(), p.proposal_channels, opts.seed);
    jitter_biases(rpn, rng);
    suite.cases.push_back(from_report("network rpn", gradcheck(rpn, rpn_loss_fn(targets, scales.size(), p.rpn_weights),
                                                              normalize_input(scene.image, p.input_mean), tol, opts)));
  }
  {
    SceneConfig sc = cfg.scene;
    sc.image_w = 96;
    sc.image_h = 96;
    sc.pedestrians_min = 1;
    sc.pedestrians_max = 1;
    sc.height_min = 40;
    sc.height_max = 60;
    sc.occluder_prob = 0.0;
    const Scene scene = generate_scene(sc, 0, "gradcheck");
    const Annotation& g = scene.annotations.front();
    // Same architecture on a 3 x 3-cell crop instead of the full input size.
    const std::size_t crop_size = 3 * p.trunk.stride();
    const Box proposal{g.box.x - 3.0, g.box.y + 2.0, g.box.w + 4.0, g.box.h - 1.0};
    const WeakMask mask = proposal_mask(pad_box(proposal, p.pad_fraction, sc.image_w, sc.image_h),
                                        scene.annotations, static_cast<int>(crop_size / p.trunk.stride()),
                                        p.cost_sensitive ? 50.0 : 0.0);
    const Tensor crop = normalize_input(crop_warp(scene.image, proposal, p.pad_fraction, crop_size), p.input_mean);
    Network bcn = make_bcn_network(p.trunk, crop_size, p.bcn_fc, opts.seed);
    jitter_biases(bcn, rng);
    const double w = p.cost_sensitive ? cost_weight(proposal.h, 50.0) : 1.0;
    suite.cases.push_back(
        from_report("network bcn", gradcheck(bcn, bcn_loss_fn(1, w, mask, p.bcn_weights), crop, tol, opts)));
  }

  suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return suite;
}

}  // namespace sds
