#include "sds/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "sds/optim.hpp"
#include "sds/random.hpp"

namespace sds {

void PipelineConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("pipeline config: " + msg); };
  if (anchors.count == 0) fail("anchor_count must be >= 1");
  if (!(anchors.min_height > 0.0) || !(anchors.max_height >= anchors.min_height)) {
    fail("need 0 < anchor_min <= anchor_max");
  }
  if (anchors.count > 1 && !(anchors.max_height > anchors.min_height)) fail("several anchors need anchor_min < anchor_max");
  if (!(anchors.aspect_ratio > 0.0)) fail("aspect_ratio must be positive");
  if (trunk.channels.empty() || trunk.pools > trunk.channels.size()) fail("trunk needs at least one conv per pool");
  if (trunk.pools == 0) fail("stride must be at least 2");
  if (proposal_channels == 0) fail("proposal_channels must be >= 1");
  if (rpn_batch == 0) fail("rpn_batch must be >= 1");
  if (!(fg_fraction > 0.0 && fg_fraction < 1.0)) fail("fg_fraction must lie in (0, 1)");
  if (!(rpn_policy.fg_iou_min > 0.0 && rpn_policy.fg_iou_min < 1.0)) fail("rpn_fg_iou must lie in (0, 1)");
  if (!(bcn_policy.fg_iou_min > 0.0 && bcn_policy.fg_iou_min < 1.0)) fail("bcn_fg_iou must lie in (0, 1)");
  if (n_b_train == 0 || n_b_test == 0) fail("n_b_train and n_b_test must be >= 1");
  if ((bcn_input >> trunk.pools) == 0) fail("bcn_input is smaller than one trunk cell");
  if (!(pad_fraction >= 0.0)) fail("pad_fraction must be >= 0");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) fail("nms_iou must lie in (0, 1]");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (workers == 0) fail("workers must be >= 1");
  for (const LossWeights& w : {rpn_weights, bcn_weights}) {
    if (!(w.cls >= 0.0 && w.reg >= 0.0 && w.seg >= 0.0)) fail("loss weights must be >= 0");
  }
}

Dataset Dataset::load(const std::filesystem::path& manifest) {
  const auto records = read_manifest(manifest);
  const std::filesystem::path base = manifest.parent_path();
  Dataset d;
  d.images.reserve(records.size());
  for (const ManifestRecord& r : records) {
    GrayImage img = read_pgm(base / r.image_path);
    if (img.width != r.image_w || img.height != r.image_h) {
      throw DataError(manifest.string() + ": " + r.image_path + " is " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + ", manifest says " + std::to_string(r.image_w) + "x" +
                      std::to_string(r.image_h));
    }
    d.images.push_back(std::move(img));
    d.gts.push_back(r.annotations);
  }
  return d;
}

Tensor normalize_input(const Tensor& image, double mean) {
  Tensor out = image;
  for (double& v : out.values()) v -= mean;
  return out;
}

double foreground_probability(std::pair<double, double> logits) {
  const double d = logits.second - logits.first;
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

double fuse_scores(std::pair<double, double> rpn_logits, std::pair<double, double> bcn_logits) {
  // Softmax depends only on the logit difference; summing per-stage
  // differences keeps a neutral stage (equal logits) an exact no-op.
  const double d = (rpn_logits.second - rpn_logits.first) + (bcn_logits.second - bcn_logits.first);
  return foreground_probability({0.0, d});
}

namespace {

// Largest log-scale the decoder accepts before exp(); keeps wild early
// predictions from overflowing.
const double kMaxLogScale = std::log(1000.0 / 16.0);

std::pair<std::size_t, std::size_t> image_size(const Tensor& image) {
  if (image.rank() != 3) throw std::invalid_argument("expected a (C, H, W) image, got " + shape_string(image.shape()));
  return {image.dim(2), image.dim(1)};
}

}  // namespace

std::vector<Proposal> rpn_infer(const Tensor& image, const Network& rpn, const PipelineConfig& cfg, bool use_nms) {
  const auto [w, h] = image_size(image);
  const auto scales = cfg.anchors.scales();
  const AnchorGrid grid = generate_anchor_grid(static_cast<int>(w), static_cast<int>(h), cfg.stride(), scales,
                                               cfg.anchors.aspect_ratio);
  const ActivationRecord rec = forward(rpn, normalize_input(image, cfg.input_mean));
  const Tensor& cls = rec.stage_output(stage::cls);
  const Tensor& bbox = rec.stage_output(stage::bbox);
  const std::size_t na = scales.size();
  const std::size_t plane = static_cast<std::size_t>(grid.cells_x) * grid.cells_y;
  if (cls.dim(0) != 2 * na || cls.dim(1) * cls.dim(2) != plane) {
    throw std::invalid_argument("rpn_infer: network output " + shape_string(cls.shape()) +
                                " does not match the anchor grid");
  }

  std::vector<ScoredBox> candidates;
  candidates.reserve(grid.anchors.size());
  for (std::size_t a = 0; a < grid.anchors.size(); ++a) {
    const std::size_t cell = a / na;
    const std::size_t s = a % na;
    const std::pair<double, double> logits{cls[(2 * s) * plane + cell], cls[(2 * s + 1) * plane + cell]};
    BoxTransform t{bbox[(4 * s) * plane + cell], bbox[(4 * s + 1) * plane + cell],
                   bbox[(4 * s + 2) * plane + cell], bbox[(4 * s + 3) * plane + cell]};
    t.tw = std::min(t.tw, kMaxLogScale);
    t.th = std::min(t.th, kMaxLogScale);
    if (!std::isfinite(t.tx) || !std::isfinite(t.ty) || !std::isfinite(t.tw) || !std::isfinite(t.th)) continue;
    try {
      const Box b = decode_transform(grid.anchors[a], t, static_cast<double>(w), static_cast<double>(h));
      candidates.push_back({b, foreground_probability(logits), logits});
    } catch (const std::invalid_argument&) {
      // decoded entirely outside the image (or degenerate after clipping)
    }
  }

  std::vector<std::size_t> order;
  if (use_nms) {
    order = nms(candidates, cfg.nms_iou);
  } else {
    order.resize(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return candidates[x].score > candidates[y].score; });
  }
  std::vector<Proposal> out;
  out.reserve(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    const ScoredBox& c = candidates[order[r]];
    out.push_back({c.box, c.logits, c.score, r});
  }
  return out;
}

double warp_source_coord(double origin, double length, std::size_t out_size, std::size_t i) {
  return origin + (static_cast<double>(i) + 0.5) * length / static_cast<double>(out_size) - 0.5;
}

Tensor crop_warp(const Tensor& image, const Box& box, double pad_fraction, std::size_t out_size) {
  const auto [w, h] = image_size(image);
  if (out_size == 0) throw std::invalid_argument("crop_warp: out_size must be >= 1");
  const Box region = pad_box(box, pad_fraction, static_cast<double>(w), static_cast<double>(h));
  const std::size_t channels = image.dim(0);
  Tensor out({channels, out_size, out_size});

  std::vector<std::size_t> x0(out_size), x1(out_size), y0(out_size), y1(out_size);
  std::vector<double> fx(out_size), fy(out_size);
  auto setup = [&](double origin, double length, std::size_t limit, std::vector<std::size_t>& lo,
                   std::vector<std::size_t>& hi, std::vector<double>& frac) {
    for (std::size_t i = 0; i < out_size; ++i) {
      const double s = std::clamp(warp_source_coord(origin, length, out_size, i), 0.0, static_cast<double>(limit - 1));
      lo[i] = static_cast<std::size_t>(std::floor(s));
      hi[i] = std::min(lo[i] + 1, limit - 1);
      frac[i] = s - static_cast<double>(lo[i]);
    }
  };
  setup(region.x, region.w, w, x0, x1, fx);
  setup(region.y, region.h, h, y0, y1, fy);

  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t v = 0; v < out_size; ++v) {
      for (std::size_t u = 0; u < out_size; ++u) {
        const double top = image.at(c, y0[v], x0[u]) * (1.0 - fx[u]) + image.at(c, y0[v], x1[u]) * fx[u];
        const double bottom = image.at(c, y1[v], x0[u]) * (1.0 - fx[u]) + image.at(c, y1[v], x1[u]) * fx[u];
        out.at(c, v, u) = top * (1.0 - fy[v]) + bottom * fy[v];
      }
    }
  }
  return out;
}

std::vector<std::pair<double, double>> bcn_infer(const Tensor& image, std::span<const Proposal> proposals,
                                                 const Network& bcn, const PipelineConfig& cfg) {
  const std::size_t n = std::min(cfg.n_b_test, proposals.size());
  std::vector<std::pair<double, double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor crop = crop_warp(image, proposals[i].box, cfg.pad_fraction, cfg.bcn_input);
    const ActivationRecord rec = forward(bcn, normalize_input(crop, cfg.input_mean));
    const Tensor& logits = rec.stage_output(stage::cls);
    out.emplace_back(logits[0], logits[1]);
  }
  return out;
}

std::vector<Detection> detect(const Tensor& image, const Network& rpn, const Network* bcn, const PipelineConfig& cfg) {
  std::vector<Proposal> proposals = rpn_infer(image, rpn, cfg);
  if (proposals.size() > cfg.n_b_test) proposals.resize(cfg.n_b_test);
  std::vector<std::pair<double, double>> bcn_logits(proposals.size(), {0.0, 0.0});
  if (bcn != nullptr && !proposals.empty()) bcn_logits = bcn_infer(image, proposals, *bcn, cfg);

  std::vector<Detection> dets;
  dets.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    Detection d;
    d.box = proposals[i].box;
    d.rpn_logits = proposals[i].rpn_logits;
    d.bcn_logits = bcn_logits[i];
    d.rpn_score = proposals[i].score;
    d.bcn_score = foreground_probability(d.bcn_logits);
    d.fused_score = cfg.fusion ? fuse_scores(d.rpn_logits, d.bcn_logits) : d.rpn_score;
    dets.push_back(d);
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.fused_score > b.fused_score; });
  return dets;
}

std::vector<std::vector<Detection>> detect_dataset(const Dataset& data, const Network& rpn, const Network* bcn,
                                                   const PipelineConfig& cfg) {
  std::vector<std::vector<Detection>> out(data.size());
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < data.size(); i += cfg.workers) {
      out[i] = detect(data.images[i].to_tensor(), rpn, bcn, cfg);
    }
  };
  if (cfg.workers <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < cfg.workers; ++k) pool.emplace_back(work, k);
  }
  return out;
}

std::vector<DetectionRecord> to_records(const std::vector<std::vector<Detection>>& per_image) {
  std::vector<DetectionRecord> out;
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    for (const Detection& d : per_image[i]) {
      out.push_back({i, d.box.x, d.box.y, d.box.w, d.box.h, d.fused_score, d.rpn_score, d.bcn_score});
    }
  }
  return out;
}

// ---------------------------------------------------------------- training

RpnTargets build_rpn_targets(const AnchorGrid& grid, std::span<const Annotation> gts, const PipelineConfig& cfg,
                             double mean_height, std::uint64_t sample_seed) {
  const std::vector<ProposalLabel> labels = label_proposals(grid.anchors, gts, cfg.rpn_policy);
  RpnTargets t;
  t.sampled = sample_minibatch(labels, cfg.rpn_batch, cfg.fg_fraction, sample_seed);
  t.labels.reserve(t.sampled.size());
  t.reg_targets.reserve(t.sampled.size());
  for (const std::size_t a : t.sampled) {
    const ProposalLabel& l = labels[a];
    if (l.cls == LabelClass::foreground) {
      t.labels.push_back(1);
      t.reg_targets.push_back(encode_transform(grid.anchors[a], gts[*l.matched_gt].box));
    } else {
      t.labels.push_back(0);
      t.reg_targets.push_back({});
    }
  }
  t.mask = rasterize_weak_mask(gts, grid.cells_x, grid.cells_y, grid.stride, mean_height);
  return t;
}

LossFn rpn_loss_fn(RpnTargets targets, std::size_t num_anchors, LossWeights weights) {
  return [targets = std::move(targets), num_anchors, weights](const ActivationRecord& rec) {
    RpnObjective obj = rpn_objective(rec.stage_output(stage::cls), rec.stage_output(stage::bbox),
                                     rec.stage_output(stage::seg), targets, num_anchors, weights);
    LossEvaluation ev;
    ev.loss = obj.breakdown.total;
    ev.head_grads[stage::cls] = std::move(obj.cls_grad);
    ev.head_grads[stage::bbox] = std::move(obj.bbox_grad);
    if (obj.seg_grad) ev.head_grads[stage::seg] = std::move(*obj.seg_grad);
    return ev;
  };
}

BcnBatch build_bcn_batch(const Tensor& image, std::span<const Proposal> proposals, std::span<const Annotation> gts,
                         const PipelineConfig& cfg, double mean_height) {
  const auto [w, h] = image_size(image);
  std::vector<Box> boxes;
  boxes.reserve(proposals.size());
  for (const Proposal& p : proposals) boxes.push_back(p.box);
  const std::vector<ProposalLabel> labels = label_proposals(boxes, gts, cfg.bcn_policy);
  const int grid = static_cast<int>(cfg.bcn_input >> cfg.trunk.pools);
  const double mask_mean = cfg.cost_sensitive ? mean_height : 0.0;

  BcnBatch batch;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (labels[i].cls == LabelClass::ignored) continue;
    const Box& b = proposals[i].box;
    batch.crops.push_back(normalize_input(crop_warp(image, b, cfg.pad_fraction, cfg.bcn_input), cfg.input_mean));
    batch.labels.push_back(labels[i].cls == LabelClass::foreground ? 1 : 0);
    batch.cost_weights.push_back(cfg.cost_sensitive ? cost_weight(b.h, mean_height) : 1.0);
    const Box padded = pad_box(b, cfg.pad_fraction, static_cast<double>(w), static_cast<double>(h));
    batch.masks.push_back(proposal_mask(padded, gts, grid, mask_mean));
  }
  return batch;
}

LossFn bcn_loss_fn(int label, double cost_weight_value, WeakMask mask, LossWeights weights) {
  return [label, cost_weight_value, mask = std::move(mask), weights](const ActivationRecord& rec) {
    const Tensor& cls = rec.stage_output(stage::cls);
    const Tensor& seg = rec.stage_output(stage::seg);
    const int labels[1] = {label};
    const double cws[1] = {cost_weight_value};
    BcnObjective obj = bcn_objective(std::span<const Tensor>(&cls, 1), std::span<const Tensor>(&seg, 1), labels, cws,
                                     std::span<const WeakMask>(&mask, 1), weights);
    LossEvaluation ev;
    ev.loss = obj.breakdown.total;
    ev.head_grads[stage::cls] = std::move(obj.cls_grads[0]);
    if (!obj.seg_grads.empty()) ev.head_grads[stage::seg] = std::move(obj.seg_grads[0]);
    return ev;
  };
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::string_view role, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(mix_seed(seed, hash_name(role)), epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

void check_finite(const LossBreakdown& b, std::string_view role, std::size_t iteration) {
  if (!std::isfinite(b.total)) {
    throw DivergenceError(std::string(role) + " training diverged at iteration " + std::to_string(iteration) +
                          ": loss cls=" + std::to_string(b.classification) + " reg=" + std::to_string(b.regression) +
                          " seg=" + std::to_string(b.segmentation));
  }
}

}  // namespace

TrainResult train_rpn(const Dataset& data, const PipelineConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train_rpn: empty dataset");
  const auto scales = cfg.anchors.scales();
  TrainResult result;
  result.net = make_rpn_network(cfg.trunk, scales.size(), cfg.proposal_channels, mix_seed(cfg.seed, hash_name("rpn")));
  result.mean_height = mean_gt_height(data.gts);
  const double mask_mean = cfg.cost_sensitive ? result.mean_height : 0.0;
  OptimState opt(cfg.learning_rate, cfg.momentum);

  std::optional<AnchorGrid> grid;
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < cfg.rpn_epochs; ++epoch) {
    for (const std::size_t i : epoch_order(data.size(), cfg.seed, "rpn-order", epoch)) {
      const GrayImage& img = data.images[i];
      if (!grid || grid->image_w != img.width || grid->image_h != img.height) {
        grid = generate_anchor_grid(img.width, img.height, cfg.stride(), scales, cfg.anchors.aspect_ratio);
      }
      const std::uint64_t sample_seed = mix_seed(mix_seed(cfg.seed, hash_name("rpn-sample")), iteration);
      const RpnTargets targets = build_rpn_targets(*grid, data.gts[i], cfg, mask_mean, sample_seed);
      const ActivationRecord rec = forward(result.net, normalize_input(img.to_tensor(), cfg.input_mean));
      RpnObjective obj = rpn_objective(rec.stage_output(stage::cls), rec.stage_output(stage::bbox),
                                       rec.stage_output(stage::seg), targets, scales.size(), cfg.rpn_weights);
      check_finite(obj.breakdown, "rpn", iteration);
      HeadGradients heads{{stage::cls, std::move(obj.cls_grad)}, {stage::bbox, std::move(obj.bbox_grad)}};
      if (obj.seg_grad) heads[stage::seg] = std::move(*obj.seg_grad);
      sgd_step(result.net, backward(result.net, rec, heads), opt);
      result.history.push_back(obj.breakdown);
      if (progress) progress(iteration, obj.breakdown);
      ++iteration;
    }
  }
  return result;
}

TrainResult train_bcn(const Dataset& data, const Network& rpn, const PipelineConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train_bcn: empty dataset");
  TrainResult result;
  result.net = make_bcn_network(cfg.trunk, cfg.bcn_input, cfg.bcn_fc, mix_seed(cfg.seed, hash_name("bcn")));
  copy_trunk(rpn, result.net);
  result.mean_height = mean_gt_height(data.gts);
  OptimState opt(cfg.learning_rate, cfg.momentum);

  // The RPN is frozen, so its proposals are computed once.
  std::vector<std::vector<Proposal>> proposals(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    proposals[i] = rpn_infer(data.images[i].to_tensor(), rpn, cfg);
    if (proposals[i].size() > cfg.n_b_train) proposals[i].resize(cfg.n_b_train);
  }

  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < cfg.bcn_epochs; ++epoch) {
    for (const std::size_t i : epoch_order(data.size(), cfg.seed, "bcn-order", epoch)) {
      const BcnBatch batch =
          build_bcn_batch(data.images[i].to_tensor(), proposals[i], data.gts[i], cfg, result.mean_height);
      if (batch.crops.empty()) continue;
      std::vector<ActivationRecord> records;
      std::vector<Tensor> cls;
      std::vector<Tensor> seg;
      records.reserve(batch.crops.size());
      for (const Tensor& crop : batch.crops) {
        records.push_back(forward(result.net, crop));
        cls.push_back(records.back().stage_output(stage::cls));
        seg.push_back(records.back().stage_output(stage::seg));
      }
      BcnObjective obj = bcn_objective(cls, seg, batch.labels, batch.cost_weights, batch.masks, cfg.bcn_weights);
      check_finite(obj.breakdown, "bcn", iteration);
      Gradients grads = zero_gradients(result.net);
      for (std::size_t k = 0; k < records.size(); ++k) {
        HeadGradients heads{{stage::cls, std::move(obj.cls_grads[k])}};
        if (!obj.seg_grads.empty()) heads[stage::seg] = std::move(obj.seg_grads[k]);
        backward_into(result.net, records[k], heads, grads);
      }
      sgd_step(result.net, grads, opt);
      result.history.push_back(obj.breakdown);
      if (progress) progress(iteration, obj.breakdown);
      ++iteration;
    }
  }
  return result;
}

Tensor channel_max(const Tensor& fmap) {
  if (fmap.rank() != 3 || fmap.dim(0) == 0) {
    throw std::invalid_argument("channel_max: expected a (C, H, W) map, got " + shape_string(fmap.shape()));
  }
  const std::size_t h = fmap.dim(1);
  const std::size_t w = fmap.dim(2);
  Tensor out({h, w}, -INFINITY);
  for (std::size_t c = 0; c < fmap.dim(0); ++c) {
    for (std::size_t i = 0; i < h * w; ++i) out[i] = std::max(out[i], fmap[c * h * w + i]);
  }
  return out;
}

GrayImage feature_map_image(const ActivationRecord& record, const std::string& layer_name) {
  const Tensor map = channel_max(record.layer_output(layer_name));
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  GrayImage img;
  img.height = static_cast<int>(map.dim(0));
  img.width = static_cast<int>(map.dim(1));
  img.pixels.resize(map.size());
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < map.size(); ++i) {
    img.pixels[i] = range > 0.0 ? static_cast<std::uint8_t>(std::lround((map[i] - *lo) / range * 255.0)) : 128;
  }
  return img;
}

void dump_feature_map(const ActivationRecord& record, const std::string& layer_name,
                      const std::filesystem::path& path) {
  write_pgm(feature_map_image(record, layer_name), path);
}

}  // namespace sds
