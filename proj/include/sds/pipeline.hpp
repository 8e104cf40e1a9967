#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sds/dataio.hpp"
#include "sds/geometry.hpp"
#include "sds/gradcheck.hpp"
#include "sds/losses.hpp"
#include "sds/network.hpp"
#include "sds/supervision.hpp"

namespace sds {

struct AnchorConfig {
  std::size_t count = 9;
  double min_height = 25.0;
  double max_height = 350.0;
  double aspect_ratio = 0.41;

  std::vector<double> scales() const { return geometric_scales(min_height, max_height, count); }
};

struct PipelineConfig {
  AnchorConfig anchors;
  TrunkSpec trunk;  // stride() is the anchor stride
  std::size_t proposal_channels = 32;
  std::vector<std::size_t> bcn_fc{64};
  /// Subtracted from every pixel before the network sees it.
  double input_mean = 0.5;

  std::size_t rpn_batch = 120;
  double fg_fraction = 1.0 / 6.0;
  LabelPolicy rpn_policy = LabelPolicy::rpn();
  LossWeights rpn_weights = LossWeights::rpn_defaults();

  LabelPolicy bcn_policy = LabelPolicy::bcn_strict();
  LossWeights bcn_weights = LossWeights::bcn_defaults();
  std::size_t n_b_train = 20;
  std::size_t n_b_test = 15;
  std::size_t bcn_input = 112;
  double pad_fraction = 0.2;
  /// w = 1 + h / mean height in the BCN classification and both
  /// segmentation losses; w = 1 when off.
  bool cost_sensitive = true;
  /// When off, detections are ranked by the RPN score alone.
  bool fusion = true;

  double nms_iou = 0.5;
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t rpn_epochs = 1;
  std::size_t bcn_epochs = 1;
  std::uint64_t seed = 1;
  /// Inference fan-out; results do not depend on it.
  std::size_t workers = 1;

  int stride() const { return static_cast<int>(trunk.stride()); }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Images held as 8-bit rasters, converted on use.
struct Dataset {
  std::vector<GrayImage> images;
  std::vector<std::vector<Annotation>> gts;

  std::size_t size() const { return images.size(); }
  static Dataset load(const std::filesystem::path& manifest);
};

/// (1, H, W) image in [0, 1] -> network input.
Tensor normalize_input(const Tensor& image, double mean);

struct Proposal {
  Box box;
  std::pair<double, double> rpn_logits{0.0, 0.0};
  double score = 0.0;
  std::size_t rank = 0;
};

struct Detection {
  Box box;
  double fused_score = 0.0;
  double rpn_score = 0.0;
  double bcn_score = 0.0;
  std::pair<double, double> rpn_logits{0.0, 0.0};
  std::pair<double, double> bcn_logits{0.0, 0.0};
};

/// Softmax foreground probability of a (background, foreground) pair.
double foreground_probability(std::pair<double, double> logits);

/// Softmax over the element-wise sum of both stages' logits.
double fuse_scores(std::pair<double, double> rpn_logits, std::pair<double, double> bcn_logits);

/// Anchors decoded through the bbox head, clipped, ranked by foreground
/// score and thinned by NMS at cfg.nms_iou. `use_nms = false` skips NMS.
std::vector<Proposal> rpn_infer(const Tensor& image, const Network& rpn, const PipelineConfig& cfg,
                                bool use_nms = true);

/// Source coordinate sampled by output pixel `i` when a span of `length`
/// source pixels starting at `origin` is resized to `out_size`.
double warp_source_coord(double origin, double length, std::size_t out_size, std::size_t i);

/// pad_box, crop and bilinear resize to out_size x out_size.
Tensor crop_warp(const Tensor& image, const Box& box, double pad_fraction, std::size_t out_size);

/// Logits for the first min(n_b_test, |proposals|) proposals.
std::vector<std::pair<double, double>> bcn_infer(const Tensor& image, std::span<const Proposal> proposals,
                                                 const Network& bcn, const PipelineConfig& cfg);

/// Top n_b_test proposals scored by both stages (RPN only when `bcn` is
/// null: neutral BCN logits, so the fused score is the RPN score), sorted
/// by fused score descending.
std::vector<Detection> detect(const Tensor& image, const Network& rpn, const Network* bcn, const PipelineConfig& cfg);

/// detect() over a dataset with cfg.workers threads; output in image order.
std::vector<std::vector<Detection>> detect_dataset(const Dataset& data, const Network& rpn, const Network* bcn,
                                                   const PipelineConfig& cfg);

std::vector<DetectionRecord> to_records(const std::vector<std::vector<Detection>>& per_image);

// ---------------------------------------------------------------- training

/// Labels every anchor, samples the minibatch and rasterizes the mask.
/// `mean_height` <= 0 gives unit mask weights.
RpnTargets build_rpn_targets(const AnchorGrid& grid, std::span<const Annotation> gts, const PipelineConfig& cfg,
                             double mean_height, std::uint64_t sample_seed);

/// Loss function over an RPN activation record with fixed targets.
LossFn rpn_loss_fn(RpnTargets targets, std::size_t num_anchors, LossWeights weights);

struct BcnBatch {
  std::vector<Tensor> crops;  // normalized network inputs
  std::vector<int> labels;
  std::vector<double> cost_weights;
  std::vector<WeakMask> masks;
};

/// Crops for the given proposals under cfg.bcn_policy; ignored proposals
/// are left out.
BcnBatch build_bcn_batch(const Tensor& image, std::span<const Proposal> proposals,
                         std::span<const Annotation> gts, const PipelineConfig& cfg, double mean_height);

/// BCN objective on a single crop.
LossFn bcn_loss_fn(int label, double cost_weight, WeakMask mask, LossWeights weights);

struct TrainResult {
  Network net;
  std::vector<LossBreakdown> history;
  double mean_height = 0.0;
};

using ProgressFn = std::function<void(std::size_t iteration, const LossBreakdown&)>;

/// One image per SGD step, cfg.rpn_epochs passes in a seeded order.
/// Throws DivergenceError on a non-finite loss.
TrainResult train_rpn(const Dataset& data, const PipelineConfig& cfg, const ProgressFn& progress = {});

/// BCN trunk starts from the RPN trunk; each step trains on the top
/// n_b_train proposals of one image.
TrainResult train_bcn(const Dataset& data, const Network& rpn, const PipelineConfig& cfg,
                      const ProgressFn& progress = {});

/// Channel-wise maximum of a (C, H, W) map -> (H, W).
Tensor channel_max(const Tensor& fmap);

/// Min-max normalized 8-bit rendering of channel_max(layer output); a
/// constant map renders as mid-gray (128).
GrayImage feature_map_image(const ActivationRecord& record, const std::string& layer_name);
void dump_feature_map(const ActivationRecord& record, const std::string& layer_name,
                      const std::filesystem::path& path);

}  // namespace sds
