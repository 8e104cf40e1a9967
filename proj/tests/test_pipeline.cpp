#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sds/checkpoint.hpp"
#include "sds/dataio.hpp"
#include "sds/pipeline.hpp"
#include "sds/random.hpp"
#include "sds/synthdata.hpp"

namespace sds {
namespace {

// Golden files hold one line of whitespace-separated numbers per item.
// SDS_UPDATE_GOLDEN=1 rewrites them from the current build.
void check_golden(const std::string& name, const std::vector<std::vector<double>>& rows) {
  const std::filesystem::path path = std::filesystem::path(SDS_GOLDEN_DIR) / name;
  if (std::getenv("SDS_UPDATE_GOLDEN") != nullptr) {
    std::ostringstream os;
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? " " : "") << format_double(r[i]);
      os << '\n';
    }
    write_text_file(path, os.str());
    return;
  }
  ASSERT_TRUE(std::filesystem::exists(path)) << path << " missing; run with SDS_UPDATE_GOLDEN=1";
  std::istringstream in(read_text_file(path));
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ASSERT_LT(row, rows.size()) << name << ": more golden rows than produced";
    std::istringstream ls(line);
    std::vector<double> want;
    for (double v; ls >> v;) want.push_back(v);
    ASSERT_EQ(want.size(), rows[row].size()) << name << " row " << row;
    for (std::size_t i = 0; i < want.size(); ++i) {
      // Relative slack absorbs vectorization differences between CPUs.
      ASSERT_NEAR(rows[row][i], want[i], 1e-9 * std::max(1.0, std::abs(want[i]))) << name << " row " << row;
    }
    ++row;
  }
  EXPECT_EQ(row, rows.size()) << name;
}

SceneConfig small_scene() {
  SceneConfig s;
  s.image_w = 160;
  s.image_h = 128;
  s.height_min = 30;
  s.height_max = 110;
  s.pedestrians_min = 1;
  s.pedestrians_max = 2;
  s.seed = 5;
  return s;
}

Dataset make_dataset(const SceneConfig& s, std::size_t n, const std::string& stream) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const Scene sc = generate_scene(s, i, stream);
    d.images.push_back(GrayImage::from_tensor(sc.image));
    d.gts.push_back(sc.annotations);
  }
  return d;
}

PipelineConfig small_config() {
  PipelineConfig c;
  c.trunk.channels = {4, 8, 8, 8, 8};
  c.proposal_channels = 8;
  c.bcn_fc = {16};
  c.bcn_input = 48;
  c.rpn_epochs = 1;
  c.bcn_epochs = 1;
  c.seed = 3;
  return c;
}

Network untrained_rpn(const PipelineConfig& c) {
  return make_rpn_network(c.trunk, c.anchors.count, c.proposal_channels, 77);
}

Network untrained_bcn(const PipelineConfig& c) { return make_bcn_network(c.trunk, c.bcn_input, c.bcn_fc, 78); }

TEST(Config, ProtocolDefaults) {
  const PipelineConfig c;
  EXPECT_EQ(c.anchors.count, 9u);
  EXPECT_EQ(c.anchors.min_height, 25.0);
  EXPECT_EQ(c.anchors.max_height, 350.0);
  EXPECT_EQ(c.anchors.aspect_ratio, 0.41);
  EXPECT_EQ(c.stride(), 16);
  EXPECT_EQ(c.nms_iou, 0.5);
  EXPECT_EQ(c.rpn_batch, 120u);
  EXPECT_EQ(c.fg_fraction, 1.0 / 6.0);
  EXPECT_EQ(c.n_b_train, 20u);
  EXPECT_EQ(c.n_b_test, 15u);
  EXPECT_EQ(c.bcn_input, 112u);
  EXPECT_EQ(c.pad_fraction, 0.2);
  EXPECT_EQ(c.learning_rate, 0.001);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.rpn_policy.fg_iou_min, 0.5);
  EXPECT_EQ(c.bcn_policy.fg_iou_min, 0.7);
  EXPECT_FALSE(c.bcn_policy.inclusive);
  EXPECT_EQ(c.rpn_weights.cls, 1.0);
  EXPECT_EQ(c.rpn_weights.reg, 5.0);
  EXPECT_EQ(c.rpn_weights.seg, 1.0);
  EXPECT_EQ(c.bcn_weights.cls, 1.0);
  EXPECT_EQ(c.bcn_weights.seg, 1.0);
  EXPECT_TRUE(c.cost_sensitive);
  EXPECT_TRUE(c.fusion);
  EXPECT_NO_THROW(c.validate());
}

TEST(Fuse, Examples) {
  EXPECT_EQ(fuse_scores({0, 0}, {0, 0}), 0.5);
  EXPECT_NEAR(fuse_scores({0, 2}, {0, 2}), std::exp(4.0) / (std::exp(4.0) + 1.0), 1e-15);
  EXPECT_NEAR(fuse_scores({0, 2}, {0, 2}), 0.9820, 5e-5);
  EXPECT_EQ(fuse_scores({0.3, 1.1}, {-2.5, -2.5}), foreground_probability({0.3, 1.1}));
  EXPECT_EQ(fuse_scores({800, -800}, {900, 0}), 0.0);
  EXPECT_EQ(fuse_scores({-800, 800}, {0, 900}), 1.0);
}

TEST(Fuse, MonotoneNeutralAndAgreeing) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-8, 8), step(0.01, 3);
  for (int trial = 0; trial < 100000; ++trial) {
    const std::pair<double, double> r{u(rng), u(rng)}, b{u(rng), u(rng)};
    const double f = fuse_scores(r, b);
    const double d = step(rng);
    ASSERT_GT(fuse_scores({r.first, r.second + d}, b), f);
    ASSERT_GT(fuse_scores(r, {b.first, b.second + d}), f);
    const double n = u(rng);
    ASSERT_EQ(fuse_scores(r, {n, n}), foreground_probability(r));
    const double pr = foreground_probability(r), pb = foreground_probability(b);
    if (pr > 0.5 && pb > 0.5) {
      ASSERT_GT(f, 0.5);
    }
    if (pr < 0.5 && pb < 0.5) {
      ASSERT_LT(f, 0.5);
    }
  }
}

TEST(CropWarp, FullImageIsIdentity) {
  std::mt19937_64 rng(1);
  Tensor img({1, 24, 24});
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : img.values()) v = u(rng);
  const Tensor out = crop_warp(img, Box(0, 0, 24, 24), 0.0, 24);
  for (std::size_t i = 0; i < img.size(); ++i) ASSERT_NEAR(out[i], img[i], 1e-12);
}

TEST(CropWarp, DoublingMapsEachSourcePixelToTwoByTwo) {
  for (std::size_t i = 0; i < 112; ++i) {
    const double s = warp_source_coord(20.0, 56.0, 112, i);
    EXPECT_EQ(std::lround(s), static_cast<long>(20 + i / 2)) << i;
  }
  Tensor img({1, 80, 80});
  for (std::size_t y = 0; y < 80; ++y) {
    for (std::size_t x = 0; x < 80; ++x) img.at(0, y, x) = 0.01 * x + 0.003 * y;
  }
  // A linear ramp is reproduced exactly by bilinear sampling.
  const Tensor out = crop_warp(img, Box(10, 10, 56, 56), 0.0, 112);
  for (std::size_t v = 0; v < 112; ++v) {
    for (std::size_t u = 0; u < 112; ++u) {
      const double sx = warp_source_coord(10, 56, 112, u), sy = warp_source_coord(10, 56, 112, v);
      ASSERT_NEAR(out.at(0, v, u), 0.01 * sx + 0.003 * sy, 1e-12);
    }
  }
}

TEST(CropWarp, ConstantStaysConstant) {
  const Tensor img({1, 50, 70}, 0.37);
  const Tensor out = crop_warp(img, Box(60, 40, 30, 30), 0.2, 112);
  for (double v : out.values()) ASSERT_DOUBLE_EQ(v, 0.37);
  EXPECT_THROW(crop_warp(img, Box(100, 100, 5, 5), 0.2, 112), std::invalid_argument);
}

TEST(RpnInfer, UntrainedGolden) {
  const PipelineConfig c = small_config();
  const Scene s = generate_scene(small_scene(), 0, "golden");
  const auto props = rpn_infer(s.image, untrained_rpn(c), c);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < std::min<std::size_t>(props.size(), 25); ++i) {
    const auto& p = props[i];
    rows.push_back({p.box.x, p.box.y, p.box.w, p.box.h, p.rpn_logits.first, p.rpn_logits.second, p.score});
  }
  check_golden("rpn_untrained.txt", rows);
}

TEST(RpnInfer, NmsOutputIsSuppressedSubset) {
  const PipelineConfig c = small_config();
  const Scene s = generate_scene(small_scene(), 1, "golden");
  const Network net = untrained_rpn(c);
  const auto all = rpn_infer(s.image, net, c, false);
  const auto kept = rpn_infer(s.image, net, c, true);
  ASSERT_LT(kept.size(), all.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    EXPECT_EQ(kept[i].rank, i);
    if (i) {
      EXPECT_GE(kept[i - 1].score, kept[i].score);
    }
    EXPECT_GE(kept[i].box.x, 0.0);
    EXPECT_GE(kept[i].box.y, 0.0);
    EXPECT_LE(kept[i].box.right(), 160.0 + 1e-9);
    EXPECT_LE(kept[i].box.bottom(), 128.0 + 1e-9);
    bool found = false;
    for (const auto& a : all) found |= a.box == kept[i].box && a.score == kept[i].score;
    EXPECT_TRUE(found);
    for (std::size_t j = 0; j < i; ++j) ASSERT_LE(iou(kept[i].box, kept[j].box), 0.5);
  }
}

TEST(BcnInfer, DuplicatesAndCap) {
  PipelineConfig c = small_config();
  const Scene s = generate_scene(small_scene(), 2, "golden");
  const Network bcn = untrained_bcn(c);
  const Proposal p{Box(30, 20, 30, 70), {0, 0}, 0.5, 0};
  const std::vector<Proposal> dup{p, p, p};
  const auto logits = bcn_infer(s.image, dup, bcn, c);
  ASSERT_EQ(logits.size(), 3u);
  EXPECT_EQ(logits[0], logits[1]);
  EXPECT_EQ(logits[1], logits[2]);
  c.n_b_test = 2;
  EXPECT_EQ(bcn_infer(s.image, dup, bcn, c).size(), 2u);
}

TEST(BcnInfer, UntrainedGolden) {
  const PipelineConfig c = small_config();
  const Scene s = generate_scene(small_scene(), 3, "golden");
  const auto props = rpn_infer(s.image, untrained_rpn(c), c);
  const auto logits = bcn_infer(s.image, props, untrained_bcn(c), c);
  std::vector<std::vector<double>> rows;
  for (const auto& l : logits) rows.push_back({l.first, l.second});
  check_golden("bcn_untrained.txt", rows);
}

TEST(Detect, RpnOnlyModeUsesRpnScore) {
  const PipelineConfig c = small_config();
  const Scene s = generate_scene(small_scene(), 4, "golden");
  const auto dets = detect(s.image, untrained_rpn(c), nullptr, c);
  ASSERT_EQ(dets.size(), c.n_b_test);
  for (const auto& d : dets) {
    EXPECT_EQ(d.fused_score, d.rpn_score);
    EXPECT_EQ(d.bcn_score, 0.5);
  }
}

TEST(Detect, NoProposalsMeansNoDetections) {
  const PipelineConfig c = small_config();
  Network rpn = untrained_rpn(c);
  // Push every decoded box far off the right edge.
  auto& bbox = dynamic_cast<Conv2d&>(*rpn.stage(stage::bbox).layers.at(0));
  for (std::size_t s = 0; s < c.anchors.count; ++s) bbox.bias()[4 * s] = 1e4;
  const Scene s = generate_scene(small_scene(), 5, "golden");
  EXPECT_TRUE(detect(s.image, rpn, nullptr, c).empty());
}

TEST(Detect, SortedNonOverlappingGolden) {
  const PipelineConfig c = small_config();
  const Scene s = generate_scene(small_scene(), 6, "golden");
  const Network rpn = untrained_rpn(c), bcn = untrained_bcn(c);
  const auto dets = detect(s.image, rpn, &bcn, c);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    if (i) {
      EXPECT_GE(dets[i - 1].fused_score, d.fused_score);
    }
    for (std::size_t j = 0; j < i; ++j) EXPECT_LE(iou(dets[j].box, d.box), c.nms_iou);
    EXPECT_EQ(d.fused_score, fuse_scores(d.rpn_logits, d.bcn_logits));
    rows.push_back({d.box.x, d.box.y, d.box.w, d.box.h, d.fused_score, d.rpn_score, d.bcn_score});
  }
  check_golden("detect_untrained.txt", rows);
}

TEST(Detect, DatasetResultIndependentOfWorkers) {
  PipelineConfig c = small_config();
  const Dataset d = make_dataset(small_scene(), 5, "golden");
  const Network rpn = untrained_rpn(c), bcn = untrained_bcn(c);
  const auto one = detect_dataset(d, rpn, &bcn, c);
  c.workers = 3;
  const auto three = detect_dataset(d, rpn, &bcn, c);
  EXPECT_EQ(to_records(one), to_records(three));
}

TEST(Training, RpnLossDecreasesAndIsDeterministic) {
  PipelineConfig c = small_config();
  const Dataset d = make_dataset(small_scene(), 50, "train");
  const auto a = train_rpn(d, c);
  ASSERT_EQ(a.history.size(), 50u);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) first += a.history[i].total, last += a.history[40 + i].total;
  EXPECT_LT(last, first);
  const auto b = train_rpn(d, c);
  EXPECT_TRUE(serialize_checkpoint({a.net, {}}) == serialize_checkpoint({b.net, {}}));
}

TEST(Training, SegOffDiffersOnlyThroughSegHeadAtFirstStep) {
  PipelineConfig c = small_config();
  const Dataset d = make_dataset(small_scene(), 1, "train");
  const auto full = train_rpn(d, c);
  c.rpn_weights.seg = 0.0;
  const auto off = train_rpn(d, c);
  EXPECT_EQ(full.history[0].classification, off.history[0].classification);
  EXPECT_EQ(full.history[0].regression, off.history[0].regression);
  EXPECT_EQ(off.history[0].total, off.history[0].classification + 5.0 * off.history[0].regression);
  // Stages the seg head cannot reach are updated identically.
  for (const char* st : {stage::proposal, stage::cls, stage::bbox}) {
    const auto p = full.net.stage_parameters(st);
    const auto q = off.net.stage_parameters(st);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(*p[i], *q[i]) << st;
  }
  const auto p = full.net.stage_parameters(stage::trunk);
  const auto q = off.net.stage_parameters(stage::trunk);
  EXPECT_FALSE(*p.back() == *q.back());
}

TEST(Training, BcnStartsFromRpnTrunkAndIsDeterministic) {
  PipelineConfig c = small_config();
  c.bcn_epochs = 0;
  const Dataset d = make_dataset(small_scene(), 6, "train");
  const auto rpn = train_rpn(d, c);
  const auto start = train_bcn(d, rpn.net, c);
  const auto p = start.net.stage_parameters(stage::trunk);
  const auto q = rpn.net.stage_parameters(stage::trunk);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(*p[i], *q[i]);
  c.bcn_epochs = 1;
  const auto a = train_bcn(d, rpn.net, c);
  const auto b = train_bcn(d, rpn.net, c);
  EXPECT_FALSE(a.history.empty());
  EXPECT_TRUE(serialize_checkpoint({a.net, {}}) == serialize_checkpoint({b.net, {}}));
}

TEST(Training, StrictPolicyLabelsPointSixAsBackground) {
  PipelineConfig c = small_config();
  const Tensor img({1, 128, 160}, 0.5);
  const Box gt(40, 20, 40, 100);
  const std::vector<Annotation> gts{Annotation::unoccluded(gt)};
  const std::vector<Proposal> props{{Box(50, 20, 40, 100), {0, 0}, 0.5, 0}, {gt, {0, 0}, 0.5, 1}};
  const auto strict = build_bcn_batch(img, props, gts, c, 60);
  ASSERT_EQ(strict.labels.size(), 2u);
  EXPECT_EQ(strict.labels[0], 0);
  EXPECT_EQ(strict.labels[1], 1);
  EXPECT_DOUBLE_EQ(strict.cost_weights[0], 1.0 + 100.0 / 60.0);
  c.bcn_policy = LabelPolicy::rpn();
  EXPECT_EQ(build_bcn_batch(img, props, gts, c, 60).labels[0], 1);
  c.cost_sensitive = false;
  EXPECT_EQ(build_bcn_batch(img, props, gts, c, 60).cost_weights[0], 1.0);
}

TEST(Training, RpnTargetsFollowProtocol) {
  const PipelineConfig c;
  const auto scales = c.anchors.scales();
  const AnchorGrid grid = generate_anchor_grid(320, 240, 16, scales, 0.41);
  std::vector<Annotation> gts{Annotation::unoccluded(Box(100, 50, 0.41 * 120, 120))};
  const RpnTargets t = build_rpn_targets(grid, gts, c, 60, 9);
  EXPECT_EQ(t.sampled.size(), 120u);
  std::size_t fg = 0;
  for (std::size_t k = 0; k < t.sampled.size(); ++k) {
    if (t.labels[k] != 1) continue;
    ++fg;
    EXPECT_GE(iou(grid.anchors[t.sampled[k]], gts[0].box), 0.5);
    const Box back = decode_transform(grid.anchors[t.sampled[k]], t.reg_targets[k]);
    EXPECT_NEAR(back.h, 120.0, 1e-9);
  }
  EXPECT_GT(fg, 0u);
  EXPECT_LE(fg, 20u);
  EXPECT_EQ(t.mask.width, 20);
  EXPECT_EQ(t.mask.height, 15);
}

// A lone pedestrian on a quiet background is found after a short run.
// Heights stay near the 68 and 95 px anchors so every gt has foreground
// anchors to learn from.
TEST(Training, TrainedRpnFindsHighContrastPedestrian) {
  SceneConfig s;
  s.image_w = 128;
  s.image_h = 128;
  s.pedestrians_min = 1;
  s.pedestrians_max = 1;
  s.height_min = 70;
  s.height_max = 90;
  s.occluder_prob = 0.0;
  s.distractors_min = 0;
  s.distractors_max = 0;
  s.seed = 12;
  PipelineConfig c;
  c.rpn_epochs = 10;
  c.learning_rate = 0.001;
const Dataset train = make_dataset(s, 200, "train");
  const auto rpn = train_rpn(train, c);
  std::size_t hits = 0;
  const std::size_t n = 20;
  for (std::size_t i = 0; i < n; ++i) {
    const Scene sc = generate_scene(s, i, "test");
    const auto props = rpn_infer(sc.image, rpn.net, c);
    ASSERT_FALSE(props.empty());
    hits += iou(props[0].box, sc.annotations.at(0).box) >= 0.5;
  }
  EXPECT_GE(hits, n * 3 / 4) << hits << " of " << n;
}

}  // namespace
}  // namespace sds
