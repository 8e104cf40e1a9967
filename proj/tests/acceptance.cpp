// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Tolerances are fixed here, not in
// the config, so a config edit cannot loosen them.

#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eval_fixture.hpp"
#include "oracles.hpp"
#include "sds/commands.hpp"
#include "sds/config.hpp"
#include "sds/dataio.hpp"
#include "sds/evaluation.hpp"
#include "sds/experiment.hpp"
#include "sds/geometry.hpp"
#include "sds/losses.hpp"
#include "sds/pipeline.hpp"
#include "sds/supervision.hpp"
#include "sds/synthdata.hpp"

namespace fs = std::filesystem;
using namespace sds;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr double kIouTolerance = 1e-6;
constexpr double kSegLossTolerance = 1e-12;
constexpr double kTrendSeconds = 45.0 * 60.0;
constexpr double kIlluminationFraction = 0.70;
constexpr std::size_t kTrendTrainImages = 2000;
constexpr std::size_t kTrendTestImages = 500;
constexpr std::size_t kFusePairs = 100000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

struct Outcome {
  std::string id;
  bool pass = false;
  std::string detail;
};

class Report {
 public:
  void add(std::string id, bool pass, std::string detail) {
    std::cout << (pass ? "PASS " : "FAIL ") << id << "  " << detail << std::endl;
    outcomes_.push_back({std::move(id), pass, std::move(detail)});
  }

  bool all_passed() const {
    for (const Outcome& o : outcomes_) {
      if (!o.pass) return false;
    }
    return true;
  }

  std::string summary() const {
    std::string out;
    for (const Outcome& o : outcomes_) out += (o.pass ? "PASS " : "FAIL ") + o.id + "  " + o.detail + "\n";
    return out;
  }

 private:
  std::vector<Outcome> outcomes_;
};

void note(const std::string& msg) { std::cout << "  .. " << msg << std::endl; }

// ------------------------------------------------------------------ 1

void gradient_suite(const RunConfig& base, Report& report) {
  RunConfig cfg = base;
  cfg.gradcheck_tolerance = kGradTolerance;
  const GradcheckSuite suite = run_gradcheck_suite(cfg);
  double worst = 0.0;
  std::string worst_name;
  for (const GradcheckCase& c : suite.cases) {
    note(fmt("%-4s %-18s %.3e (%zu entries)", c.passed ? "ok" : "FAIL", c.name.c_str(), c.max_error, c.checked));
    if (c.max_error >= worst) {
      worst = c.max_error;
      worst_name = c.name;
    }
  }
  report.add("1 gradient suite", suite.passed() && suite.seconds < kGradSeconds,
             fmt("%zu cases, worst %.2e (%s) < %.0e; %.1f s < %.0f s", suite.cases.size(), worst, worst_name.c_str(),
                 kGradTolerance, suite.seconds, kGradSeconds));
}

// ------------------------------------------------------------------ 2

void oracles(Report& report) {
  {
    std::mt19937_64 rng(1234);
    std::uniform_int_distribution<int> count(0, 200);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::size_t mismatches = 0, boxes = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = trial == 0 ? 200 : count(rng);
      std::vector<ScoredBox> c;
      for (int i = 0; i < n; ++i) c.push_back({oracle::random_box(rng, 150.0), unit(rng), {}});
      boxes += c.size();
      mismatches += nms(c, 0.5) != oracle::brute_force_nms(c, 0.5);
    }
    report.add("2 nms oracle", mismatches == 0,
               fmt("%zu of 1000 instances differ from brute force (%zu boxes, up to 200 each)", mismatches, boxes));
  }
  {
    std::mt19937_64 rng(20240101);
    std::uniform_int_distribution<int> pos(0, 40), size(1, 30);
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
      const int ax = pos(rng), ay = pos(rng), aw = size(rng), ah = size(rng);
      const int bx = pos(rng), by = pos(rng), bw = size(rng), bh = size(rng);
      const double got = iou(Box(ax, ay, aw, ah), Box(bx, by, bw, bh));
      worst = std::max(worst, std::abs(got - oracle::pixel_count_iou(ax, ay, aw, ah, bx, by, bw, bh)));
    }
    report.add("2 iou oracle", worst <= kIouTolerance,
               fmt("max |iou - pixel count| %.2e <= %.0e over 10000 integer pairs", worst, kIouTolerance));
  }
  {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> dim(1, 12);
    double worst = 0.0;
    for (int trial = 0; trial < 2000; ++trial) {
      const int w = dim(rng), h = dim(rng);
      const WeakMask m = oracle::random_mask(w, h, rng);
      const Tensor logits = oracle::random_logits(static_cast<std::size_t>(h), static_cast<std::size_t>(w), rng);
      worst = std::max(worst, std::abs(segmentation_loss(logits, m).loss - oracle::scalar_seg_loss(logits, m)));
    }
    report.add("2 segmentation loss oracle", worst <= kSegLossTolerance,
               fmt("max difference from scalar loop %.2e <= %.0e over 2000 masks", worst, kSegLossTolerance));
  }
}

// ------------------------------------------------------------------ 3

void metric_fixtures(Report& report) {
  const auto gts = fixture::mr4_gts();
  const auto images = eval_images(fixture::mr4_detections(), gts, ScoreKind::fused);
  const EvalCurve curve = mr_fppi_curve(images, 0.5);
  const double lamr = log_average_miss_rate(curve);
  report.add("3 four-image MR fixture", curve.points == fixture::mr4_curve() && lamr == fixture::mr4_lamr(),
             fmt("%zu curve points match exactly; LAMR %.17g == %.17g", curve.points.size(), lamr,
                 fixture::mr4_lamr()));

  std::vector<ImageEval> ladder(1);
  ladder[0].gts = {Annotation::unoccluded(Box(10, 10, 41, 100)), Annotation::unoccluded(Box(100, 10, 41, 100))};
  ladder[0].dets = {{ladder[0].gts[0].box, 0.9, {}}, {Box(300, 300, 40, 90), 0.8, {}}};
  const double ap = average_precision(ladder, 0.5);
  const double expected = (6.0 * 1.0 + 5.0 * 0.0) / 11.0;
  report.add("3 two-gt AP ladder", ap == expected, fmt("AP %.17g == (6*1 + 5*0)/11", ap));
}

// ------------------------------------------------------------------ 4

void protocol_constants(const RunConfig& loaded, Report& report) {
  std::vector<std::string> wrong;
  auto check = [&](const std::string& what, bool ok) {
    if (!ok) wrong.push_back(what);
  };
  for (const RunConfig* c : {&loaded, static_cast<const RunConfig*>(nullptr)}) {
    const RunConfig defaults;
    const PipelineConfig p = effective_pipeline(c ? *c : defaults);
    const std::string src = c ? "config: " : "defaults: ";
    check(src + "rpn fg IoU >= 0.5", p.rpn_policy.fg_iou_min == 0.5 && p.rpn_policy.inclusive);
    check(src + "bcn fg IoU > 0.7", p.bcn_policy.fg_iou_min == 0.7 && !p.bcn_policy.inclusive);
    check(src + "nms 0.5", p.nms_iou == 0.5);
    check(src + "120 sampled anchors", p.rpn_batch == 120);
    check(src + "fg:bg 1:5", p.fg_fraction == 1.0 / 6.0);
    check(src + "N_b 20/15", p.n_b_train == 20 && p.n_b_test == 15);
    check(src + "pad 0.2", p.pad_fraction == 0.2);
    check(src + "bcn input 112", p.bcn_input == 112);
    check(src + "rpn lambdas 1/5/1", p.rpn_weights.cls == 1.0 && p.rpn_weights.reg == 5.0 && p.rpn_weights.seg == 1.0);
    check(src + "bcn lambdas 1/-/1", p.bcn_weights.cls == 1.0 && p.bcn_weights.seg == 1.0);
    check(src + "lr 0.001", p.learning_rate == 0.001);
    check(src + "momentum 0.9", p.momentum == 0.9);
    check(src + "9 anchors", p.anchors.count == 9 && p.anchors.scales().size() == 9);
    check(src + "anchor ratio 0.41", p.anchors.aspect_ratio == 0.41);
    check(src + "anchors 25..350", p.anchors.scales().front() == 25.0 && p.anchors.scales().back() == 350.0);
    check(src + "stride 16", p.stride() == 16);
  }
  std::string detail = "defaults and acceptance config: 0.5/0.7, NMS 0.5, 120 at 1:5, N_b 20/15, pad 0.2, 112, "
                       "lambda 1/5/1, lr 0.001, momentum 0.9, 9 anchors @ 0.41 over 25..350, stride 16";
  for (const std::string& w : wrong) detail += "; MISMATCH " + w;
  report.add("4 protocol constants", wrong.empty(), detail);
}

// ------------------------------------------------------------------ 5

void footprint(Report& report) {
  int min_cols = 99, max_cols = 0, min_rows = 99, max_rows = 0;
  for (double ox = 0.0; ox < 16.0; ox += 1.0) {
    for (double oy = 0.0; oy < 16.0; oy += 1.0) {
      const std::vector<Annotation> gts{Annotation::unoccluded(Box(64 + ox, 48 + oy, 0.41 * 80, 80))};
      const WeakMask m = rasterize_weak_mask(gts, 20, 15, 16, 0.0);
      int x0 = 99, x1 = -1, y0 = 99, y1 = -1;
      for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
          if (!m.value(x, y)) continue;
          x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
      }
      const int cols = x1 - x0 + 1, rows = y1 - y0 + 1;
      min_cols = std::min(min_cols, cols), max_cols = std::max(max_cols, cols);
      min_rows = std::min(min_rows, rows), max_rows = std::max(max_rows, rows);
    }
  }
  const bool ok = min_cols >= 2 && max_cols <= 4 && min_rows >= 4 && max_rows <= 6;
  report.add("5 footprint", ok,
             fmt("h=80 at stride 16 over 256 phases: %d..%d columns x %d..%d rows (3 x 5 +-1)", min_cols, max_cols,
                 min_rows, max_rows));
}

// ------------------------------------------------------------------ 6 + 8

Dataset synthesize(const SceneConfig& scene, std::size_t n, const std::string& split) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const Scene s = generate_scene(scene, i, split);
    d.images.push_back(GrayImage::from_tensor(s.image));
    d.gts.push_back(s.annotations);
  }
  return d;
}

struct TrainedVariant {
  std::string name;
  PipelineConfig pipeline;
  Network rpn;
  double rpn_mr = 0, bcn_mr = 0, fused_mr = 0;
};

ProgressFn progress(const std::string& role) {
  return [role, sum = 0.0, n = std::size_t{0}](std::size_t it, const LossBreakdown& b) mutable {
    sum += b.total;
    if (++n == 1000) {
      note(fmt("%s iteration %zu: mean loss %.4f", role.c_str(), it + 1, sum / n));
      sum = 0.0;
      n = 0;
    }
  };
}

TrainedVariant train_variant(const std::string& name, const RunConfig& cfg, const Dataset& train, const Dataset& test) {
  TrainedVariant v{name, effective_pipeline(cfg), {}, 0, 0, 0};
  auto t0 = Clock::now();
  TrainResult rpn = train_rpn(train, v.pipeline, progress(name + " rpn"));
  note(fmt("%s: rpn trained in %.0f s", name.c_str(), seconds_since(t0)));
  t0 = Clock::now();
  const TrainResult bcn = train_bcn(train, rpn.net, v.pipeline, progress(name + " bcn"));
  note(fmt("%s: bcn trained in %.0f s", name.c_str(), seconds_since(t0)));
  t0 = Clock::now();
  const auto dets = detect_dataset(test, rpn.net, &bcn.net, v.pipeline);
  v.rpn_mr = miss_rate(dets, test.gts, ScoreKind::rpn, cfg.eval_iou);
  v.bcn_mr = miss_rate(dets, test.gts, ScoreKind::bcn, cfg.eval_iou);
  v.fused_mr = miss_rate(dets, test.gts, ScoreKind::fused, cfg.eval_iou);
  note(fmt("%s: detected in %.0f s; MR rpn %.4f bcn %.4f fused %.4f", name.c_str(), seconds_since(t0), v.rpn_mr,
           v.bcn_mr, v.fused_mr));
  v.rpn = std::move(rpn.net);
  return v;
}

void fuse_properties(Report& report) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> logit(-12.0, 12.0), step(0.0, 3.0);
  std::size_t monotone_bad = 0, neutral_bad = 0;
  for (std::size_t i = 0; i < kFusePairs; ++i) {
    const std::pair<double, double> r{logit(rng), logit(rng)};
    const std::pair<double, double> b{logit(rng), logit(rng)};
    const double base = fuse_scores(r, b);
    const double up_r = fuse_scores({r.first, r.second + step(rng)}, b);
    const double up_b = fuse_scores(r, {b.first, b.second + step(rng)});
    monotone_bad += up_r < base || up_b < base;
    neutral_bad += fuse_scores(r, {0.0, 0.0}) != foreground_probability(r);
    neutral_bad += fuse_scores({0.0, 0.0}, b) != foreground_probability(b);
  }
  report.add("6c fusion properties", monotone_bad == 0 && neutral_bad == 0,
             fmt("%zu random logit pairs: %zu monotonicity violations, %zu neutral-identity violations", kFusePairs,
                 monotone_bad, neutral_bad));
}

void trends_and_illumination(const RunConfig& cfg, Report& report, bool want_trends, bool want_illumination) {
  if (cfg.train_images != kTrendTrainImages || cfg.test_images != kTrendTestImages) {
    report.add("6 trend setup", false,
               fmt("config asks for %zu/%zu images; the criterion fixes %zu/%zu", cfg.train_images, cfg.test_images,
                   kTrendTrainImages, kTrendTestImages));
    return;
  }
  const auto t0 = Clock::now();
  note(fmt("seed %llu, %zu train / %zu test scenes at %dx%d, heights %.0f..%.0f, %zu rpn + %zu bcn epochs",
           static_cast<unsigned long long>(cfg.seed()), cfg.train_images, cfg.test_images, cfg.scene.image_w,
           cfg.scene.image_h, cfg.scene.height_min, cfg.scene.height_max, cfg.pipeline.rpn_epochs,
           cfg.pipeline.bcn_epochs));
  const Dataset train = synthesize(cfg.scene, cfg.train_images, "train");
  const Dataset test = synthesize(cfg.scene, cfg.test_images, "test");

  RunConfig no_seg = cfg;
  no_seg.toggles.weak_segmentation = false;
  const TrainedVariant full = train_variant("full", cfg, train, test);
  const TrainedVariant seg_off = train_variant("no-weak-segmentation", no_seg, train, test);
  const double elapsed = seconds_since(t0);

  if (want_trends) {
    for (const TrainedVariant* v : {&full, &seg_off}) {
      const double best_stage = std::min(v->rpn_mr, v->bcn_mr);
      report.add("6a fusion beats both stages (" + v->name + ")", v->fused_mr <= best_stage,
                 fmt("fused MR %.4f vs min(rpn %.4f, bcn %.4f)", v->fused_mr, v->rpn_mr, v->bcn_mr));
    }
    report.add("6b weak segmentation helps", full.fused_mr < seg_off.fused_mr,
               fmt("fused MR full %.4f < weak-segmentation-off %.4f", full.fused_mr, seg_off.fused_mr));
    report.add("6 trend runtime", elapsed < kTrendSeconds,
               fmt("training and evaluation of both configurations took %.0f s < %.0f s", elapsed, kTrendSeconds));
  }
  if (want_illumination) {
    const IlluminationResult on = measure_illumination(full.rpn, test, full.pipeline);
    const IlluminationResult off = measure_illumination(seg_off.rpn, test, seg_off.pipeline);
    report.add("8 feature-map illumination", on.fraction() >= kIlluminationFraction && on.fraction() > off.fraction(),
               fmt("infusion %zu/%zu = %.3f >= %.2f and > no-infusion %zu/%zu = %.3f", on.illuminated,
                   on.pedestrians, on.fraction(), kIlluminationFraction, off.illuminated, off.pedestrians,
                   off.fraction()));
  }
}

// ------------------------------------------------------------------ 7

int cli(std::vector<std::string> args, std::string& log) {
  args.insert(args.begin(), "sdsrcnn");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  log += out.str() + err.str();
  return code;
}

void determinism(const RunConfig& base, const fs::path& work, Report& report) {
  // Same architecture and protocol, fewer images, so two full passes stay quick.
  RunConfig cfg = base;
  cfg.train_images = 40;
  cfg.test_images = 12;
  const std::vector<std::string> artifacts{"data/train.jsonl", "data/test.jsonl",  "data/test/00003.pgm",
                                           "runs/rpn.ckpt",    "runs/bcn.ckpt",    "runs/rpn_loss.csv",
                                           "runs/bcn_loss.csv", "runs/detections.jsonl", "runs/mr_fused.csv",
                                           "runs/mr_rpn.csv",  "runs/ap_fused.csv"};
  std::vector<std::vector<std::string>> bytes(2);
  std::string failure;
  for (int pass = 0; pass < 2 && failure.empty(); ++pass) {
    const fs::path dir = work / ("determinism_" + std::to_string(pass));
    fs::remove_all(dir);
    fs::create_directories(dir);
    cfg.data_dir = dir / "data";
    cfg.out_dir = dir / "runs";
    const std::string conf = (dir / "run.conf").string();
    write_text_file(conf, format_run_config(cfg));
    const std::string runs = cfg.out_dir.string();
    const std::string test = (cfg.data_dir / "test.jsonl").string();
    const std::string dets = (cfg.out_dir / "detections.jsonl").string();
    const std::vector<std::vector<std::string>> steps{
        {"synth", "--config", conf},
        {"train", "rpn", "--config", conf},
        {"train", "bcn", "--config", conf},
        {"detect", "--config", conf, "--bcn", runs + "/bcn.ckpt"},
        {"eval", dets, test, "--config", conf},
        {"eval", dets, test, "--config", conf, "--score", "rpn"},
        {"eval", dets, test, "--config", conf, "--protocol", "ap"},
    };
    std::string log;
    for (const auto& step : steps) {
      if (cli(step, log) != kExitOk) {
        failure = "command '" + step[0] + "' failed: " + log;
        break;
      }
    }
    for (const std::string& a : artifacts) {
      if (failure.empty()) bytes[pass].push_back(read_text_file(dir / a));
    }
  }
  std::size_t differing = 0;
  std::string which;
  if (failure.empty()) {
    for (std::size_t i = 0; i < artifacts.size(); ++i) {
      if (bytes[0][i] != bytes[1][i]) {
        ++differing;
        which += " " + artifacts[i];
      }
    }
  }
  report.add("7 determinism", failure.empty() && differing == 0,
             failure.empty() ? fmt("%zu artifacts (datasets, checkpoints, loss CSVs, detections, curve CSVs) compared "
                                   "across two runs, %zu differ%s",
                                   artifacts.size(), differing, which.c_str())
                             : failure);
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Acceptance run: one PASS/FAIL line per criterion"};
  std::string config_path;
  std::string work_dir;
  std::vector<int> only;
  app.add_option("--config", config_path, "Run config for the trend experiment")->required();
  app.add_option("--work", work_dir, "Scratch directory")->required();
  app.add_option("--only", only, "Run only these criteria (1-8)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8}
                                              : std::set<int>(only.begin(), only.end());
  const auto t0 = Clock::now();
  Report report;
  try {
    const RunConfig cfg = load_run_config(config_path);
    fs::create_directories(work_dir);
    if (selected.contains(1)) gradient_suite(cfg, report);
    if (selected.contains(2)) oracles(report);
    if (selected.contains(3)) metric_fixtures(report);
    if (selected.contains(4)) protocol_constants(cfg, report);
    if (selected.contains(5)) footprint(report);
    if (selected.contains(7)) determinism(cfg, work_dir, report);
    if (selected.contains(6)) fuse_properties(report);
    if (selected.contains(6) || selected.contains(8)) {
      trends_and_illumination(cfg, report, selected.contains(6), selected.contains(8));
    }
  } catch (const std::exception& e) {
    report.add("run", false, std::string("aborted: ") + e.what());
  }

  const std::string summary = report.summary();
  std::cout << "\n==== acceptance summary (" << fmt("%.0f s", seconds_since(t0)) << ") ====\n" << summary;
  write_text_file(fs::path(work_dir) / "acceptance_report.txt", summary);
  if (!report.all_passed()) {
    std::cout << "ACCEPTANCE FAILED" << std::endl;
    return 1;
  }
  std::cout << "ACCEPTANCE PASSED" << std::endl;
  return 0;
}
