#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sds/config.hpp"
#include "sds/evaluation.hpp"
#include "sds/pipeline.hpp"

namespace sds {

enum class ScoreKind { fused, rpn, bcn };

std::string to_string(ScoreKind kind);
/// "fused", "rpn" or "bcn"; throws std::invalid_argument otherwise.
ScoreKind parse_score_kind(const std::string& name);

/// Evaluation inputs with the reasonable filter applied to the gts.
std::vector<ImageEval> eval_images(const std::vector<std::vector<Detection>>& dets,
                                   const std::vector<std::vector<Annotation>>& gts, ScoreKind kind,
                                   const ReasonableSetting& setting = {});

/// Same from detection records; records are grouped by image_id, which
/// indexes `gts`. Throws DataError on an out-of-range image_id.
std::vector<ImageEval> eval_images(std::span<const DetectionRecord> records,
                                   const std::vector<std::vector<Annotation>>& gts, ScoreKind kind,
                                   const ReasonableSetting& setting = {});

/// Log-average miss rate of one score column.
double miss_rate(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Annotation>>& gts,
                 ScoreKind kind, double iou_min);

// ---------------------------------------------------------------- ablation

struct AblationSetting {
  std::string name;
  Toggles toggles;
};

/// full, then weak segmentation, padding, cost-sensitive and strict
/// supervision switched off one at a time.
std::vector<AblationSetting> ablation_settings();

struct AblationRow {
  std::string name;
  Toggles toggles;
  double rpn_mr = 0.0;
  double bcn_mr = 0.0;
  double fused_mr = 0.0;
};

using LogFn = std::function<void(const std::string&)>;

/// Trains and evaluates every setting. Settings whose RPN-side options
/// agree share one trained RPN.
std::vector<AblationRow> run_ablation(const Dataset& train, const Dataset& test, const RunConfig& cfg,
                                      std::span<const AblationSetting> settings, const LogFn& log = {});

/// Fixed-width table, MR in percent with two decimals.
std::string format_ablation_table(std::span<const AblationRow> rows);
/// Header "setting,rpn_mr,bcn_mr,fused_mr", then one line per row with full precision.
std::string format_ablation_csv(std::span<const AblationRow> rows);

// ---------------------------------------------------------- illumination

struct IlluminationResult {
  std::size_t pedestrians = 0;
  std::size_t illuminated = 0;

  double fraction() const { return pedestrians ? static_cast<double>(illuminated) / pedestrians : 0.0; }
};

/// For every non-ignore gt of the test set: is the mean of the channel-max
/// map of `layer` over the gt's footprint cells above the mean over cells
/// outside every gt footprint? Gts with an empty footprint, and images with
/// no outside cells, are skipped.
IlluminationResult measure_illumination(const Network& rpn, const Dataset& test, const PipelineConfig& cfg,
                                        const std::string& layer = "relu5");

// ------------------------------------------------------------- gradcheck

struct GradcheckCase {
  std::string name;
  double max_error = 0.0;
  std::size_t checked = 0;
  std::size_t rejected = 0;  // draws skipped for straddling a relu/max-pool kink
  bool passed = false;
  /// Smallest finite-difference step any check in this case needed.
  double smallest_step = 1e-3;
  /// Network cases: the failing (or worst) parameter block.
  std::string detail;
};

struct GradcheckSuite {
  double tolerance = 0.0;
  std::vector<GradcheckCase> cases;
  double seconds = 0.0;

  bool passed() const;
};

/// Every layer kind, every loss and both full networks against central
/// differences (step 1e-3) at cfg.gradcheck_tolerance. Network checks skip
/// entries whose step crosses a kink; a block where every entry does is
/// retried at a smaller step (down to 1e-6) and reported as such.
GradcheckSuite run_gradcheck_suite(const RunConfig& cfg);

}  // namespace sds
