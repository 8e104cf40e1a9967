#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sds/pipeline.hpp"
#include "sds/synthdata.hpp"

namespace sds {

/// Ablation switches; each disables exactly one mechanism when off.
struct Toggles {
  bool weak_segmentation = true;   // off: segmentation loss weight 0 in both stages
  bool proposal_padding = true;    // off: pad_fraction 0
  bool cost_sensitive = true;      // off: every w = 1
  bool strict_supervision = true;  // off: BCN foreground at IoU >= 0.5
  bool fusion = true;              // off: detections ranked by the RPN score

  friend bool operator==(const Toggles&, const Toggles&) = default;
};

/// Everything a command needs. Written as `key = value` lines; every key
/// is optional and unknown keys are rejected.
struct RunConfig {
  SceneConfig scene;
  PipelineConfig pipeline;
  Toggles toggles;
  std::size_t train_images = 2000;
  std::size_t test_images = 500;
  double eval_iou = 0.5;
  double gradcheck_tolerance = 1e-4;
  /// Relative paths are resolved against the config file's directory.
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "runs";

  /// Sets scene.seed and pipeline.seed together.
  void set_seed(std::uint64_t seed);
  std::uint64_t seed() const { return pipeline.seed; }
};

/// Names of every accepted key, in file order.
std::vector<std::string> run_config_keys();

RunConfig parse_run_config(const std::string& text, const std::string& source = "<memory>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Full listing of every key; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig& cfg);

/// Pipeline settings with the toggles applied.
PipelineConfig effective_pipeline(const RunConfig& cfg);

}  // namespace sds
