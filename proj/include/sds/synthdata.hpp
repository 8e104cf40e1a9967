#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sds/dataio.hpp"
#include "sds/supervision.hpp"
#include "sds/tensor.hpp"

namespace sds {

/// Scene generator settings. Pedestrian heights are log-uniform in
/// [height_min, height_max]; widths are aspect_ratio * height scaled by a
/// factor drawn from [1 - width_jitter, 1 + width_jitter].
struct SceneConfig {
  int image_w = 640;
  int image_h = 480;
  int pedestrians_min = 0;
  int pedestrians_max = 4;
  double height_min = 25.0;
  double height_max = 350.0;
  double aspect_ratio = 0.41;
  double width_jitter = 0.05;
  double occluder_prob = 0.2;
  double occlusion_min = 0.1;
  double occlusion_max = 0.8;
  int distractors_min = 2;
  int distractors_max = 6;
  double noise = 0.04;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct Scene {
  Tensor image;  // (1, H, W), values k/255
  std::vector<Annotation> annotations;
};

/// Seed of scene `index` in the named stream ("train", "test", ...).
std::uint64_t scene_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index);

/// Pure function of (cfg, stream, index).
Scene generate_scene(const SceneConfig& cfg, std::uint64_t index, std::string_view stream = "train");

/// Writes <out_dir>/<split>/NNNNN.pgm and <out_dir>/<split>.jsonl; returns
/// the manifest path.
std::filesystem::path generate_dataset(const SceneConfig& cfg, std::size_t n_images, const std::string& split,
                                       const std::filesystem::path& out_dir);

/// Mean of the log-uniform height distribution: (b - a) / ln(b / a).
double analytic_mean_height(double height_min, double height_max);

}  // namespace sds
