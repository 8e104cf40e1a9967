#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sds/supervision.hpp"
#include "sds/tensor.hpp"

namespace sds {

/// Malformed or unreadable input files. Messages name the file, line and
/// field where possible.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  /// (1, H, W) tensor with values k/255.
  Tensor to_tensor() const;
  /// Rounds clamp(v, 0, 1) * 255; accepts (1, H, W) or (H, W).
  static GrayImage from_tensor(const Tensor& t);

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Binary PGM (P5, maxval 255).
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

struct ManifestRecord {
  std::string image_path;  // relative to the manifest's directory
  int image_w = 0;
  int image_h = 0;
  std::vector<Annotation> annotations;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

/// One JSON object per line:
///   {"image_path":"...","image_w":W,"image_h":H,"annotations":[{"x":..,"y":..,"w":..,"h":..,
///    "vis_x":..,"vis_y":..,"vis_w":..,"vis_h":..,"occlusion":..,"ignore":false},...]}
/// Floats are written with 17 significant digits.
std::string format_manifest(const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::string& source = "<memory>");
void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

struct DetectionRecord {
  std::size_t image_id = 0;  // position of the image in its manifest
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double fused_score = 0.0;
  double rpn_score = 0.0;
  double bcn_score = 0.0;

  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

/// Header line {"format":"sds-detections","version":1}, then one record
/// per line sorted by image_id and descending fused_score (stable).
std::string format_detections(std::vector<DetectionRecord> records);
std::vector<DetectionRecord> parse_detections(const std::string& text, const std::string& source = "<memory>");
void write_detections(const std::vector<DetectionRecord>& records, const std::filesystem::path& path);
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);

/// One `key = value` entry of a flat config file. Blank lines and lines
/// starting with '#' are skipped.
struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& source = "<memory>");

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// "%.17g" rendering used by every text format.
std::string format_double(double v);

}  // namespace sds
