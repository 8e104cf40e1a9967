#include "sds/config.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>

#include "sds/dataio.hpp"

namespace sds {

void RunConfig::set_seed(std::uint64_t seed) {
  scene.seed = seed;
  pipeline.seed = seed;
}

namespace {

struct ValueError {
  std::string message;
};

double to_double(const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ValueError{"expected a number, got '" + v + "'"};
  }
  return out;
}

std::uint64_t to_uint(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValueError{"expected a non-negative integer, got '" + v + "'"};
  }
  return out;
}

int to_int(const std::string& v) {
  const std::uint64_t u = to_uint(v);
  if (u > 1'000'000'000ULL) throw ValueError{"value '" + v + "' is too large"};
  return static_cast<int>(u);
}

bool to_bool(const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ValueError{"expected on/off, got '" + v + "'"};
}

std::vector<std::size_t> to_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const std::size_t comma = v.find(',', start);
    std::string item = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    while (!item.empty() && item.front() == ' ') item.erase(item.begin());
    while (!item.empty() && item.back() == ' ') item.pop_back();
    const std::uint64_t n = to_uint(item);
    if (n == 0) throw ValueError{"list entries must be >= 1"};
    out.push_back(static_cast<std::size_t>(n));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string from_bool(bool b) { return b ? "on" : "off"; }

std::string from_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SDS_DOUBLE(name, member) \
  Field{name, [](RunConfig& c, const std::string& v) { c.member = to_double(v); }, \
        [](const RunConfig& c) { return format_double(c.member); }}
#define SDS_INT(name, member) \
  Field{name, [](RunConfig& c, const std::string& v) { c.member = to_int(v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }}
#define SDS_SIZE(name, member) \
  Field{name, [](RunConfig& c, const std::string& v) { c.member = static_cast<std::size_t>(to_uint(v)); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }}
#define SDS_BOOL(name, member) \
  Field{name, [](RunConfig& c, const std::string& v) { c.member = to_bool(v); }, \
        [](const RunConfig& c) { return from_bool(c.member); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      Field{"seed", [](RunConfig& c, const std::string& v) { c.set_seed(to_uint(v)); },
            [](const RunConfig& c) { return std::to_string(c.seed()); }},
      // synthetic scenes
      SDS_INT("image_w", scene.image_w),
      SDS_INT("image_h", scene.image_h),
      SDS_INT("pedestrians_min", scene.pedestrians_min),
      SDS_INT("pedestrians_max", scene.pedestrians_max),
      SDS_DOUBLE("height_min", scene.height_min),
      SDS_DOUBLE("height_max", scene.height_max),
      SDS_DOUBLE("pedestrian_ratio", scene.aspect_ratio),
      SDS_DOUBLE("width_jitter", scene.width_jitter),
      SDS_DOUBLE("occluder_prob", scene.occluder_prob),
      SDS_DOUBLE("occlusion_min", scene.occlusion_min),
      SDS_DOUBLE("occlusion_max", scene.occlusion_max),
      SDS_INT("distractors_min", scene.distractors_min),
      SDS_INT("distractors_max", scene.distractors_max),
      SDS_DOUBLE("noise", scene.noise),
      SDS_SIZE("train_images", train_images),
      SDS_SIZE("test_images", test_images),
      // network
      Field{"stride",
            [](RunConfig& c, const std::string& v) {
              const std::uint64_t s = to_uint(v);
              if (s < 2 || !std::has_single_bit(s)) throw ValueError{"stride must be a power of two >= 2"};
              c.pipeline.trunk.pools = static_cast<std::size_t>(std::countr_zero(s));
            },
            [](const RunConfig& c) { return std::to_string(c.pipeline.trunk.stride()); }},
      Field{"trunk_channels", [](RunConfig& c, const std::string& v) { c.pipeline.trunk.channels = to_list(v); },
            [](const RunConfig& c) { return from_list(c.pipeline.trunk.channels); }},
      SDS_SIZE("proposal_channels", pipeline.proposal_channels),
      Field{"bcn_fc", [](RunConfig& c, const std::string& v) { c.pipeline.bcn_fc = to_list(v); },
            [](const RunConfig& c) { return from_list(c.pipeline.bcn_fc); }},
      SDS_DOUBLE("input_mean", pipeline.input_mean),
      // anchors and RPN supervision
      SDS_SIZE("anchor_count", pipeline.anchors.count),
      SDS_DOUBLE("anchor_min", pipeline.anchors.min_height),
      SDS_DOUBLE("anchor_max", pipeline.anchors.max_height),
      SDS_DOUBLE("anchor_ratio", pipeline.anchors.aspect_ratio),
      SDS_SIZE("rpn_batch", pipeline.rpn_batch),
      SDS_DOUBLE("rpn_fg_fraction", pipeline.fg_fraction),
      SDS_DOUBLE("rpn_fg_iou", pipeline.rpn_policy.fg_iou_min),
      SDS_BOOL("best_anchor_fallback", pipeline.rpn_policy.best_match_fallback),
      // BCN
      SDS_DOUBLE("bcn_fg_iou", pipeline.bcn_policy.fg_iou_min),
      SDS_SIZE("n_b_train", pipeline.n_b_train),
      SDS_SIZE("n_b_test", pipeline.n_b_test),
      SDS_SIZE("bcn_input", pipeline.bcn_input),
      SDS_DOUBLE("pad_fraction", pipeline.pad_fraction),
      SDS_DOUBLE("nms_iou", pipeline.nms_iou),
      // objective and optimizer
      Field{"lambda_cls",
            [](RunConfig& c, const std::string& v) {
              c.pipeline.rpn_weights.cls = c.pipeline.bcn_weights.cls = to_double(v);
            },
            [](const RunConfig& c) { return format_double(c.pipeline.rpn_weights.cls); }},
      SDS_DOUBLE("lambda_reg", pipeline.rpn_weights.reg),
      Field{"lambda_seg",
            [](RunConfig& c, const std::string& v) {
              c.pipeline.rpn_weights.seg = c.pipeline.bcn_weights.seg = to_double(v);
            },
            [](const RunConfig& c) { return format_double(c.pipeline.rpn_weights.seg); }},
      SDS_DOUBLE("learning_rate", pipeline.learning_rate),
      SDS_DOUBLE("momentum", pipeline.momentum),
      SDS_SIZE("rpn_epochs", pipeline.rpn_epochs),
      SDS_SIZE("bcn_epochs", pipeline.bcn_epochs),
      SDS_SIZE("workers", pipeline.workers),
      // ablation switches
      SDS_BOOL("weak_segmentation", toggles.weak_segmentation),
      SDS_BOOL("proposal_padding", toggles.proposal_padding),
      SDS_BOOL("cost_sensitive", toggles.cost_sensitive),
      SDS_BOOL("strict_supervision", toggles.strict_supervision),
      SDS_BOOL("fusion", toggles.fusion),
      // evaluation and checks
      SDS_DOUBLE("eval_iou", eval_iou),
      SDS_DOUBLE("gradcheck_tolerance", gradcheck_tolerance),
      Field{"data_dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; },
            [](const RunConfig& c) { return c.data_dir.string(); }},
      Field{"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
            [](const RunConfig& c) { return c.out_dir.string(); }},
  };
  return table;
}

#undef SDS_DOUBLE
#undef SDS_INT
#undef SDS_SIZE
#undef SDS_BOOL

}  // namespace

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  static const std::map<std::string, const Field*> index = [] {
    std::map<std::string, const Field*> m;
    for (const Field& f : fields()) m[f.key] = &f;
    return m;
  }();
  RunConfig cfg;
  for (const KeyValue& kv : parse_key_values(text, source)) {
    const std::string where = source + ":" + std::to_string(kv.line) + ": ";
    const auto it = index.find(kv.key);
    if (it == index.end()) throw DataError(where + "unknown key '" + kv.key + "'");
    try {
      it->second->set(cfg, kv.value);
    } catch (const ValueError& e) {
      throw DataError(where + kv.key + ": " + e.message);
    }
  }
  try {
    cfg.scene.validate();
    effective_pipeline(cfg).validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(source + ": " + e.what());
  }
  if (cfg.train_images == 0 || cfg.test_images == 0) throw DataError(source + ": train_images and test_images must be >= 1");
  if (!(cfg.eval_iou > 0.0 && cfg.eval_iou < 1.0)) throw DataError(source + ": eval_iou must lie in (0, 1)");
  if (!(cfg.gradcheck_tolerance >= 0.0)) throw DataError(source + ": gradcheck_tolerance must be >= 0");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig cfg = parse_run_config(read_text_file(path), path.string());
  const std::filesystem::path base = path.parent_path();
  if (cfg.data_dir.is_relative()) cfg.data_dir = base / cfg.data_dir;
  if (cfg.out_dir.is_relative()) cfg.out_dir = base / cfg.out_dir;
  return cfg;
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

PipelineConfig effective_pipeline(const RunConfig& cfg) {
  PipelineConfig p = cfg.pipeline;
  if (!cfg.toggles.weak_segmentation) {
    p.rpn_weights.seg = 0.0;
    p.bcn_weights.seg = 0.0;
  }
  if (!cfg.toggles.proposal_padding) p.pad_fraction = 0.0;
  p.cost_sensitive = cfg.toggles.cost_sensitive;
  if (!cfg.toggles.strict_supervision) p.bcn_policy = LabelPolicy::rpn();
  p.fusion = cfg.toggles.fusion;
  return p;
}

}  // namespace sds
