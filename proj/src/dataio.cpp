#include "sds/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sds {

using json = nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------- images

Tensor GrayImage::to_tensor() const {
  Tensor t({1, static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
  for (std::size_t i = 0; i < pixels.size(); ++i) t[i] = pixels[i] / 255.0;
  return t;
}

GrayImage GrayImage::from_tensor(const Tensor& t) {
  std::size_t h = 0;
  std::size_t w = 0;
  if (t.rank() == 3 && t.dim(0) == 1) {
    h = t.dim(1);
    w = t.dim(2);
  } else if (t.rank() == 2) {
    h = t.dim(0);
    w = t.dim(1);
  } else {
    throw std::invalid_argument("GrayImage::from_tensor: expected (1,H,W) or (H,W), got " + shape_string(t.shape()));
  }
  GrayImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = std::clamp(t[i], 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw std::invalid_argument("write_pgm: inconsistent image dimensions");
  }
  std::string bytes = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  bytes.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  write_text_file(path, bytes);
}

namespace {

// Next header token of a PGM, skipping whitespace and '#' comments.
std::string pgm_token(const std::string& bytes, std::size_t& pos, const std::string& source) {
  while (pos < bytes.size()) {
    const unsigned char c = static_cast<unsigned char>(bytes[pos]);
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(c)) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw DataError(source + ": truncated PGM header");
  return bytes.substr(start, pos - start);
}

int pgm_int(const std::string& token, const std::string& what, const std::string& source) {
  if (token.empty() || !std::all_of(token.begin(), token.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
      token.size() > 9) {
    throw DataError(source + ": bad PGM " + what + " '" + token + "'");
  }
  return std::stoi(token);
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  const std::string source = path.string();
  const std::string bytes = read_text_file(path);
  std::size_t pos = 0;
  if (pgm_token(bytes, pos, source) != "P5") throw DataError(source + ": not a binary PGM (P5)");
  GrayImage img;
  img.width = pgm_int(pgm_token(bytes, pos, source), "width", source);
  img.height = pgm_int(pgm_token(bytes, pos, source), "height", source);
  const int maxval = pgm_int(pgm_token(bytes, pos, source), "maxval", source);
  if (img.width <= 0 || img.height <= 0) throw DataError(source + ": PGM dimensions must be positive");
  if (maxval != 255) throw DataError(source + ": only maxval 255 is supported");
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (pos > bytes.size() || bytes.size() - pos != n) {
    throw DataError(source + ": PGM raster has the wrong size");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

// ---------------------------------------------------------------- JSON lines

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

class LineContext {
 public:
  LineContext(const std::string& source, int line) : prefix_(source + ":" + std::to_string(line) + ": ") {}

  [[noreturn]] void fail(const std::string& msg) const { throw DataError(prefix_ + msg); }

  json parse(const std::string& text) const {
    try {
      json j = json::parse(text);
      if (!j.is_object()) fail("expected a JSON object");
      return j;
    } catch (const json::exception& e) {
      fail(std::string("invalid JSON: ") + e.what());
    }
  }

  void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) const {
    for (const auto& item : obj.items()) {
      if (!allowed.contains(item.key())) fail("unknown field '" + item.key() + "'" + where);
    }
    for (const std::string& k : allowed) {
      if (!obj.contains(k)) fail("missing field '" + k + "'" + where);
    }
  }

  double number(const json& obj, const std::string& key) const {
    const json& v = obj.at(key);
    if (!v.is_number()) fail("field '" + key + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail("field '" + key + "' must be finite");
    return d;
  }

  long long integer(const json& obj, const std::string& key) const {
    const json& v = obj.at(key);
    if (!v.is_number_integer()) fail("field '" + key + "' must be an integer");
    return v.get<long long>();
  }

  bool boolean(const json& obj, const std::string& key) const {
    const json& v = obj.at(key);
    if (!v.is_boolean()) fail("field '" + key + "' must be true or false");
    return v.get<bool>();
  }

  std::string string(const json& obj, const std::string& key) const {
    const json& v = obj.at(key);
    if (!v.is_string()) fail("field '" + key + "' must be a string");
    return v.get<std::string>();
  }

 private:
  std::string prefix_;
};

std::string quote(const std::string& s) { return json(s).dump(); }

}  // namespace

std::string format_manifest(const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const ManifestRecord& r : records) {
    out += "{\"image_path\":" + quote(r.image_path) + ",\"image_w\":" + std::to_string(r.image_w) +
           ",\"image_h\":" + std::to_string(r.image_h) + ",\"annotations\":[";
    for (std::size_t i = 0; i < r.annotations.size(); ++i) {
      const Annotation& a = r.annotations[i];
      if (i > 0) out += ',';
      out += "{\"x\":" + format_double(a.box.x) + ",\"y\":" + format_double(a.box.y) +
             ",\"w\":" + format_double(a.box.w) + ",\"h\":" + format_double(a.box.h) +
             ",\"vis_x\":" + format_double(a.visible_box.x) + ",\"vis_y\":" + format_double(a.visible_box.y) +
             ",\"vis_w\":" + format_double(a.visible_box.w) + ",\"vis_h\":" + format_double(a.visible_box.h) +
             ",\"occlusion\":" + format_double(a.occlusion) + ",\"ignore\":" + (a.ignore ? "true" : "false") + "}";
    }
    out += "]}\n";
  }
  return out;
}

std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::string& source) {
  static const std::set<std::string> record_keys{"image_path", "image_w", "image_h", "annotations"};
  static const std::set<std::string> ann_keys{"x",     "y",     "w",         "h",     "vis_x",
                                              "vis_y", "vis_w", "vis_h", "occlusion", "ignore"};
  std::vector<ManifestRecord> records;
  const auto lines = split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    if (blank(lines[li])) continue;
    const LineContext ctx(source, static_cast<int>(li + 1));
    const json obj = ctx.parse(lines[li]);
    ctx.check_keys(obj, record_keys, "");
    ManifestRecord r;
    r.image_path = ctx.string(obj, "image_path");
    if (r.image_path.empty()) ctx.fail("field 'image_path' must not be empty");
    const long long w = ctx.integer(obj, "image_w");
    const long long h = ctx.integer(obj, "image_h");
    if (w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20) ctx.fail("field 'image_w'/'image_h' out of range");
    r.image_w = static_cast<int>(w);
    r.image_h = static_cast<int>(h);
    const json& anns = obj.at("annotations");
    if (!anns.is_array()) ctx.fail("field 'annotations' must be an array");
    for (std::size_t ai = 0; ai < anns.size(); ++ai) {
      const json& a = anns[ai];
      const std::string where = " in annotation " + std::to_string(ai);
      if (!a.is_object()) ctx.fail("annotation " + std::to_string(ai) + " must be an object");
      ctx.check_keys(a, ann_keys, where);
      Annotation ann;
      try {
        ann.box = Box(ctx.number(a, "x"), ctx.number(a, "y"), ctx.number(a, "w"), ctx.number(a, "h"));
      } catch (const std::invalid_argument&) {
        ctx.fail("field 'w'/'h' must be positive" + where);
      }
      try {
        ann.visible_box =
            Box(ctx.number(a, "vis_x"), ctx.number(a, "vis_y"), ctx.number(a, "vis_w"), ctx.number(a, "vis_h"));
      } catch (const std::invalid_argument&) {
        ctx.fail("field 'vis_w'/'vis_h' must be positive" + where);
      }
      ann.occlusion = ctx.number(a, "occlusion");
      if (ann.occlusion < 0.0 || ann.occlusion > 1.0) ctx.fail("field 'occlusion' must lie in [0, 1]" + where);
      ann.ignore = ctx.boolean(a, "ignore");
      try {
        validate_annotation(ann);
      } catch (const std::invalid_argument& e) {
        ctx.fail(std::string(e.what()) + where);
      }
      r.annotations.push_back(ann);
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  write_text_file(path, format_manifest(records));
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text_file(path), path.string());
}

namespace {
constexpr const char* kDetectionsHeader = "{\"format\":\"sds-detections\",\"version\":1}";
}

std::string format_detections(std::vector<DetectionRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const DetectionRecord& a, const DetectionRecord& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.fused_score > b.fused_score;
  });
  std::string out = std::string(kDetectionsHeader) + "\n";
  for (const DetectionRecord& d : records) {
    out += "{\"image_id\":" + std::to_string(d.image_id) + ",\"x\":" + format_double(d.x) +
           ",\"y\":" + format_double(d.y) + ",\"w\":" + format_double(d.w) + ",\"h\":" + format_double(d.h) +
           ",\"fused_score\":" + format_double(d.fused_score) + ",\"rpn_score\":" + format_double(d.rpn_score) +
           ",\"bcn_score\":" + format_double(d.bcn_score) + "}\n";
  }
  return out;
}

std::vector<DetectionRecord> parse_detections(const std::string& text, const std::string& source) {
  static const std::set<std::string> keys{"image_id", "x", "y", "w", "h", "fused_score", "rpn_score", "bcn_score"};
  static const std::set<std::string> header_keys{"format", "version"};
  const auto lines = split_lines(text);
  std::vector<DetectionRecord> out;
  bool seen_header = false;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    if (blank(lines[li])) continue;
    const LineContext ctx(source, static_cast<int>(li + 1));
    const json obj = ctx.parse(lines[li]);
    if (!seen_header) {
      ctx.check_keys(obj, header_keys, " in header");
      if (ctx.string(obj, "format") != "sds-detections") ctx.fail("field 'format' must be \"sds-detections\"");
      if (ctx.integer(obj, "version") != 1) ctx.fail("field 'version': unsupported version");
      seen_header = true;
      continue;
    }
    ctx.check_keys(obj, keys, "");
    DetectionRecord d;
    const long long id = ctx.integer(obj, "image_id");
    if (id < 0) ctx.fail("field 'image_id' must be >= 0");
    d.image_id = static_cast<std::size_t>(id);
    d.x = ctx.number(obj, "x");
    d.y = ctx.number(obj, "y");
    d.w = ctx.number(obj, "w");
    d.h = ctx.number(obj, "h");
    if (!(d.w > 0.0)) ctx.fail("field 'w' must be positive");
    if (!(d.h > 0.0)) ctx.fail("field 'h' must be positive");
    for (const char* k : {"fused_score", "rpn_score", "bcn_score"}) {
      const double s = ctx.number(obj, k);
      if (s < 0.0 || s > 1.0) ctx.fail(std::string("field '") + k + "' must lie in [0, 1]");
    }
    d.fused_score = ctx.number(obj, "fused_score");
    d.rpn_score = ctx.number(obj, "rpn_score");
    d.bcn_score = ctx.number(obj, "bcn_score");
    out.push_back(d);
  }
  if (!seen_header) throw DataError(source + ": missing detections header line");
  return out;
}

void write_detections(const std::vector<DetectionRecord>& records, const std::filesystem::path& path) {
  write_text_file(path, format_detections(records));
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
  return parse_detections(read_text_file(path), path.string());
}

// ---------------------------------------------------------------- key = value

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& source) {
  std::vector<KeyValue> out;
  std::set<std::string> seen;
  const auto lines = split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string line = trim(lines[li]);
    const int n = static_cast<int>(li + 1);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(source + ":" + std::to_string(n) + ": expected 'key = value', got '" + line + "'");
    }
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), n};
    if (kv.key.empty()) throw DataError(source + ":" + std::to_string(n) + ": empty key");
    if (!seen.insert(kv.key).second) {
      throw DataError(source + ":" + std::to_string(n) + ": duplicate key '" + kv.key + "'");
    }
    out.push_back(std::move(kv));
  }
  return out;
}

}  // namespace sds
