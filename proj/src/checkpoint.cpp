#include "sds/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sds/dataio.hpp"

namespace sds {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'S', 'R', 'C', 'N', 'N', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint: truncated file");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::size_t parse_field(std::istringstream& in, const std::string& key, const std::string& line) {
  std::string token;
  if (!(in >> token) || token.rfind(key + "=", 0) != 0) {
    throw DataError("checkpoint: expected '" + key + "=' in layer line '" + line + "'");
  }
  return static_cast<std::size_t>(std::stoull(token.substr(key.size() + 1)));
}

}  // namespace

std::unique_ptr<Layer> layer_from_description(const std::string& name, const std::string& description) {
  std::istringstream in(description);
  std::string kind;
  in >> kind;
  if (kind == "conv") {
    const std::size_t k = parse_field(in, "k", description);
    const std::size_t stride = parse_field(in, "stride", description);
    const std::size_t ci = parse_field(in, "in", description);
    const std::size_t co = parse_field(in, "out", description);
    return std::make_unique<Conv2d>(name, ci, co, k, stride);
  }
  if (kind == "maxpool") return std::make_unique<MaxPool2d>(name, parse_field(in, "k", description));
  if (kind == "relu") return std::make_unique<ReLU>(name);
  if (kind == "fc") {
    const std::size_t ci = parse_field(in, "in", description);
    const std::size_t co = parse_field(in, "out", description);
    return std::make_unique<Linear>(name, ci, co);
  }
  if (kind == "softmax2") return std::make_unique<Softmax2>(name);
  throw DataError("checkpoint: unknown layer kind '" + kind + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream manifest;
  for (const auto& [key, value] : ckpt.meta) {
    if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint: metadata key/value may not contain whitespace/newlines");
    }
    manifest << "meta " << key << ' ' << value << '\n';
  }
  for (const Stage& s : ckpt.net.stages()) {
    manifest << "stage " << s.name << ' ' << (s.parent.empty() ? "-" : s.parent) << '\n';
    for (const auto& layer : s.layers) {
      manifest << "layer " << s.name << ' ' << layer->name() << ' ' << layer->describe() << '\n';
    }
  }
  const std::string text = manifest.str();

  std::string out(kMagic, sizeof(kMagic));
  put_le(out, kVersion);
  put_le(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto params = ckpt.net.parameters();
  put_le(out, static_cast<std::uint64_t>(params.size()));
  for (const Tensor* t : params) {
    put_le(out, static_cast<std::uint32_t>(t->rank()));
    for (const std::size_t d : t->shape()) put_le(out, static_cast<std::uint64_t>(d));
    for (const double v : t->values()) put_le(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader reader(bytes);
  if (reader.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError("checkpoint: bad magic");
  }
  const auto version = reader.get_le<std::uint32_t>();
  if (version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto manifest_size = reader.get_le<std::uint32_t>();
  std::istringstream manifest(reader.get_bytes(manifest_size));

  Checkpoint ckpt;
  std::string line;
  while (std::getline(manifest, line)) {
    std::istringstream in(line);
    std::string tag;
    in >> tag;
    if (tag == "meta") {
      std::string key;
      in >> key;
      std::string value;
      std::getline(in, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (tag == "stage") {
      std::string name, parent;
      in >> name >> parent;
      ckpt.net.add_stage(name, parent == "-" ? "" : parent);
    } else if (tag == "layer") {
      std::string stage_name, name, description;
      in >> stage_name >> name;
      std::getline(in, description);
      ckpt.net.add_layer(stage_name, layer_from_description(name, description));
    } else if (!tag.empty()) {
      throw DataError("checkpoint: unknown manifest entry '" + tag + "'");
    }
  }

  auto params = ckpt.net.parameters();
  const auto count = reader.get_le<std::uint64_t>();
  if (count != params.size()) {
    throw DataError("checkpoint: " + std::to_string(count) + " tensors stored, manifest needs " +
                             std::to_string(params.size()));
  }
  for (Tensor* t : params) {
    const auto rank = reader.get_le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(reader.get_le<std::uint64_t>());
    if (shape != t->shape()) {
      throw DataError("checkpoint: tensor shape " + shape_string(shape) + " does not match layer " +
                               shape_string(t->shape()));
    }
    for (double& v : t->values()) v = reader.get_le<double>();
  }
  if (!reader.done()) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace sds
