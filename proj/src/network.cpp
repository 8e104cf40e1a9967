#include "sds/network.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>

#include "sds/random.hpp"

namespace sds {

Network::Network(const Network& other) { *this = other; }

Network& Network::operator=(const Network& other) {
  if (this == &other) return *this;
  std::vector<Stage> copy;
  copy.reserve(other.stages_.size());
  for (const Stage& s : other.stages_) {
    Stage c{s.name, s.parent, {}};
    for (const auto& layer : s.layers) c.layers.push_back(layer->clone());
    copy.push_back(std::move(c));
  }
  stages_ = std::move(copy);
  return *this;
}

Stage& Network::add_stage(std::string name, std::string parent) {
  if (has_stage(name)) throw std::invalid_argument("Network: duplicate stage '" + name + "'");
  if (!parent.empty() && !has_stage(parent)) {
    throw std::invalid_argument("Network: stage '" + name + "' has unknown parent '" + parent + "'");
  }
  stages_.push_back(Stage{std::move(name), std::move(parent), {}});
  return stages_.back();
}

Layer& Network::add_layer(const std::string& stage_name, std::unique_ptr<Layer> layer) {
  Stage& s = stage(stage_name);
  s.layers.push_back(std::move(layer));
  return *s.layers.back();
}

bool Network::has_stage(const std::string& name) const {
  for (const Stage& s : stages_) {
    if (s.name == name) return true;
  }
  return false;
}

const Stage& Network::stage(const std::string& name) const {
  for (const Stage& s : stages_) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("Network: no stage '" + name + "'");
}

Stage& Network::stage(const std::string& name) {
  return const_cast<Stage&>(static_cast<const Network&>(*this).stage(name));
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (Stage& s : stages_) {
    for (auto& layer : s.layers) {
      for (Tensor& t : layer->parameters()) out.push_back(&t);
    }
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (const Stage& s : stages_) {
    for (const auto& layer : s.layers) {
      for (const Tensor& t : static_cast<const Layer&>(*layer).parameters()) out.push_back(&t);
    }
  }
  return out;
}

std::vector<std::string> Network::parameter_names() const {
  std::vector<std::string> names;
  for (const Stage& s : stages_) {
    for (const auto& layer : s.layers) {
      for (auto& n : layer->parameter_names()) names.push_back(s.name + "/" + n);
    }
  }
  return names;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

std::vector<Tensor*> Network::stage_parameters(const std::string& name) {
  std::vector<Tensor*> out;
  for (auto& layer : stage(name).layers) {
    for (Tensor& t : layer->parameters()) out.push_back(&t);
  }
  return out;
}

std::vector<const Tensor*> Network::stage_parameters(const std::string& name) const {
  std::vector<const Tensor*> out;
  for (const auto& layer : stage(name).layers) {
    for (const Tensor& t : static_cast<const Layer&>(*layer).parameters()) out.push_back(&t);
  }
  return out;
}

// --- records ---------------------------------------------------------------

const Tensor& ActivationRecord::stage_output(const std::string& stage_name) const {
  for (std::size_t s = 0; s < stage_names.size(); ++s) {
    if (stage_names[s] == stage_name) return outputs[s].back();
  }
  throw std::out_of_range("ActivationRecord: no stage '" + stage_name + "'");
}

const Tensor& ActivationRecord::layer_output(const std::string& layer_name) const {
  for (std::size_t s = 0; s < layer_names.size(); ++s) {
    for (std::size_t l = 0; l < layer_names[s].size(); ++l) {
      if (layer_names[s][l] == layer_name) return outputs[s][l];
    }
  }
  throw std::out_of_range("ActivationRecord: no layer '" + layer_name + "'");
}

bool Gradients::all_finite() const {
  for (const Tensor& t : tensors) {
    if (!t.all_finite()) return false;
  }
  return true;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.tensors.size() != tensors.size()) throw std::invalid_argument("Gradients +=: size mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += other.tensors[i];
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (Tensor& t : tensors) t *= s;
  return *this;
}

Gradients zero_gradients(const Network& net) {
  Gradients g;
  for (const Tensor* t : net.parameters()) g.tensors.emplace_back(t->shape());
  return g;
}

namespace {

std::size_t stage_index(const Network& net, const std::string& name) {
  const auto& stages = net.stages();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].name == name) return i;
  }
  throw std::out_of_range("Network: no stage '" + name + "'");
}

}  // namespace

ActivationRecord forward(const Network& net, const Tensor& input) {
  ActivationRecord rec;
  rec.input = input;
  const auto& stages = net.stages();
  rec.outputs.resize(stages.size());
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const Stage& st = stages[s];
    if (st.layers.empty()) throw std::logic_error("Network: stage '" + st.name + "' has no layers");
    rec.stage_names.push_back(st.name);
    auto& names = rec.layer_names.emplace_back();
    for (const auto& layer : st.layers) names.push_back(layer->name());
    const Tensor* x = st.parent.empty() ? &rec.input : &rec.outputs[stage_index(net, st.parent)].back();
    auto& outs = rec.outputs[s];
    outs.reserve(st.layers.size());
    for (const auto& layer : st.layers) {
      outs.push_back(layer->forward(*x));
      x = &outs.back();
    }
  }
  return rec;
}

void backward_into(const Network& net, const ActivationRecord& record, const HeadGradients& head_grads,
                   Gradients& grads) {
  const auto& stages = net.stages();
  if (record.outputs.size() != stages.size() || record.stage_names.size() != stages.size()) {
    throw std::invalid_argument("backward: activation record does not belong to this network");
  }
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (record.stage_names[s] != stages[s].name || record.outputs[s].size() != stages[s].layers.size()) {
      throw std::invalid_argument("backward: activation record does not belong to this network");
    }
  }
  if (grads.tensors.empty()) grads = zero_gradients(net);

  // offset of each stage's first parameter within Network::parameters()
  std::vector<std::size_t> param_offset(stages.size() + 1, 0);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    std::size_t n = 0;
    for (const auto& layer : stages[s].layers) n += static_cast<const Layer&>(*layer).parameters().size();
    param_offset[s + 1] = param_offset[s] + n;
  }
  if (grads.tensors.size() != param_offset.back()) throw std::invalid_argument("backward: gradient buffer mismatch");

  std::vector<std::optional<Tensor>> upstream(stages.size());
  for (const auto& [name, g] : head_grads) {
    const std::size_t s = stage_index(net, name);
    if (g.shape() != record.outputs[s].back().shape()) {
      throw std::invalid_argument("backward: gradient for '" + name + "' has shape " + shape_string(g.shape()) +
                                  ", stage output is " + shape_string(record.outputs[s].back().shape()));
    }
    upstream[s] = g;
  }

  for (std::size_t s = stages.size(); s-- > 0;) {
    if (!upstream[s]) continue;
    const Stage& st = stages[s];
    const std::size_t parent = st.parent.empty() ? stages.size() : stage_index(net, st.parent);
    const Tensor& stage_in = parent == stages.size() ? record.input : record.outputs[parent].back();

    Tensor g = std::move(*upstream[s]);
    std::size_t p_end = param_offset[s + 1];
    for (std::size_t l = st.layers.size(); l-- > 0;) {
      const Layer& layer = *st.layers[l];
      const std::size_t np = layer.parameters().size();
      const Tensor& in = l == 0 ? stage_in : record.outputs[s][l - 1];
      std::span<Tensor> pg(grads.tensors.data() + (p_end - np), np);
      g = layer.backward(in, record.outputs[s][l], g, pg);
      p_end -= np;
    }
    if (parent == stages.size()) continue;
    if (upstream[parent]) *upstream[parent] += g;
    else upstream[parent] = std::move(g);
  }
}

Gradients backward(const Network& net, const ActivationRecord& record, const HeadGradients& head_grads) {
  Gradients grads = zero_gradients(net);
  backward_into(net, record, head_grads, grads);
  return grads;
}

// --- builders --------------------------------------------------------------

void add_trunk(Network& net, const TrunkSpec& spec) {
  if (spec.channels.empty()) throw std::invalid_argument("add_trunk: no conv blocks");
  if (spec.pools > spec.channels.size()) throw std::invalid_argument("add_trunk: more pools than conv blocks");
  net.add_stage(stage::trunk, "");
  std::size_t in = spec.input_channels;
  for (std::size_t b = 0; b < spec.channels.size(); ++b) {
    const std::string idx = std::to_string(b + 1);
    net.add_layer(stage::trunk, std::make_unique<Conv2d>("conv" + idx, in, spec.channels[b], 3));
    net.add_layer(stage::trunk, std::make_unique<ReLU>("relu" + idx));
    if (b < spec.pools) net.add_layer(stage::trunk, std::make_unique<MaxPool2d>("pool" + idx, 2));
    in = spec.channels[b];
  }
}

Network make_rpn_network(const TrunkSpec& trunk, std::size_t num_anchors, std::size_t proposal_channels,
                         std::uint64_t seed) {
  Network net;
  add_trunk(net, trunk);
  const std::size_t feat = trunk.channels.back();
  net.add_stage(stage::seg, stage::trunk);
  net.add_layer(stage::seg, std::make_unique<Conv2d>("seg", feat, 2, 1));
  net.add_stage(stage::proposal, stage::trunk);
  net.add_layer(stage::proposal, std::make_unique<Conv2d>("rpn_conv", feat, proposal_channels, 3));
  net.add_layer(stage::proposal, std::make_unique<ReLU>("rpn_relu"));
  net.add_stage(stage::cls, stage::proposal);
  net.add_layer(stage::cls, std::make_unique<Conv2d>("rpn_cls", proposal_channels, 2 * num_anchors, 1));
  net.add_stage(stage::bbox, stage::proposal);
  net.add_layer(stage::bbox, std::make_unique<Conv2d>("rpn_bbox", proposal_channels, 4 * num_anchors, 1));
  initialize_uniform(net, seed);
  return net;
}

Network make_bcn_network(const TrunkSpec& trunk, std::size_t input_size,
                         const std::vector<std::size_t>& fc_hidden, std::uint64_t seed) {
  Network net;
  add_trunk(net, trunk);
  std::size_t side = input_size;
  for (std::size_t p = 0; p < trunk.pools; ++p) side /= 2;
  if (side == 0) throw std::invalid_argument("make_bcn_network: input too small for the trunk");
  const std::size_t feat = trunk.channels.back();
  net.add_stage(stage::seg, stage::trunk);
  net.add_layer(stage::seg, std::make_unique<Conv2d>("seg", feat, 2, 1));
  net.add_stage(stage::cls, stage::trunk);
  std::size_t in = feat * side * side;
  for (std::size_t i = 0; i < fc_hidden.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    net.add_layer(stage::cls, std::make_unique<Linear>("fc" + idx, in, fc_hidden[i]));
    net.add_layer(stage::cls, std::make_unique<ReLU>("fc" + idx + "_relu"));
    in = fc_hidden[i];
  }
  net.add_layer(stage::cls, std::make_unique<Linear>("bcn_cls", in, 2));
  initialize_uniform(net, seed);
  return net;
}

namespace {

void init_stage(Stage& st, Rng& rng) {
  for (std::size_t l = 0; l < st.layers.size(); ++l) {
    Layer& layer = *st.layers[l];
    auto params = layer.parameters();
    if (params.empty()) continue;
    const bool before_relu = l + 1 < st.layers.size() && st.layers[l + 1]->kind() == LayerKind::relu;
    const double bound = std::sqrt((before_relu ? 6.0 : 3.0) / static_cast<double>(layer.fan_in()));
    for (double& v : params[0].values()) v = rng.uniform(-bound, bound);
    for (std::size_t p = 1; p < params.size(); ++p) params[p].fill(0.0);
  }
}

}  // namespace

void initialize_uniform(Network& net, std::uint64_t seed) {
  for (const Stage& st : net.stages()) initialize_stage_uniform(net, st.name, seed);
}

void initialize_stage_uniform(Network& net, const std::string& stage_name, std::uint64_t seed) {
  // per-stage stream so re-initializing one stage leaves the others' draws intact
  Rng rng(mix_seed(seed, hash_name(stage_name)));
  init_stage(net.stage(stage_name), rng);
}

void copy_trunk(const Network& from, Network& to) {
  auto src = from.stage_parameters(stage::trunk);
  auto dst = to.stage_parameters(stage::trunk);
  if (src.size() != dst.size()) throw std::invalid_argument("copy_trunk: trunk layouts differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->shape() != dst[i]->shape()) throw std::invalid_argument("copy_trunk: trunk shapes differ");
    *dst[i] = *src[i];
  }
}

}  // namespace sds
