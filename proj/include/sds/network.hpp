#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sds/layers.hpp"
#include "sds/tensor.hpp"

namespace sds {

/// A named chain of layers fed by the network input (empty parent) or by the
/// output of an earlier stage.
struct Stage {
  std::string name;
  std::string parent;
  std::vector<std::unique_ptr<Layer>> layers;
};

/// Stage names used by the detector networks.
namespace stage {
inline constexpr const char* trunk = "trunk";
inline constexpr const char* seg = "seg";          // 1x1 segmentation infusion head
inline constexpr const char* proposal = "proposal";  // RPN 3x3 proposal feature layer
inline constexpr const char* cls = "cls";
inline constexpr const char* bbox = "bbox";
}  // namespace stage

/// A small DAG of stages; stages are kept in topological order (a stage's
/// parent is always added before it). Copying deep-copies every layer.
class Network {
 public:
  Network() = default;
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  /// Throws if the name is taken or the parent is unknown.
  Stage& add_stage(std::string name, std::string parent);
  Layer& add_layer(const std::string& stage_name, std::unique_ptr<Layer> layer);

  const std::vector<Stage>& stages() const { return stages_; }
  bool has_stage(const std::string& name) const;
  const Stage& stage(const std::string& name) const;
  Stage& stage(const std::string& name);

  /// Every parameter tensor in stage/layer order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  /// Parameter tensors belonging to one stage.
  std::vector<Tensor*> stage_parameters(const std::string& name);
  std::vector<const Tensor*> stage_parameters(const std::string& name) const;

 private:
  std::vector<Stage> stages_;
};

/// Every layer output of one forward pass, enough to run backward.
struct ActivationRecord {
  Tensor input;
  /// outputs[s][l] is the output of layer l in stage s (network stage order).
  std::vector<std::vector<Tensor>> outputs;
  std::vector<std::string> stage_names;
  std::vector<std::vector<std::string>> layer_names;

  const Tensor& stage_output(const std::string& stage_name) const;
  /// Output of the layer with this name; throws std::out_of_range if absent.
  const Tensor& layer_output(const std::string& layer_name) const;
};

using HeadGradients = std::map<std::string, Tensor>;

/// Parameter gradients aligned with Network::parameters().
struct Gradients {
  std::vector<Tensor> tensors;

  bool all_finite() const;
  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);
};

Gradients zero_gradients(const Network& net);

ActivationRecord forward(const Network& net, const Tensor& input);

/// Reverse-mode pass. `head_grads` maps stage names to dL/d(stage output);
/// stages without an entry (and without gradient flowing in from children)
/// contribute nothing. Gradients from sibling stages add up in their parent.
Gradients backward(const Network& net, const ActivationRecord& record, const HeadGradients& head_grads);

/// Same, accumulating into `grads`.
void backward_into(const Network& net, const ActivationRecord& record, const HeadGradients& head_grads,
                   Gradients& grads);

struct TrunkSpec {
  std::size_t input_channels = 1;
  std::vector<std::size_t> channels{8, 16, 32, 32, 32};
  /// Max-pools follow the first `pools` conv blocks; stride = 2^pools.
  std::size_t pools = 4;

  std::size_t stride() const { return std::size_t{1} << pools; }
};

/// conv1..convN (3x3) with relu1..reluN and pool1..poolK.
void add_trunk(Network& net, const TrunkSpec& spec);

/// Trunk + seg head (1x1 -> 2) + proposal layer (3x3 + relu) with sibling
/// cls (1x1 -> 2 per anchor) and bbox (1x1 -> 4 per anchor) heads.
Network make_rpn_network(const TrunkSpec& trunk, std::size_t num_anchors, std::size_t proposal_channels,
                         std::uint64_t seed);

/// Trunk + seg head + fully connected classifier on the flattened trunk
/// output of an input_size x input_size crop.
Network make_bcn_network(const TrunkSpec& trunk, std::size_t input_size,
                         const std::vector<std::size_t>& fc_hidden, std::uint64_t seed);

/// Seeded uniform initialization scaled by fan-in: U(-a, a) with
/// a = sqrt(6 / fan_in) ahead of a relu and sqrt(3 / fan_in) otherwise.
/// Biases are zeroed.
void initialize_uniform(Network& net, std::uint64_t seed);
void initialize_stage_uniform(Network& net, const std::string& stage_name, std::uint64_t seed);

/// Copies every trunk parameter of `from` into `to`; shapes must agree.
void copy_trunk(const Network& from, Network& to);

}  // namespace sds
