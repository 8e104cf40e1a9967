#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sds/tensor.hpp"

namespace sds {

enum class LayerKind { conv, maxpool, relu, fc, softmax2 };

std::string to_string(LayerKind kind);

/// A stateless-at-run-time layer: forward and backward are const, so one
/// instance can serve concurrent forward passes. Parameter gradients are
/// accumulated into caller-owned buffers.
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual LayerKind kind() const = 0;
  /// One-line manifest entry, e.g. "conv k=3 stride=1 in=8 out=16".
  virtual std::string describe() const = 0;
  /// Throws std::invalid_argument when `in` is not an acceptable input.
  virtual Shape output_shape(const Shape& in) const = 0;

  virtual Tensor forward(const Tensor& in) const = 0;
  /// Returns dL/d(in). `grad_params` is aligned with parameters() and is
  /// accumulated into.
  virtual Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                          std::span<Tensor> grad_params) const = 0;

  virtual std::span<Tensor> parameters() { return {}; }
  virtual std::span<const Tensor> parameters() const { return {}; }
  /// Parameter names, aligned with parameters(): "<layer>.weight", "<layer>.bias".
  std::vector<std::string> parameter_names() const;
  /// Fan-in of the weight tensor (0 for parameter-free layers).
  virtual std::size_t fan_in() const { return 0; }

  virtual std::unique_ptr<Layer> clone() const = 0;

 private:
  std::string name_;
};

/// 2-D convolution over (C, H, W) with zero padding (k-1)/2.
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride = 1);

  LayerKind kind() const override { return LayerKind::conv; }
  std::string describe() const override;
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& in) const override;
  Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                  std::span<Tensor> grad_params) const override;
  std::span<Tensor> parameters() override { return params_; }
  std::span<const Tensor> parameters() const override { return params_; }
  std::size_t fan_in() const override { return in_ * k_ * k_; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return k_; }
  std::size_t stride() const { return stride_; }
  Tensor& weight() { return params_[0]; }
  Tensor& bias() { return params_[1]; }

 private:
  std::size_t pad() const { return (k_ - 1) / 2; }

  std::size_t in_, out_, k_, stride_;
  std::vector<Tensor> params_;  // weight (out, in, k, k), bias (out)
};

/// k x k max pooling with stride k; trailing rows/columns that do not fill a
/// window are dropped.
class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::string name, std::size_t kernel = 2);

  LayerKind kind() const override { return LayerKind::maxpool; }
  std::string describe() const override;
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& in) const override;
  Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                  std::span<Tensor> grad_params) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  std::size_t k_;
};

class ReLU final : public Layer {
 public:
  using Layer::Layer;

  LayerKind kind() const override { return LayerKind::relu; }
  std::string describe() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& in) const override;
  Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                  std::span<Tensor> grad_params) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
};

/// Fully connected; accepts any input whose element count equals `in`.
class Linear final : public Layer {
 public:
  Linear(std::string name, std::size_t in, std::size_t out);

  LayerKind kind() const override { return LayerKind::fc; }
  std::string describe() const override;
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& in) const override;
  Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                  std::span<Tensor> grad_params) const override;
  std::span<Tensor> parameters() override { return params_; }
  std::span<const Tensor> parameters() const override { return params_; }
  std::size_t fan_in() const override { return in_; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

  Tensor& weight() { return params_[0]; }
  Tensor& bias() { return params_[1]; }

 private:
  std::size_t in_, out_;
  std::vector<Tensor> params_;  // weight (out, in), bias (out)
};

/// Two-class softmax along the leading dimension (which must be 2).
class Softmax2 final : public Layer {
 public:
  using Layer::Layer;

  LayerKind kind() const override { return LayerKind::softmax2; }
  std::string describe() const override { return "softmax2"; }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& in) const override;
  Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                  std::span<Tensor> grad_params) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Softmax2>(*this); }
};

}  // namespace sds
