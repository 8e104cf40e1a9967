#include "sds/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sds {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

void require_chw(const Layer& layer, const Shape& in) {
  if (in.size() != 3) {
    throw std::invalid_argument(layer.name() + ": expected (C, H, W) input, got " + shape_string(in));
  }
}

// Output columns [lo, hi) whose input column ox*stride + kx - pad lies inside [0, w).
void valid_range(std::size_t out_w, std::size_t stride, std::size_t kx, std::size_t pad, std::ptrdiff_t w,
                 std::size_t& lo, std::size_t& hi) {
  lo = 0;
  while (lo < out_w && static_cast<std::ptrdiff_t>(lo * stride + kx) < static_cast<std::ptrdiff_t>(pad)) ++lo;
  hi = out_w;
  while (hi > lo && static_cast<std::ptrdiff_t>((hi - 1) * stride + kx) - static_cast<std::ptrdiff_t>(pad) >= w) --hi;
}

// Unrolls (C, H, W) into a (C*k*k, Ho*Wo) row-major matrix.
void im2col(const Tensor& in, std::size_t k, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, std::vector<double>& col) {
  const std::size_t channels = in.dim(0);
  const auto h = static_cast<std::ptrdiff_t>(in.dim(1));
  const auto w = static_cast<std::ptrdiff_t>(in.dim(2));
  col.resize(channels * k * k * out_h * out_w);
  double* dst = col.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = in.data() + c * in.dim(1) * in.dim(2);
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        std::size_t lo = 0;
        std::size_t hi = 0;
        valid_range(out_w, stride, kx, pad, w, lo, hi);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
        for (std::size_t oy = 0; oy < out_h; ++oy, dst += out_w) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* row = src + iy * w + shift;
          std::fill(dst, dst + lo, 0.0);
          if (stride == 1) {
            std::copy(row + lo, row + hi, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = row[ox * stride];
          }
          std::fill(dst + hi, dst + out_w, 0.0);
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t k, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, Tensor& grad_in) {
  const std::size_t channels = grad_in.dim(0);
  const auto h = static_cast<std::ptrdiff_t>(grad_in.dim(1));
  const auto w = static_cast<std::ptrdiff_t>(grad_in.dim(2));
  const double* src = col;
  for (std::size_t c = 0; c < channels; ++c) {
    double* dst = grad_in.data() + c * grad_in.dim(1) * grad_in.dim(2);
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        std::size_t lo = 0;
        std::size_t hi = 0;
        valid_range(out_w, stride, kx, pad, w, lo, hi);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
        for (std::size_t oy = 0; oy < out_h; ++oy, src += out_w) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= h) continue;
          double* row = dst + iy * w + shift;
          if (stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) row[ox] += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) row[ox * stride] += src[ox];
          }
        }
      }
    }
  }
}

void require_grad_shape(const Layer& layer, const Tensor& grad_out, const Shape& expected) {
  if (grad_out.shape() != expected) {
    throw std::invalid_argument(layer.name() + ": output gradient shape " +
                                shape_string(grad_out.shape()) + " != " + shape_string(expected));
  }
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::fc: return "fc";
    case LayerKind::softmax2: return "softmax2";
  }
  return "?";
}

std::vector<std::string> Layer::parameter_names() const {
  std::vector<std::string> names;
  const auto params = parameters();
  if (!params.empty()) names.push_back(name_ + ".weight");
  if (params.size() > 1) names.push_back(name_ + ".bias");
  return names;
}

// --- Conv2d ----------------------------------------------------------------

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride)
    : Layer(std::move(name)), in_(in_channels), out_(out_channels), k_(kernel), stride_(stride) {
  if (in_ == 0 || out_ == 0 || k_ == 0 || stride_ == 0) {
    throw std::invalid_argument(this->name() + ": conv dimensions must be positive");
  }
  params_.emplace_back(Shape{out_, in_, k_, k_});
  params_.emplace_back(Shape{out_});
}

std::string Conv2d::describe() const {
  return "conv k=" + std::to_string(k_) + " stride=" + std::to_string(stride_) +
         " in=" + std::to_string(in_) + " out=" + std::to_string(out_);
}

Shape Conv2d::output_shape(const Shape& in) const {
  require_chw(*this, in);
  if (in[0] != in_) {
    throw std::invalid_argument(name() + ": expected " + std::to_string(in_) + " input channels, got " +
                                std::to_string(in[0]));
  }
  const std::size_t p = pad();
  if (in[1] + 2 * p < k_ || in[2] + 2 * p < k_) {
    throw std::invalid_argument(name() + ": input " + shape_string(in) + " smaller than kernel");
  }
  return {out_, (in[1] + 2 * p - k_) / stride_ + 1, (in[2] + 2 * p - k_) / stride_ + 1};
}

Tensor Conv2d::forward(const Tensor& in) const {
  const Shape os = output_shape(in.shape());
  const std::size_t spatial = os[1] * os[2];
  const std::size_t rows = in_ * k_ * k_;
  Tensor out(os);

  std::vector<double> col;
  const double* col_data = in.data();
  if (!(k_ == 1 && stride_ == 1)) {
    im2col(in, k_, stride_, pad(), os[1], os[2], col);
    col_data = col.data();
  }
  ConstMatrixMap weight(params_[0].data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(rows));
  ConstMatrixMap cols(col_data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(spatial));
  MatrixMap result(out.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(spatial));
  result.noalias() = weight * cols;
  result.colwise() += ConstVectorMap(params_[1].data(), static_cast<Eigen::Index>(out_));
  return out;
}

Tensor Conv2d::backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                        std::span<Tensor> grad_params) const {
  require_grad_shape(*this, grad_out, out.shape());
  const Shape& os = out.shape();
  const std::size_t spatial = os[1] * os[2];
  const std::size_t rows = in_ * k_ * k_;
  const bool pointwise = k_ == 1 && stride_ == 1;

  std::vector<double> col;
  const double* col_data = in.data();
  if (!pointwise) {
    im2col(in, k_, stride_, pad(), os[1], os[2], col);
    col_data = col.data();
  }
  const auto o = static_cast<Eigen::Index>(out_);
  const auto r = static_cast<Eigen::Index>(rows);
  const auto s = static_cast<Eigen::Index>(spatial);
  ConstMatrixMap grad(grad_out.data(), o, s);
  ConstMatrixMap cols(col_data, r, s);
  MatrixMap grad_weight(grad_params[0].data(), o, r);
  grad_weight.noalias() += grad * cols.transpose();
  // Plain loop: Eigen's vectorized reductions peel by pointer alignment, so
  // their rounding would depend on where the buffer happened to land.
  double* grad_bias = grad_params[1].data();
  for (std::size_t c = 0; c < out_; ++c) {
    const double* row = grad_out.data() + c * spatial;
    double acc = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) acc += row[i];
    grad_bias[c] += acc;
  }

  ConstMatrixMap weight(params_[0].data(), o, r);
  Tensor grad_in(in.shape());
  if (pointwise) {
    MatrixMap(grad_in.data(), r, s).noalias() = weight.transpose() * grad;
  } else {
    RowMatrix grad_cols = weight.transpose() * grad;
    col2im(grad_cols.data(), k_, stride_, pad(), os[1], os[2], grad_in);
  }
  return grad_in;
}

// --- MaxPool2d -------------------------------------------------------------

MaxPool2d::MaxPool2d(std::string name, std::size_t kernel) : Layer(std::move(name)), k_(kernel) {
  if (k_ == 0) throw std::invalid_argument(this->name() + ": pool size must be positive");
}

std::string MaxPool2d::describe() const { return "maxpool k=" + std::to_string(k_); }

Shape MaxPool2d::output_shape(const Shape& in) const {
  require_chw(*this, in);
  if (in[1] < k_ || in[2] < k_) {
    throw std::invalid_argument(name() + ": input " + shape_string(in) + " smaller than pool window");
  }
  return {in[0], in[1] / k_, in[2] / k_};
}

Tensor MaxPool2d::forward(const Tensor& in) const {
  const Shape os = output_shape(in.shape());
  Tensor out(os);
  for (std::size_t c = 0; c < os[0]; ++c) {
    for (std::size_t oy = 0; oy < os[1]; ++oy) {
      for (std::size_t ox = 0; ox < os[2]; ++ox) {
        double best = in.at(c, oy * k_, ox * k_);
        for (std::size_t dy = 0; dy < k_; ++dy) {
          for (std::size_t dx = 0; dx < k_; ++dx) best = std::max(best, in.at(c, oy * k_ + dy, ox * k_ + dx));
        }
        out.at(c, oy, ox) = best;
      }
    }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                           std::span<Tensor>) const {
  require_grad_shape(*this, grad_out, out.shape());
  const Shape& os = out.shape();
  Tensor grad_in(in.shape());
  for (std::size_t c = 0; c < os[0]; ++c) {
    for (std::size_t oy = 0; oy < os[1]; ++oy) {
      for (std::size_t ox = 0; ox < os[2]; ++ox) {
        // first maximum in scan order receives the gradient
        std::size_t by = oy * k_, bx = ox * k_;
        double best = in.at(c, by, bx);
        for (std::size_t dy = 0; dy < k_; ++dy) {
          for (std::size_t dx = 0; dx < k_; ++dx) {
            const double v = in.at(c, oy * k_ + dy, ox * k_ + dx);
            if (v > best) {
              best = v;
              by = oy * k_ + dy;
              bx = ox * k_ + dx;
            }
          }
        }
        grad_in.at(c, by, bx) += grad_out.at(c, oy, ox);
      }
    }
  }
  return grad_in;
}

// --- ReLU ------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& in) const {
  Tensor out(in.shape());
  const double* src = in.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return out;
}

Tensor ReLU::backward(const Tensor& in, const Tensor& out, const Tensor& grad_out, std::span<Tensor>) const {
  require_grad_shape(*this, grad_out, out.shape());
  Tensor grad_in(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
  return grad_in;
}

// --- Linear ----------------------------------------------------------------

Linear::Linear(std::string name, std::size_t in, std::size_t out)
    : Layer(std::move(name)), in_(in), out_(out) {
  if (in_ == 0 || out_ == 0) throw std::invalid_argument(this->name() + ": fc dimensions must be positive");
  params_.emplace_back(Shape{out_, in_});
  params_.emplace_back(Shape{out_});
}

std::string Linear::describe() const {
  return "fc in=" + std::to_string(in_) + " out=" + std::to_string(out_);
}

Shape Linear::output_shape(const Shape& in) const {
  if (shape_size(in) != in_) {
    throw std::invalid_argument(name() + ": expected " + std::to_string(in_) + " inputs, got " +
                                shape_string(in));
  }
  return {out_};
}

Tensor Linear::forward(const Tensor& in) const {
  Tensor out(output_shape(in.shape()));
  const auto o = static_cast<Eigen::Index>(out_);
  const auto i = static_cast<Eigen::Index>(in_);
  VectorMap y(out.data(), o);
  y.noalias() = ConstMatrixMap(params_[0].data(), o, i) * ConstVectorMap(in.data(), i);
  y += ConstVectorMap(params_[1].data(), o);
  return out;
}

Tensor Linear::backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                        std::span<Tensor> grad_params) const {
  require_grad_shape(*this, grad_out, out.shape());
  const auto o = static_cast<Eigen::Index>(out_);
  const auto i = static_cast<Eigen::Index>(in_);
  ConstVectorMap g(grad_out.data(), o);
  ConstVectorMap x(in.data(), i);
  MatrixMap(grad_params[0].data(), o, i).noalias() += g * x.transpose();
  VectorMap(grad_params[1].data(), o) += g;
  Tensor grad_in(in.shape());
  VectorMap(grad_in.data(), i).noalias() = ConstMatrixMap(params_[0].data(), o, i).transpose() * g;
  return grad_in;
}

// --- Softmax2 --------------------------------------------------------------

Shape Softmax2::output_shape(const Shape& in) const {
  if (in.empty() || in[0] != 2) {
    throw std::invalid_argument(name() + ": leading dimension must be 2, got " + shape_string(in));
  }
  return in;
}

Tensor Softmax2::forward(const Tensor& in) const {
  Tensor out(output_shape(in.shape()));
  const std::size_t plane = in.size() / 2;
  for (std::size_t i = 0; i < plane; ++i) {
    const double a = in[i];
    const double b = in[plane + i];
    const double m = std::max(a, b);
    const double ea = std::exp(a - m);
    const double eb = std::exp(b - m);
    out[i] = ea / (ea + eb);
    out[plane + i] = eb / (ea + eb);
  }
  return out;
}

Tensor Softmax2::backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                          std::span<Tensor>) const {
  require_grad_shape(*this, grad_out, out.shape());
  Tensor grad_in(in.shape());
  const std::size_t plane = in.size() / 2;
  for (std::size_t i = 0; i < plane; ++i) {
    const double y0 = out[i];
    const double y1 = out[plane + i];
    const double dot = grad_out[i] * y0 + grad_out[plane + i] * y1;
    grad_in[i] = y0 * (grad_out[i] - dot);
    grad_in[plane + i] = y1 * (grad_out[plane + i] - dot);
  }
  return grad_in;
}

}  // namespace sds
