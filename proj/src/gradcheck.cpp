#include "sds/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sds/random.hpp"

namespace sds {

double GradcheckReport::max_error() const {
  double m = 0.0;
  for (const BlockError& b : blocks) m = std::max(m, b.max_relative_error);
  return m;
}

double relative_error(double analytic, double numeric, double scale_floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), scale_floor});
  return std::abs(analytic - numeric) / scale;
}

std::vector<std::uint8_t> activation_pattern(const Network& net, const ActivationRecord& record) {
  std::vector<std::uint8_t> pattern;
  const auto& stages = net.stages();
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const Stage& st = stages[s];
    for (std::size_t l = 0; l < st.layers.size(); ++l) {
      const Layer& layer = *st.layers[l];
      const Tensor& out = record.outputs[s][l];
      if (layer.kind() == LayerKind::relu) {
        for (const double v : out.values()) pattern.push_back(v > 0.0 ? 1 : 0);
      } else if (layer.kind() == LayerKind::maxpool) {
        const Tensor& in = l > 0 ? record.outputs[s][l - 1]
                                 : (st.parent.empty() ? record.input : record.stage_output(st.parent));
        const std::size_t k = in.dim(1) / out.dim(1);
        for (std::size_t c = 0; c < out.dim(0); ++c) {
          for (std::size_t oy = 0; oy < out.dim(1); ++oy) {
            for (std::size_t ox = 0; ox < out.dim(2); ++ox) {
              std::uint8_t arg = 0;
              double best = in.at(c, oy * k, ox * k);
              for (std::size_t d = 1; d < k * k; ++d) {
                const double v = in.at(c, oy * k + d / k, ox * k + d % k);
                if (v > best) {
                  best = v;
                  arg = static_cast<std::uint8_t>(d);
                }
              }
              pattern.push_back(arg);
            }
          }
        }
      }
    }
  }
  return pattern;
}

GradcheckReport gradcheck(Network& net, const LossFn& loss_fn, const Tensor& input, double tolerance,
                          const GradcheckOptions& options) {
  const ActivationRecord record = forward(net, input);
  const Gradients analytic = backward(net, record, loss_fn(record).head_grads);
  const std::vector<std::uint8_t> base_pattern =
      options.reject_kinks ? activation_pattern(net, record) : std::vector<std::uint8_t>{};

  GradcheckReport report;
  report.tolerance = tolerance;
  auto params = net.parameters();
  const auto names = net.parameter_names();
  Rng rng(mix_seed(options.seed));

  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = *params[p];
    const std::size_t want = std::min(options.samples_per_block, param.size());
    const std::size_t max_draws =
        options.reject_kinks ? std::min(param.size(), want * std::max<std::size_t>(options.max_draw_factor, 1)) : want;
    // Partial Fisher-Yates: the first max_draws entries form a random draw order.
    std::vector<std::size_t> entries(param.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    for (std::size_t i = 0; i < max_draws && i + 1 < entries.size(); ++i) {
      std::swap(entries[i], entries[i + rng.index(entries.size() - i)]);
    }

    BlockError block{names[p], 0.0, 0, 0, options.step};
    for (double step = options.step;; step /= 10.0) {
      block.step = step;
      for (std::size_t d = 0; d < max_draws && block.checked < want; ++d) {
        const std::size_t e = entries[d];
        const double original = param[e];
        param[e] = original + step;
        const ActivationRecord rp = forward(net, input);
        param[e] = original - step;
        const ActivationRecord rm = forward(net, input);
        param[e] = original;
        if (options.reject_kinks &&
            (activation_pattern(net, rp) != base_pattern || activation_pattern(net, rm) != base_pattern)) {
          ++block.rejected;
          continue;
        }
        const double numeric = (loss_fn(rp).loss - loss_fn(rm).loss) / (2.0 * step);
        const double err = relative_error(analytic.tensors[p][e], numeric, options.scale_floor);
        block.max_relative_error = std::max(block.max_relative_error, std::isfinite(err) ? err : INFINITY);
        ++block.checked;
      }
      if (block.checked > 0 || !options.reject_kinks || step / 10.0 < options.min_step * (1.0 - 1e-9)) break;
    }
    report.blocks.push_back(std::move(block));
  }

  report.passed = std::all_of(report.blocks.begin(), report.blocks.end(), [&](const BlockError& b) {
    return b.checked > 0 && b.max_relative_error < tolerance;
  });
  return report;
}

std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double step) {
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double original = point[i];
    point[i] = original + step;
    const double plus = f(point);
    point[i] = original - step;
    const double minus = f(point);
    point[i] = original;
    grad[i] = (plus - minus) / (2.0 * step);
  }
  return grad;
}

}  // namespace sds
