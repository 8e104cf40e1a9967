#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sds/network.hpp"

namespace sds {

/// Scalar loss of one forward pass plus dL/d(head output) for backward.
struct LossEvaluation {
  double loss = 0.0;
  HeadGradients head_grads;
};

using LossFn = std::function<LossEvaluation(const ActivationRecord&)>;

struct GradcheckOptions {
  double step = 1e-3;
  /// Entries checked per parameter tensor (all entries when the tensor is smaller).
  std::size_t samples_per_block = 12;
  std::uint64_t seed = 7;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double scale_floor = 1e-3;
  /// Skip entries whose +/- step flips a relu or moves a max-pool argmax;
  /// central differences straddling such a kink measure a chord, not the
  /// derivative. Skipped entries are replaced by further random draws.
  bool reject_kinks = false;
  /// Upper bound on draws per block when rejecting, as a multiple of
  /// samples_per_block.
  std::size_t max_draw_factor = 20;
  /// With reject_kinks: a block with no kink-free entry at `step` is retried
  /// at step/10, step/100, ... down to this value. Equal to `step` by default,
  /// meaning no retry.
  double min_step = 1e-3;
};

struct BlockError {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t rejected = 0;  // draws skipped for straddling a kink
  double step = 0.0;         // finite-difference step that produced the checks
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<BlockError> blocks;
  bool passed = false;

  double max_error() const;
};

double relative_error(double analytic, double numeric, double scale_floor);

/// Compares backward() against central differences on a seeded subsample
/// of every parameter tensor. The network is restored exactly afterwards.
/// Passes iff every block checked at least one entry and every error is
/// strictly below `tolerance`.
GradcheckReport gradcheck(Network& net, const LossFn& loss_fn, const Tensor& input, double tolerance,
                          const GradcheckOptions& options = {});

/// Relu on/off state and max-pool argmax of every unit in the record.
std::vector<std::uint8_t> activation_pattern(const Network& net, const ActivationRecord& record);

/// Central-difference gradient of f at x (every coordinate).
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double step);

}  // namespace sds
