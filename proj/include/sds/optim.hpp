#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "sds/network.hpp"

namespace sds {

/// Raised when training meets a non-finite gradient or loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Classical (heavy-ball) momentum: v <- mu*v - lr*g; theta <- theta + v.
struct OptimState {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::vector<Tensor> velocity;  // mirrors Network::parameters(); zero-initialized lazily

  OptimState() = default;
  OptimState(double lr, double mu) : learning_rate(lr), momentum(mu) {}
};

/// Throws DivergenceError (naming the offending parameter) on non-finite
/// gradients; the network is left untouched in that case.
void sgd_step(Network& net, const Gradients& grads, OptimState& opt);

}  // namespace sds
