#include "sds/optim.hpp"

namespace sds {

void sgd_step(Network& net, const Gradients& grads, OptimState& opt) {
  auto params = net.parameters();
  if (grads.tensors.size() != params.size()) {
    throw std::invalid_argument("sgd_step: " + std::to_string(grads.tensors.size()) +
                                " gradient tensors for " + std::to_string(params.size()) + " parameters");
  }
  const auto names = net.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads.tensors[i].shape() != params[i]->shape()) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch for " + names[i]);
    }
    if (!grads.tensors[i].all_finite()) {
      throw DivergenceError("sgd_step: non-finite gradient in " + names[i] + " " +
                            shape_string(params[i]->shape()));
    }
  }
  if (opt.velocity.empty()) {
    for (const Tensor* p : params) opt.velocity.emplace_back(p->shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* theta = params[i]->data();
    double* v = opt.velocity[i].data();
    const double* g = grads.tensors[i].data();
    for (std::size_t k = 0; k < params[i]->size(); ++k) {
      v[k] = opt.momentum * v[k] - opt.learning_rate * g[k];
      theta[k] += v[k];
    }
  }
}

}  // namespace sds
