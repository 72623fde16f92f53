#pragma once

#include <functional>
#include <vector>

#include "seqorder/numerics.hpp"

namespace seqorder::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed, 5);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

using OpFn = std::function<Var(Tape&, std::vector<Var>&)>;

// Max relative error of d/d(inputs) sum(op(inputs) * R) for a fixed random R,
// so every output coordinate carries a distinct upstream gradient.
inline double check_op(std::vector<Tensor> inputs, const OpFn& op) {
  Tensor weights;
  const auto run = [&](std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    const Var out = op(tape, vars);
    if (weights.size() == 0) weights = random_tensor(out.shape(), 99);
    const Var loss = ops::sum(ops::mul(out, tape.constant(weights)));
    if (grads) {
      tape.backward(loss);
      for (const Var v : vars) grads->push_back(tape.grad(v));
    }
    return loss.value().item();
  };
  std::vector<Tensor> grads;
  run(&grads);
  std::vector<Tensor*> points;
  std::vector<const Tensor*> analytic;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    points.push_back(&inputs[i]);
    analytic.push_back(&grads[i]);
  }
  return grad_check_tensors([&] { return run(nullptr); }, points, analytic, 1e-5);
}

}  // namespace seqorder::testing
