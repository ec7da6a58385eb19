#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "moeamc/tape.hpp"
#include "moeamc/tensor.hpp"

namespace moeamc {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "tensor_index[flat]" of the worst coordinate
  std::size_t checked = 0;
};

// Compares tape gradients of a scalar-valued function against central
// differences. The function must rebuild its graph on every call: it gets a
// tape (nullptr for the perturbed numeric evaluations) and the inputs, and
// returns the scalar output. Double precision only; float loses too many
// digits for h = 1e-5 to mean anything.
inline GradCheckResult grad_check(
    const std::function<Tensor<double>(Tape<double>*, std::vector<Tensor<double>>&)>& f,
    std::vector<Tensor<double>> inputs, double h = 1e-5, std::size_t max_coords_per_tensor = 64) {
  for (auto& in : inputs) in.set_requires_grad(true);

  Tape<double> tape;
  Tensor<double> loss = f(&tape, inputs);
  if (loss.size() != 1) throw ValidationError("grad_check: function must return a scalar");
  for (auto& in : inputs) in.zero_grad();
  tape.backward(loss);

  GradCheckResult res;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor<double>& in = inputs[t];
    std::size_t n = in.size();
    std::size_t step = 1;
    if (n > max_coords_per_tensor) step = n / max_coords_per_tensor;
    for (std::size_t i = 0; i < n; i += step) {
      double orig = in[i];
      in[i] = orig + h;
      double up = f(nullptr, inputs).item();
      in[i] = orig - h;
      double dn = f(nullptr, inputs).item();
      in[i] = orig;
      double numeric = (up - dn) / (2.0 * h);
      double analytic = in.grad()[i];
      double denom = std::abs(analytic) + std::abs(numeric);
      double rel = std::abs(analytic - numeric) / std::max(1e-8, denom);
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input " + std::to_string(t) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace moeamc
