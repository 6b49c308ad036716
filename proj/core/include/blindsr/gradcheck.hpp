#pragma once

#include <functional>
#include <string>
#include <vector>

#include "blindsr/tensor.hpp"

namespace blindsr {

// Central finite differences: the independent oracle all analytic gradients
// are checked against. Evaluates f numerically and never touches the tape.

using ScalarFn = std::function<double(const std::vector<double>&)>;

std::vector<double> fd_gradient(const ScalarFn& f, std::vector<double> x,
                                double h = 1e-5);

// max_i |a_i - b_i| / max(scale_floor, max_i |b_i|)
double max_rel_error(const std::vector<double>& analytic,
                     const std::vector<double>& fd,
                     double scale_floor = 1e-6);

struct GradCheckResult {
  std::string name;
  double max_rel = 0.0;
  bool pass = false;
};

// Finite-difference suites over every differentiable op (elementwise, matmul,
// reductions, softmax, shape ops, conv2d and the resampling ops, composites).
std::vector<GradCheckResult> run_op_gradchecks(int seeds, double tol);

// End-to-end check of grad_x of the data-fidelity residual through the toy
// denoiser (the gradient the guided sampler uses).
GradCheckResult run_end_to_end_gradcheck(int seeds, double tol);

}  // namespace blindsr
