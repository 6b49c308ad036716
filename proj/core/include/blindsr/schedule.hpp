#pragma once

#include <string>
#include <vector>

#include "blindsr/tensor.hpp"

namespace blindsr {

// Variance schedule and the forward/reverse constants derived from it.
// Arrays are 1-indexed through the accessors (t in [1, T]); alpha_bar(0) = 1.
struct DiffusionSchedule {
  int T = 0;
  double beta_start = 0.0, beta_end = 0.0;
  std::string family = "linear";
  std::vector<double> beta_v, alpha_v, alpha_bar_v, posterior_var_v;

  double beta(int t) const { return beta_v[static_cast<size_t>(t - 1)]; }
  double alpha(int t) const { return alpha_v[static_cast<size_t>(t - 1)]; }
  double alpha_bar(int t) const {
    return t == 0 ? 1.0 : alpha_bar_v[static_cast<size_t>(t - 1)];
  }
  double posterior_var(int t) const {
    return posterior_var_v[static_cast<size_t>(t - 1)];
  }
  void check_t(int t) const;
};

DiffusionSchedule linear_schedule(int T, double beta_start, double beta_end);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor q_sample(const DiffusionSchedule& s, const Tensor& x0, int t,
                const Tensor& eps);

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
Tensor predict_x0(const DiffusionSchedule& s, const Tensor& x_t, int t,
                  const Tensor& eps_hat);

// Posterior mean (1/sqrt(alpha_t))(x_t - beta_t/sqrt(1-abar_t) eps_hat)
// plus sqrt(posterior_var_t) * noise. noise must be all zero at t == 1.
Tensor reverse_step(const DiffusionSchedule& s, const Tensor& x_t, int t,
                    const Tensor& eps_hat, const Tensor& noise);

}  // namespace blindsr
