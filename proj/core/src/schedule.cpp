#include "blindsr/schedule.hpp"

#include <cmath>

#include "blindsr/common.hpp"
#include "blindsr/ops.hpp"

namespace blindsr {

void DiffusionSchedule::check_t(int t) const {
  BSR_CHECK(t >= 1 && t <= T, "timestep " << t << " outside [1," << T << "]");
}

DiffusionSchedule linear_schedule(int T, double beta_start, double beta_end) {
  BSR_CHECK(T >= 1, "schedule: T must be >= 1");
  BSR_CHECK(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0,
            "schedule: need 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta_v.resize(static_cast<size_t>(T));
  s.alpha_v.resize(static_cast<size_t>(T));
  s.alpha_bar_v.resize(static_cast<size_t>(T));
  s.posterior_var_v.resize(static_cast<size_t>(T));
  double abar = 1.0;
  for (int t = 1; t <= T; ++t) {
    double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    double b = beta_start + (beta_end - beta_start) * frac;
    double abar_prev = abar;
    abar *= 1.0 - b;
    s.beta_v[static_cast<size_t>(t - 1)] = b;
    s.alpha_v[static_cast<size_t>(t - 1)] = 1.0 - b;
    s.alpha_bar_v[static_cast<size_t>(t - 1)] = abar;
    s.posterior_var_v[static_cast<size_t>(t - 1)] =
        (1.0 - abar_prev) / (1.0 - abar) * b;
  }
  return s;
}

Tensor q_sample(const DiffusionSchedule& s, const Tensor& x0, int t,
                const Tensor& eps) {
  s.check_t(t);
  BSR_CHECK(eps.shape() == x0.shape(), "q_sample: eps shape mismatch");
  double ab = s.alpha_bar(t);
  return add(mul_scalar(x0, std::sqrt(ab)),
             mul_scalar(eps, std::sqrt(1.0 - ab)));
}

Tensor predict_x0(const DiffusionSchedule& s, const Tensor& x_t, int t,
                  const Tensor& eps_hat) {
  s.check_t(t);
  double ab = s.alpha_bar(t);
  return mul_scalar(sub(x_t, mul_scalar(eps_hat, std::sqrt(1.0 - ab))),
                    1.0 / std::sqrt(ab));
}

Tensor reverse_step(const DiffusionSchedule& s, const Tensor& x_t, int t,
                    const Tensor& eps_hat, const Tensor& noise) {
  s.check_t(t);
  if (t == 1) {
    for (double v : noise.vec())
      BSR_CHECK(v == 0.0, "reverse_step: noise must be zero at t == 1");
  }
  double ab = s.alpha_bar(t);
  double coef = s.beta(t) / std::sqrt(1.0 - ab);
  Tensor mean_t =
      mul_scalar(sub(x_t, mul_scalar(eps_hat, coef)), 1.0 / std::sqrt(s.alpha(t)));
  double sv = std::sqrt(s.posterior_var(t));
  if (sv == 0.0) return mean_t;
  return add(mean_t, mul_scalar(noise, sv));
}

}  // namespace blindsr
