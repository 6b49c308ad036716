#pragma once

#include <string>
#include <vector>

#include "blindsr/kernels.hpp"
#include "blindsr/tensor.hpp"

namespace blindsr {

constexpr double kPsnrCap = 100.0;  // reported in place of +inf

// 10 log10(peak^2 / MSE), capped at 100 dB.
double psnr(const Tensor& a, const Tensor& b, double peak);

// mean absolute difference over weights
double kernel_l1(const BlurKernel& a, const BlurKernel& b);

// PSNR between (k_hat (*) x_hr) downsampled and the reference LR image that
// was synthesized with the ground-truth kernel (noiseless).
double lr_consistency_psnr(const BlurKernel& k_hat, const Tensor& x_hr,
                           const Tensor& y_ref, int s);

struct ReportRow {
  std::string id;
  double psnr = 0.0;
  double kernel_l1 = 0.0;
  double lr_consistency_psnr = 0.0;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::string fingerprint;  // hash of config + seeds

  double mean_psnr() const;
  double mean_kernel_l1() const;
  double mean_lr_consistency() const;
  void write_csv(const std::string& path) const;
};

}  // namespace blindsr
