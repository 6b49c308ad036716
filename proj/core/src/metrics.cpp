#include "blindsr/metrics.hpp"

#include <cmath>
#include <fstream>

#include "blindsr/common.hpp"
#include "blindsr/degrade.hpp"

namespace blindsr {

double psnr(const Tensor& a, const Tensor& b, double peak) {
  BSR_CHECK(a.shape() == b.shape(), "psnr: shape mismatch "
                                        << shape_str(a.shape()) << " vs "
                                        << shape_str(b.shape()));
  BSR_CHECK(peak > 0.0, "psnr: peak must be positive");
  const double* pa = a.data();
  const double* pb = b.data();
  double mse = 0.0;
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    double d = pa[i] - pb[i];
    mse += d * d;
  }
  mse /= static_cast<double>(n);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double kernel_l1(const BlurKernel& a, const BlurKernel& b) {
  BSR_CHECK(a.size == b.size, "kernel_l1: size mismatch " << a.size << " vs "
                                                          << b.size);
  double acc = 0.0;
  for (size_t i = 0; i < a.weights.size(); ++i)
    acc += std::abs(a.weights[i] - b.weights[i]);
  return acc / static_cast<double>(a.weights.size());
}

double lr_consistency_psnr(const BlurKernel& k_hat, const Tensor& x_hr,
                           const Tensor& y_ref, int s) {
  DegradationSpec spec{k_hat, s, 0.0, PaddingMode::Replicate};
  Tensor y_hat = degrade_linear(spec, x_hr);
  return psnr(y_hat, y_ref, 1.0);
}

double ExperimentReport::mean_psnr() const {
  double acc = 0.0;
  for (const auto& r : rows) acc += r.psnr;
  return rows.empty() ? 0.0 : acc / static_cast<double>(rows.size());
}

double ExperimentReport::mean_kernel_l1() const {
  double acc = 0.0;
  for (const auto& r : rows) acc += r.kernel_l1;
  return rows.empty() ? 0.0 : acc / static_cast<double>(rows.size());
}

double ExperimentReport::mean_lr_consistency() const {
  double acc = 0.0;
  for (const auto& r : rows) acc += r.lr_consistency_psnr;
  return rows.empty() ? 0.0 : acc / static_cast<double>(rows.size());
}

void ExperimentReport::write_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  BSR_CHECK(os.is_open(), "cannot open for writing: " << path);
  os.precision(12);
  os << "# fingerprint=" << fingerprint << "\n";
  os << "id,psnr,kernel_l1,lr_consistency_psnr\n";
  for (const auto& r : rows)
    os << r.id << ',' << r.psnr << ',' << r.kernel_l1 << ','
       << r.lr_consistency_psnr << '\n';
  os << "mean," << mean_psnr() << ',' << mean_kernel_l1() << ','
     << mean_lr_consistency() << '\n';
}

}  // namespace blindsr
