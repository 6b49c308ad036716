#include "blindsr/sample.hpp"

#include <cmath>
#include <fstream>

#include "blindsr/common.hpp"
#include "blindsr/metrics.hpp"
#include "blindsr/ops.hpp"

namespace blindsr {

void SamplerConfig::validate() const {
  BSR_CHECK(lambda >= 0.0, "sampler: lambda must be >= 0");
  BSR_CHECK(trace_every >= 1, "sampler: trace_every must be >= 1");
}

namespace {

std::vector<double> code_of(const Tensor& code_batch) {
  // [b,d] -> first item
  int64_t d = code_batch.extent(-1);
  std::vector<double> c(static_cast<size_t>(d));
  std::copy(code_batch.data(), code_batch.data() + d, c.begin());
  return c;
}

Tensor gaussian_like(const Shape& shape, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.normal();
  return Tensor::from_data(shape, std::move(v));
}

}  // namespace

GuidedStepResult guided_reverse_step(Denoiser& model,
                                     const DiffusionSchedule& sched,
                                     const Tensor& x_t, int t, const Tensor& y,
                                     int s, const KernelPCA& pca, double lambda,
                                     Rng& rng, bool want_residual) {
  sched.check_t(t);
  GuidedStepResult res;

  Tensor noise = t > 1 ? gaussian_like(x_t.shape(), rng)
                       : Tensor::zeros(x_t.shape());

  if (lambda == 0.0) {
    // plain conditional sampling; the guidance branch is not evaluated
    NoGradGuard ng;
    DenoiserOutput out = model.evaluate(x_t, t, y, sched);
    res.kernel_code = code_of(out.kernel_code);
    res.k_t = decode(pca, res.kernel_code);
    res.x_prev = reverse_step(sched, x_t, t, out.eps_hat, noise);
    if (want_residual) {
      Tensor x0h = predict_x0(sched, x_t, t, out.eps_hat);
      res.residual = fidelity(y, res.k_t, x0h, s).item();
    }
    return res;
  }

  // leaf copy of x_t so the gradient lands here
  Tensor x = x_t.detach();
  x.set_requires_grad(true);

  DenoiserOutput out = model.evaluate(x, t, y, sched);
  res.kernel_code = code_of(out.kernel_code);
  res.k_t = decode(pca, res.kernel_code);
  Tensor x0h = predict_x0(sched, x, t, out.eps_hat);
  Tensor fid = fidelity(y, res.k_t, x0h, s);
  res.residual = fid.item();
  res.guidance_evaluated = true;
  backward(fid);

  Tensor grad = x.has_grad() ? x.grad_tensor() : Tensor::zeros(x.shape());
  for (double g : grad.vec()) {
    if (!std::isfinite(g)) {
      throw std::runtime_error(
          "guided_reverse_step: non-finite fidelity gradient at t=" +
          std::to_string(t) + " (residual=" + std::to_string(res.residual) + ")");
    }
  }

  NoGradGuard ng;
  Tensor unguided = reverse_step(sched, x.detach(), t, out.eps_hat.detach(), noise);
  res.x_prev = sub(unguided, mul_scalar(grad, lambda));
  return res;
}

SampleResult sample(Denoiser& model, const DiffusionSchedule& sched,
                    const Tensor& y, int s, const KernelPCA& pca,
                    const SamplerConfig& cfg) {
  cfg.validate();
  BSR_CHECK(y.rank() == 3, "sample: y must be [c,h,w]");
  Tape::current().clear();

  int64_t c = y.extent(0), lh = y.extent(1), lw = y.extent(2);
  Shape xshape{1, c, lh * s, lw * s};
  Tensor yb = reshape(y.requires_grad() ? y.detach() : y, {1, c, lh, lw});

  Rng root(cfg.seed);
  Rng rng_init = root.split("x_T");
  Rng rng_noise = root.split("step-noise");

  Tensor x = gaussian_like(xshape, rng_init);
  SampleResult out;
  BlurKernel k_last;
  for (int t = sched.T; t >= 1; --t) {
    GuidedStepResult step =
        guided_reverse_step(model, sched, x, t, yb, s, pca, cfg.lambda,
                            rng_noise, /*want_residual=*/true);
    x = step.x_prev;
    k_last = step.k_t;
    if ((sched.T - t) % cfg.trace_every == 0 || t == 1) {
      TraceRow row;
      row.t = t;
      row.residual = step.residual;
      row.kernel_code = step.kernel_code;
      out.trace.rows.push_back(std::move(row));
    }
  }
  out.x0_hat = reshape(x, {c, lh * s, lw * s});
  out.k0_hat = k_last;
  return out;
}

std::vector<LambdaSweepRow> lambda_sweep(Denoiser& model,
                                         const DiffusionSchedule& sched,
                                         const std::vector<SweepInstance>& set,
                                         int s, const KernelPCA& pca,
                                         const std::vector<double>& lambdas,
                                         uint64_t seed) {
  BSR_CHECK(!set.empty(), "lambda_sweep: empty instance set");
  std::vector<LambdaSweepRow> rows;
  for (double lam : lambdas) {
    LambdaSweepRow row;
    row.lambda = lam;
    for (size_t i = 0; i < set.size(); ++i) {
      SamplerConfig cfg;
      cfg.lambda = lam;
      // one seed per instance, shared across lambdas so runs are paired
      cfg.seed = Rng(seed).split("sweep", static_cast<uint64_t>(i)).seed();
      SampleResult r = sample(model, sched, set[i].y, s, pca, cfg);
      row.mean_residual += r.trace.rows.back().residual;
      row.mean_psnr += psnr(r.x0_hat, set[i].x0, 1.0);
    }
    row.mean_residual /= static_cast<double>(set.size());
    row.mean_psnr /= static_cast<double>(set.size());
    rows.push_back(row);
  }
  return rows;
}

void write_trace_csv(const std::string& path, const SamplerTrace& trace,
                     const BlurKernel* k_gt, const KernelPCA* pca) {
  std::ofstream os(path, std::ios::trunc);
  BSR_CHECK(os.is_open(), "cannot open for writing: " << path);
  os.precision(12);
  bool with_l1 = k_gt != nullptr && pca != nullptr;
  os << (with_l1 ? "t,residual,kernel_l1\n" : "t,residual\n");
  for (const TraceRow& r : trace.rows) {
    os << r.t << ',' << r.residual;
    if (with_l1) {
      BlurKernel kh = decode(*pca, r.kernel_code);
      os << ',' << kernel_l1(kh, *k_gt);
    }
    os << '\n';
  }
}

}  // namespace blindsr
