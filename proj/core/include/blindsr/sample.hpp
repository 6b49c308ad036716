#pragma once

#include <vector>

#include "blindsr/degrade.hpp"
#include "blindsr/kernels.hpp"
#include "blindsr/mcformer.hpp"
#include "blindsr/schedule.hpp"

namespace blindsr {

// MAP-unfolded reverse diffusion: each step denoises, decodes the estimated
// kernel, and descends the data-fidelity residual through the network.

struct SamplerConfig {
  double lambda = 1.0;  // weight on the kernel-aware gradient step
  uint64_t seed = 0;
  int trace_every = 1;
  bool deterministic_final = true;  // forced: no injected noise at t == 1

  void validate() const;
};

struct TraceRow {
  int t = 0;
  double residual = 0.0;            // mean((y - (k_t (*) x0_hat) ds)^2)
  std::vector<double> kernel_code;  // snapshot
};

struct SamplerTrace {
  std::vector<TraceRow> rows;  // timesteps strictly decreasing
};

struct GuidedStepResult {
  Tensor x_prev;
  BlurKernel k_t;
  std::vector<double> kernel_code;  // raw estimator output
  double residual = 0.0;
  bool guidance_evaluated = false;
};

// One reverse step. With lambda > 0 the model runs under the tape, the
// fidelity gradient w.r.t. x_t is backpropagated through the whole network,
// and the unguided posterior sample is shifted by -lambda * grad. With
// lambda == 0 the guidance branch is never evaluated.
GuidedStepResult guided_reverse_step(Denoiser& model,
                                     const DiffusionSchedule& sched,
                                     const Tensor& x_t, int t, const Tensor& y,
                                     int s, const KernelPCA& pca, double lambda,
                                     Rng& rng, bool want_residual = true);

struct SampleResult {
  Tensor x0_hat;      // [c, h, w]
  BlurKernel k0_hat;  // decoded kernel at the final step
  SamplerTrace trace;
};

// Algorithm: x_T ~ N(0,I); for t = T..1 run guided steps with injected noise
// for t > 1 and none at t = 1. y is [c,h,w]; the output is [c, h*s, w*s].
SampleResult sample(Denoiser& model, const DiffusionSchedule& sched,
                    const Tensor& y, int s, const KernelPCA& pca,
                    const SamplerConfig& cfg);

struct SweepInstance {
  Tensor x0;  // ground-truth HR [c,h,w]
  Tensor y;   // degraded LR
  BlurKernel kernel;
};

struct LambdaSweepRow {
  double lambda = 0.0;
  double mean_residual = 0.0;  // final-step residual, averaged over instances
  double mean_psnr = 0.0;
};

std::vector<LambdaSweepRow> lambda_sweep(Denoiser& model,
                                         const DiffusionSchedule& sched,
                                         const std::vector<SweepInstance>& set,
                                         int s, const KernelPCA& pca,
                                         const std::vector<double>& lambdas,
                                         uint64_t seed);

void write_trace_csv(const std::string& path, const SamplerTrace& trace,
                     const BlurKernel* k_gt = nullptr,
                     const KernelPCA* pca = nullptr);

}  // namespace blindsr
