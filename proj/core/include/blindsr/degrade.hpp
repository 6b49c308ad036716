#pragma once

#include "blindsr/conv.hpp"
#include "blindsr/kernels.hpp"
#include "blindsr/rng.hpp"
#include "blindsr/tensor.hpp"

namespace blindsr {

// Classical degradation operator y = (k (*) x) downsample_s + n, with the
// exact adjoint of its linear part. Conventions (the adjoint depends on
// them): replicate boundary for the blur, decimation keeps the top-left
// sample of each s x s block, noise is added after decimation.

struct DegradationSpec {
  BlurKernel kernel;
  int scale = 1;
  double noise_sigma = 0.0;  // AWGN std in [0,1] intensity units
  PaddingMode boundary = PaddingMode::Replicate;
};

// x is [c,h,w] or [b,c,h,w]; h,w must be divisible by scale.
Tensor degrade_apply(const DegradationSpec& spec, const Tensor& x, Rng& rng);

// Noiseless forward A(x) = (k (*) x) downsample_s and its exact adjoint.
Tensor degrade_linear(const DegradationSpec& spec, const Tensor& x);
Tensor degrade_adjoint(const DegradationSpec& spec, const Tensor& u);

// Differentiable data-fidelity: mean((y - (k (*) x0_hat) downsample_s)^2).
// Mean (not sum) so the guidance weight is resolution independent.
Tensor fidelity(const Tensor& y, const BlurKernel& k, const Tensor& x0_hat,
                int s, PaddingMode boundary = PaddingMode::Replicate);

Tensor awgn(const Tensor& x, double sigma, Rng& rng);

// Channel-wise depthwise weight tensor [c,1,k,k] that applies one 2-D kernel
// to every channel.
Tensor kernel_as_conv_weight(const BlurKernel& k, int64_t channels);

}  // namespace blindsr
