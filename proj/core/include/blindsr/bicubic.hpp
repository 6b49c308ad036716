#pragma once

#include "blindsr/tensor.hpp"

namespace blindsr {

// Separable bicubic resampling (Keys kernel, a = -0.5), pixel-center aligned.
// Downscaling stretches the kernel support by the inverse scale so it
// antialiases. Not differentiable: inputs must not require grad (it is only
// ever applied to the conditioning image).
Tensor bicubic_resize(const Tensor& x, int64_t out_h, int64_t out_w);

// factor > 1 upscales, < 1 downscales; target extents must be integral.
Tensor bicubic_scale(const Tensor& x, double factor);

}  // namespace blindsr
