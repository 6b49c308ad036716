#pragma once

#include "blindsr/tensor.hpp"

namespace blindsr {

enum class PaddingMode { Zero, Replicate, Circular };

// 2-D convolution, x [b,c_in,h,w] * w [c_out,c_in/groups,kh,kw].
// Kernel extents must be odd; padding amount is (k-1)/2 so stride-1 output
// keeps the spatial extents. Differentiable in x and w.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, PaddingMode mode,
              int groups = 1);

// Same, with an explicit padding amount.
Tensor conv2d_padded(const Tensor& x, const Tensor& w, int stride, int pad_h,
                     int pad_w, PaddingMode mode, int groups = 1);

// Transposed convolution (decoder upsampling), w [c_in,c_out,kh,kw],
// zero padding only, groups == 1.
// out = (in-1)*stride - 2*padding + k + output_padding
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, int stride,
                        int padding, int output_padding);

// Decimation: keep sample (0,0) of every s x s block. Works on the last two
// axes; leading axes are batch. Adjoint is zero_upsample2d.
Tensor decimate2d(const Tensor& x, int s);

// Scatter x into a zero grid at multiples of s ((s*i, s*j) <- x[i,j]).
Tensor zero_upsample2d(const Tensor& x, int s, int64_t out_h, int64_t out_w);

// Exact adjoint of the linear map u = conv2d_padded(x, w, ...) in x, i.e.
// the transpose of the padded-convolution operator including the boundary
// handling. This is the same routine the tape uses for the conv backward.
Tensor conv2d_input_adjoint(const Tensor& gout, const Tensor& w,
                            const Shape& x_shape, int stride, int pad_h,
                            int pad_w, PaddingMode mode, int groups = 1);

}  // namespace blindsr
