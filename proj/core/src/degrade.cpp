#include "blindsr/degrade.hpp"

#include "blindsr/common.hpp"
#include "blindsr/ops.hpp"

namespace blindsr {

namespace {

Tensor as_batched(const Tensor& x, bool& was_3d) {
  was_3d = x.rank() == 3;
  if (!was_3d) {
    BSR_CHECK(x.rank() == 4, "degrade: input must be [c,h,w] or [b,c,h,w]");
    return x;
  }
  Shape s = x.shape();
  return reshape(x, {1, s[0], s[1], s[2]});
}

Tensor maybe_unbatch(const Tensor& y, bool was_3d) {
  if (!was_3d) return y;
  Shape s = y.shape();
  return reshape(y, {s[1], s[2], s[3]});
}

}  // namespace

Tensor kernel_as_conv_weight(const BlurKernel& k, int64_t channels) {
  BSR_CHECK(k.size > 0, "kernel_as_conv_weight: empty kernel");
  std::vector<double> w(static_cast<size_t>(channels) * k.size * k.size);
  for (int64_t c = 0; c < channels; ++c)
    std::copy(k.weights.begin(), k.weights.end(),
              w.begin() + c * k.size * k.size);
  return Tensor::from_data({channels, 1, k.size, k.size}, std::move(w));
}

Tensor degrade_linear(const DegradationSpec& spec, const Tensor& x) {
  NoGradGuard ng;
  bool was_3d = false;
  Tensor xb = as_batched(x, was_3d);
  int64_t c = xb.extent(1), h = xb.extent(2), w = xb.extent(3);
  BSR_CHECK(spec.scale >= 1, "degrade: scale must be >= 1");
  BSR_CHECK(h % spec.scale == 0 && w % spec.scale == 0,
            "degrade: extents " << h << "x" << w << " not divisible by scale "
                                << spec.scale);
  Tensor kw = kernel_as_conv_weight(spec.kernel, c);
  Tensor blurred = conv2d(xb, kw, 1, spec.boundary, static_cast<int>(c));
  Tensor y = decimate2d(blurred, spec.scale);
  return maybe_unbatch(y, was_3d);
}

Tensor degrade_apply(const DegradationSpec& spec, const Tensor& x, Rng& rng) {
  Tensor y = degrade_linear(spec, x);
  if (spec.noise_sigma > 0.0) y = awgn(y, spec.noise_sigma, rng);
  return y;
}

Tensor degrade_adjoint(const DegradationSpec& spec, const Tensor& u) {
  NoGradGuard ng;
  bool was_3d = false;
  Tensor ub = as_batched(u, was_3d);
  int64_t c = ub.extent(1), oh = ub.extent(2), ow = ub.extent(3);
  int64_t h = oh * spec.scale, w = ow * spec.scale;
  // adjoint of decimation is zero-stuffing onto the full grid
  Tensor stuffed = zero_upsample2d(ub, spec.scale, h, w);
  Tensor kw = kernel_as_conv_weight(spec.kernel, c);
  int pad = (spec.kernel.size - 1) / 2;
  Tensor xt = conv2d_input_adjoint(stuffed, kw, {ub.extent(0), c, h, w}, 1, pad,
                                   pad, spec.boundary, static_cast<int>(c));
  return maybe_unbatch(xt, was_3d);
}

Tensor fidelity(const Tensor& y, const BlurKernel& k, const Tensor& x0_hat,
                int s, PaddingMode boundary) {
  bool y3 = false, x3 = false;
  Tensor yb = as_batched(y, y3);
  Tensor xb = as_batched(x0_hat, x3);
  int64_t c = xb.extent(1);
  BSR_CHECK(yb.extent(1) == c, "fidelity: channel mismatch");
  BSR_CHECK(yb.extent(2) * s == xb.extent(2) && yb.extent(3) * s == xb.extent(3),
            "fidelity: y " << shape_str(yb.shape()) << " inconsistent with x "
                           << shape_str(xb.shape()) << " at scale " << s);
  Tensor kw = kernel_as_conv_weight(k, c);
  Tensor blurred = conv2d(xb, kw, 1, boundary, static_cast<int>(c));
  Tensor down = decimate2d(blurred, s);
  Tensor r = sub(yb, down);
  return mean(mul(r, r));
}

Tensor awgn(const Tensor& x, double sigma, Rng& rng) {
  BSR_CHECK(sigma >= 0.0, "awgn: sigma must be >= 0");
  if (sigma == 0.0) return x.clone();
  std::vector<double> out(x.vec());
  for (double& v : out) v += sigma * rng.normal();
  return Tensor::from_data(x.shape(), std::move(out));
}

}  // namespace blindsr
