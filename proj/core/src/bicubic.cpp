#include "blindsr/bicubic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "blindsr/common.hpp"

namespace blindsr {

namespace {

// Keys cubic convolution kernel, a = -0.5.
double cubic(double x) {
  const double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

struct TapSet {
  // per output index: first source index and normalized weights
  std::vector<int64_t> start;
  std::vector<double> weights;
  int64_t taps = 0;
};

TapSet build_taps(int64_t in, int64_t out) {
  double scale = static_cast<double>(out) / static_cast<double>(in);
  // widen the kernel when minifying (antialias)
  double kscale = std::min(scale, 1.0);
  double support = 2.0 / kscale;
  int64_t taps = static_cast<int64_t>(std::ceil(support)) * 2 + 1;

  TapSet ts;
  ts.taps = taps;
  ts.start.resize(static_cast<size_t>(out));
  ts.weights.resize(static_cast<size_t>(out * taps));
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / scale - 0.5;
    int64_t first = static_cast<int64_t>(std::floor(src - support)) + 1;
    ts.start[static_cast<size_t>(o)] = first;
    double* w = ts.weights.data() + o * taps;
    double total = 0.0;
    for (int64_t t = 0; t < taps; ++t) {
      double wv = cubic((src - static_cast<double>(first + t)) * kscale) * kscale;
      w[t] = wv;
      total += wv;
    }
    // weights sum to 1 so constants are reproduced exactly, borders included
    BSR_CHECK(total > 0.0, "bicubic: degenerate tap set");
    for (int64_t t = 0; t < taps; ++t) w[t] /= total;
  }
  return ts;
}

// resample the last axis of a [rows, in] buffer into [rows, out]
void resample_rows(const double* src, double* dst, int64_t rows, int64_t in,
                   const TapSet& ts, int64_t out) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* s = src + r * in;
    double* d = dst + r * out;
    for (int64_t o = 0; o < out; ++o) {
      const double* w = ts.weights.data() + o * ts.taps;
      int64_t first = ts.start[static_cast<size_t>(o)];
      double acc = 0.0;
      for (int64_t t = 0; t < ts.taps; ++t) {
        int64_t i = std::clamp<int64_t>(first + t, 0, in - 1);
        acc += w[t] * s[i];
      }
      d[o] = acc;
    }
  }
}

}  // namespace

Tensor bicubic_resize(const Tensor& x, int64_t out_h, int64_t out_w) {
  BSR_CHECK(!x.requires_grad(), "bicubic_resize is not differentiable");
  BSR_CHECK(x.rank() >= 2, "bicubic_resize: rank < 2");
  const Shape& xs = x.shape();
  int64_t h = xs[xs.size() - 2], w = xs.back();
  int64_t planes = x.numel() / (h * w);
  if (out_h == h && out_w == w) return x.clone();

  // horizontal pass: [planes*h, w] -> [planes*h, out_w]
  TapSet tw = build_taps(w, out_w);
  std::vector<double> mid(static_cast<size_t>(planes * h * out_w));
  resample_rows(x.data(), mid.data(), planes * h, w, tw, out_w);

  // vertical pass per plane: transpose, resample, transpose back
  TapSet th = build_taps(h, out_h);
  std::vector<double> colbuf(static_cast<size_t>(out_w * h));
  std::vector<double> colout(static_cast<size_t>(out_w * out_h));
  std::vector<double> out(static_cast<size_t>(planes * out_h * out_w));
  for (int64_t p = 0; p < planes; ++p) {
    const double* mp = mid.data() + p * h * out_w;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < out_w; ++j) colbuf[static_cast<size_t>(j * h + i)] = mp[i * out_w + j];
    resample_rows(colbuf.data(), colout.data(), out_w, h, th, out_h);
    double* op = out.data() + p * out_h * out_w;
    for (int64_t j = 0; j < out_w; ++j)
      for (int64_t i = 0; i < out_h; ++i) op[i * out_w + j] = colout[static_cast<size_t>(j * out_h + i)];
  }

  Shape os = xs;
  os[os.size() - 2] = out_h;
  os.back() = out_w;
  return Tensor::from_data(std::move(os), std::move(out));
}

Tensor bicubic_scale(const Tensor& x, double factor) {
  BSR_CHECK(factor > 0.0, "bicubic_scale: factor must be positive");
  const Shape& xs = x.shape();
  int64_t h = xs[xs.size() - 2], w = xs.back();
  double th = static_cast<double>(h) * factor;
  double tw = static_cast<double>(w) * factor;
  int64_t oh = static_cast<int64_t>(std::llround(th));
  int64_t ow = static_cast<int64_t>(std::llround(tw));
  BSR_CHECK(std::abs(th - static_cast<double>(oh)) < 1e-9 &&
                std::abs(tw - static_cast<double>(ow)) < 1e-9,
            "bicubic_scale: factor " << factor
                                     << " does not give integer extents for "
                                     << shape_str(xs));
  return bicubic_resize(x, oh, ow);
}

}  // namespace blindsr
