#include "blindsr/conv.hpp"

#include <algorithm>
#include <cstring>

#include "blindsr/common.hpp"
#include "blindsr/ops.hpp"

namespace blindsr {

namespace {

// Maps a possibly out-of-range coordinate into [0,n) per the padding mode.
// Returns -1 for zero padding outside the support.
inline int64_t map_coord(int64_t i, int64_t n, PaddingMode mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case PaddingMode::Zero:
      return -1;
    case PaddingMode::Replicate:
      return i < 0 ? 0 : n - 1;
    case PaddingMode::Circular: {
      int64_t m = i % n;
      return m < 0 ? m + n : m;
    }
  }
  return -1;
}

// Fills xp [hp, wp] with the padded plane of src [h, w].
void pad_plane(const double* src, double* xp, int64_t h, int64_t w, int64_t ph,
               int64_t pw, PaddingMode mode) {
  int64_t hp = h + 2 * ph, wp = w + 2 * pw;
  for (int64_t i = 0; i < hp; ++i) {
    int64_t si = map_coord(i - ph, h, mode);
    double* dst = xp + i * wp;
    if (si < 0) {
      std::memset(dst, 0, static_cast<size_t>(wp) * sizeof(double));
      continue;
    }
    const double* srow = src + si * w;
    for (int64_t j = 0; j < pw; ++j) {
      int64_t sj = map_coord(j - pw, w, mode);
      dst[j] = sj < 0 ? 0.0 : srow[sj];
    }
    std::memcpy(dst + pw, srow, static_cast<size_t>(w) * sizeof(double));
    for (int64_t j = 0; j < pw; ++j) {
      int64_t sj = map_coord(w + j, w, mode);
      dst[pw + w + j] = sj < 0 ? 0.0 : srow[sj];
    }
  }
}

// Folds a padded-plane gradient back onto the unpadded plane (the transpose
// of pad_plane).
void fold_plane(const double* gxp, double* gx, int64_t h, int64_t w,
                int64_t ph, int64_t pw, PaddingMode mode) {
  int64_t hp = h + 2 * ph, wp = w + 2 * pw;
  for (int64_t i = 0; i < hp; ++i) {
    int64_t si = map_coord(i - ph, h, mode);
    if (si < 0) continue;
    const double* grow = gxp + i * wp;
    double* drow = gx + si * w;
    for (int64_t j = 0; j < wp; ++j) {
      int64_t sj = map_coord(j - pw, w, mode);
      if (sj >= 0) drow[sj] += grow[j];
    }
  }
}

struct ConvDims {
  int64_t b, cin, h, w;
  int64_t cout, cin_g, kh, kw;
  int64_t ph, pw, oh, ow;
  int64_t hp, wp;
  int stride, groups;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int pad_h,
                   int pad_w, int groups) {
  BSR_CHECK(xs.size() == 4, "conv2d: input must be [b,c,h,w], got "
                                << shape_str(xs));
  BSR_CHECK(ws.size() == 4, "conv2d: weight must be [co,ci/g,kh,kw], got "
                                << shape_str(ws));
  ConvDims d;
  d.b = xs[0];
  d.cin = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = ws[0];
  d.cin_g = ws[1];
  d.kh = ws[2];
  d.kw = ws[3];
  d.stride = stride;
  d.groups = groups;
  BSR_CHECK(stride >= 1, "conv2d: stride must be >= 1");
  BSR_CHECK(groups >= 1 && d.cin % groups == 0 && d.cout % groups == 0,
            "conv2d: channels (" << d.cin << "," << d.cout
                                 << ") not divisible by groups " << groups);
  BSR_CHECK(d.cin / groups == d.cin_g,
            "conv2d: weight expects " << d.cin_g * groups
                                      << " input channels, input has " << d.cin);
  d.ph = pad_h;
  d.pw = pad_w;
  d.hp = d.h + 2 * d.ph;
  d.wp = d.w + 2 * d.pw;
  d.oh = (d.h + 2 * d.ph - d.kh) / stride + 1;
  d.ow = (d.w + 2 * d.pw - d.kw) / stride + 1;
  BSR_CHECK(d.oh >= 1 && d.ow >= 1, "conv2d: kernel larger than padded input");
  return d;
}

// out[co] += sum_ci,kh,kw w * xp, one batch item. xp is [cin,hp,wp].
void conv_forward_item(const ConvDims& d, const double* xp, const double* wv,
                       double* out) {
  int64_t cout_g = d.cout / d.groups;
  for (int64_t g = 0; g < d.groups; ++g) {
    for (int64_t co = g * cout_g; co < (g + 1) * cout_g; ++co) {
      double* oplane = out + co * d.oh * d.ow;
      for (int64_t ci = 0; ci < d.cin_g; ++ci) {
        const double* xplane = xp + (g * d.cin_g + ci) * d.hp * d.wp;
        const double* wk = wv + ((co * d.cin_g) + ci) * d.kh * d.kw;
        for (int64_t r = 0; r < d.kh; ++r) {
          for (int64_t c = 0; c < d.kw; ++c) {
            double wval = wk[r * d.kw + c];
            if (wval == 0.0) continue;
            for (int64_t i = 0; i < d.oh; ++i) {
              const double* xrow = xplane + (i * d.stride + r) * d.wp + c;
              double* orow = oplane + i * d.ow;
              if (d.stride == 1) {
                for (int64_t j = 0; j < d.ow; ++j) orow[j] += wval * xrow[j];
              } else {
                for (int64_t j = 0; j < d.ow; ++j)
                  orow[j] += wval * xrow[j * d.stride];
              }
            }
          }
        }
      }
    }
  }
}

// gxp[ci] += sum_co w * gout (transpose of conv_forward_item).
void conv_input_adjoint_item(const ConvDims& d, const double* go,
                             const double* wv, double* gxp) {
  int64_t cout_g = d.cout / d.groups;
  for (int64_t g = 0; g < d.groups; ++g) {
    for (int64_t co = g * cout_g; co < (g + 1) * cout_g; ++co) {
      const double* gplane = go + co * d.oh * d.ow;
      for (int64_t ci = 0; ci < d.cin_g; ++ci) {
        double* xplane = gxp + (g * d.cin_g + ci) * d.hp * d.wp;
        const double* wk = wv + ((co * d.cin_g) + ci) * d.kh * d.kw;
        for (int64_t r = 0; r < d.kh; ++r) {
          for (int64_t c = 0; c < d.kw; ++c) {
            double wval = wk[r * d.kw + c];
            if (wval == 0.0) continue;
            for (int64_t i = 0; i < d.oh; ++i) {
              double* xrow = xplane + (i * d.stride + r) * d.wp + c;
              const double* grow = gplane + i * d.ow;
              if (d.stride == 1) {
                for (int64_t j = 0; j < d.ow; ++j) xrow[j] += wval * grow[j];
              } else {
                for (int64_t j = 0; j < d.ow; ++j)
                  xrow[j * d.stride] += wval * grow[j];
              }
            }
          }
        }
      }
    }
  }
}

// gw += xp (*) gout, one batch item.
void conv_weight_grad_item(const ConvDims& d, const double* xp,
                           const double* go, double* gw) {
  int64_t cout_g = d.cout / d.groups;
  for (int64_t g = 0; g < d.groups; ++g) {
    for (int64_t co = g * cout_g; co < (g + 1) * cout_g; ++co) {
      const double* gplane = go + co * d.oh * d.ow;
      for (int64_t ci = 0; ci < d.cin_g; ++ci) {
        const double* xplane = xp + (g * d.cin_g + ci) * d.hp * d.wp;
        double* wk = gw + ((co * d.cin_g) + ci) * d.kh * d.kw;
        for (int64_t r = 0; r < d.kh; ++r) {
          for (int64_t c = 0; c < d.kw; ++c) {
            double acc = 0.0;
            for (int64_t i = 0; i < d.oh; ++i) {
              const double* xrow = xplane + (i * d.stride + r) * d.wp + c;
              const double* grow = gplane + i * d.ow;
              if (d.stride == 1) {
                for (int64_t j = 0; j < d.ow; ++j) acc += xrow[j] * grow[j];
              } else {
                for (int64_t j = 0; j < d.ow; ++j)
                  acc += xrow[j * d.stride] * grow[j];
              }
            }
            wk[r * d.kw + c] += acc;
          }
        }
      }
    }
  }
}

std::vector<double> pad_batch(const double* x, const ConvDims& d,
                              PaddingMode mode) {
  std::vector<double> xp(
      static_cast<size_t>(d.b * d.cin * d.hp * d.wp));
  for (int64_t bi = 0; bi < d.b; ++bi)
    for (int64_t ci = 0; ci < d.cin; ++ci)
      pad_plane(x + (bi * d.cin + ci) * d.h * d.w,
                xp.data() + (bi * d.cin + ci) * d.hp * d.wp, d.h, d.w, d.ph,
                d.pw, mode);
  return xp;
}

}  // namespace

Tensor conv2d_padded(const Tensor& x, const Tensor& w, int stride, int pad_h,
                     int pad_w, PaddingMode mode, int groups) {
  ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad_h, pad_w, groups);
  std::vector<double> xp = pad_batch(x.data(), d, mode);

  std::vector<double> out(static_cast<size_t>(d.b * d.cout * d.oh * d.ow), 0.0);
  for (int64_t bi = 0; bi < d.b; ++bi)
    conv_forward_item(d, xp.data() + bi * d.cin * d.hp * d.wp, w.data(),
                      out.data() + bi * d.cout * d.oh * d.ow);

  Shape os = {d.b, d.cout, d.oh, d.ow};
  return make_op_result(
      std::move(os), std::move(out), "conv2d", {x, w},
      [d, mode, xp = std::move(xp)](TapeNode& node) {
        const auto& xi = node.inputs[0];
        const auto& wi = node.inputs[1];
        const double* go = node.out->grad.data();
        if (xi->requires_grad) {
          std::vector<double> gx(xi->data.size(), 0.0);
          std::vector<double> gxp(static_cast<size_t>(d.cin * d.hp * d.wp));
          for (int64_t bi = 0; bi < d.b; ++bi) {
            std::fill(gxp.begin(), gxp.end(), 0.0);
            conv_input_adjoint_item(d, go + bi * d.cout * d.oh * d.ow,
                                    wi->data.data(), gxp.data());
            for (int64_t ci = 0; ci < d.cin; ++ci)
              fold_plane(gxp.data() + ci * d.hp * d.wp,
                         gx.data() + (bi * d.cin + ci) * d.h * d.w, d.h, d.w,
                         d.ph, d.pw, mode);
          }
          accumulate_grad(xi, gx.data(), static_cast<int64_t>(gx.size()));
        }
        if (wi->requires_grad) {
          std::vector<double> gw(wi->data.size(), 0.0);
          for (int64_t bi = 0; bi < d.b; ++bi)
            conv_weight_grad_item(d, xp.data() + bi * d.cin * d.hp * d.wp,
                                  go + bi * d.cout * d.oh * d.ow, gw.data());
          accumulate_grad(wi, gw.data(), static_cast<int64_t>(gw.size()));
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, PaddingMode mode,
              int groups) {
  const Shape& ws = w.shape();
  BSR_CHECK(ws.size() == 4, "conv2d: weight must be [co,ci/g,kh,kw]");
  BSR_CHECK(ws[2] % 2 == 1 && ws[3] % 2 == 1,
            "conv2d: kernel extents must be odd for same-size padding");
  return conv2d_padded(x, w, stride, static_cast<int>((ws[2] - 1) / 2),
                       static_cast<int>((ws[3] - 1) / 2), mode, groups);
}

Tensor conv2d_input_adjoint(const Tensor& gout, const Tensor& w,
                            const Shape& x_shape, int stride, int pad_h,
                            int pad_w, PaddingMode mode, int groups) {
  ConvDims d = conv_dims(x_shape, w.shape(), stride, pad_h, pad_w, groups);
  BSR_CHECK(gout.shape() == Shape({d.b, d.cout, d.oh, d.ow}),
            "conv2d_input_adjoint: gout shape " << shape_str(gout.shape())
                                                << " does not match operator");
  std::vector<double> gx(static_cast<size_t>(shape_numel(x_shape)), 0.0);
  std::vector<double> gxp(static_cast<size_t>(d.cin * d.hp * d.wp));
  for (int64_t bi = 0; bi < d.b; ++bi) {
    std::fill(gxp.begin(), gxp.end(), 0.0);
    conv_input_adjoint_item(d, gout.data() + bi * d.cout * d.oh * d.ow,
                            w.data(), gxp.data());
    for (int64_t ci = 0; ci < d.cin; ++ci)
      fold_plane(gxp.data() + ci * d.hp * d.wp,
                 gx.data() + (bi * d.cin + ci) * d.h * d.w, d.h, d.w, d.ph,
                 d.pw, mode);
  }
  return Tensor::from_data(x_shape, std::move(gx));
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, int stride,
                        int padding, int output_padding) {
  const Shape& ws = w.shape();
  BSR_CHECK(ws.size() == 4, "conv_transpose2d: weight must be [ci,co,kh,kw]");
  BSR_CHECK(x.rank() == 4, "conv_transpose2d: input must be [b,c,h,w]");
  BSR_CHECK(x.extent(1) == ws[0],
            "conv_transpose2d: channel mismatch " << x.extent(1) << " vs "
                                                  << ws[0]);
  int64_t k = ws[2];
  BSR_CHECK(ws[3] == k, "conv_transpose2d: square kernels only");
  int q = static_cast<int>(k) - 1 - padding;
  BSR_CHECK(q >= 0, "conv_transpose2d: padding too large for kernel");
  int64_t h = x.extent(2), wth = x.extent(3);
  int64_t sh = (h - 1) * stride + 1 + output_padding;
  int64_t sw = (wth - 1) * stride + 1 + output_padding;
  Tensor stuffed = zero_upsample2d(x, stride, sh, sw);
  Tensor wconv = transpose_axes(flip_last2(w), 0, 1);
  return conv2d_padded(stuffed, wconv, 1, q, q, PaddingMode::Zero, 1);
}

Tensor decimate2d(const Tensor& x, int s) {
  BSR_CHECK(s >= 1, "decimate2d: s must be >= 1");
  BSR_CHECK(x.rank() >= 2, "decimate2d: rank < 2");
  const Shape& xs = x.shape();
  int64_t h = xs[xs.size() - 2], w = xs.back();
  int64_t planes = x.numel() / (h * w);
  int64_t oh = (h + s - 1) / s, ow = (w + s - 1) / s;
  Shape os = xs;
  os[os.size() - 2] = oh;
  os.back() = ow;
  std::vector<double> out(static_cast<size_t>(planes * oh * ow));
  const double* src = x.data();
  for (int64_t p = 0; p < planes; ++p) {
    const double* sp = src + p * h * w;
    double* dp = out.data() + p * oh * ow;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) dp[i * ow + j] = sp[i * s * w + j * s];
  }
  return make_op_result(
      std::move(os), std::move(out), "decimate2d", {x},
      [planes, h, w, oh, ow, s](TapeNode& node) {
        const auto& xi = node.inputs[0];
        if (!xi->requires_grad) return;
        const double* go = node.out->grad.data();
        std::vector<double> gx(xi->data.size(), 0.0);
        for (int64_t p = 0; p < planes; ++p) {
          const double* gp = go + p * oh * ow;
          double* xg = gx.data() + p * h * w;
          for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j)
              xg[i * s * w + j * s] += gp[i * ow + j];
        }
        accumulate_grad(xi, gx.data(), static_cast<int64_t>(gx.size()));
      });
}

Tensor zero_upsample2d(const Tensor& x, int s, int64_t out_h, int64_t out_w) {
  BSR_CHECK(s >= 1, "zero_upsample2d: s must be >= 1");
  BSR_CHECK(x.rank() >= 2, "zero_upsample2d: rank < 2");
  const Shape& xs = x.shape();
  int64_t h = xs[xs.size() - 2], w = xs.back();
  BSR_CHECK(out_h >= (h - 1) * s + 1 && out_w >= (w - 1) * s + 1,
            "zero_upsample2d: output extents too small");
  int64_t planes = x.numel() / (h * w);
  Shape os = xs;
  os[os.size() - 2] = out_h;
  os.back() = out_w;
  std::vector<double> out(static_cast<size_t>(planes * out_h * out_w), 0.0);
  const double* src = x.data();
  for (int64_t p = 0; p < planes; ++p) {
    const double* sp = src + p * h * w;
    double* dp = out.data() + p * out_h * out_w;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) dp[i * s * out_w + j * s] = sp[i * w + j];
  }
  return make_op_result(
      std::move(os), std::move(out), "zero_upsample2d", {x},
      [planes, h, w, out_h, out_w, s](TapeNode& node) {
        const auto& xi = node.inputs[0];
        if (!xi->requires_grad) return;
        const double* go = node.out->grad.data();
        std::vector<double> gx(xi->data.size());
        for (int64_t p = 0; p < planes; ++p) {
          const double* gp = go + p * out_h * out_w;
          double* xg = gx.data() + p * h * w;
          for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
              xg[i * w + j] = gp[i * s * out_w + j * s];
        }
        accumulate_grad(xi, gx.data(), static_cast<int64_t>(gx.size()));
      });
}

}  // namespace blindsr
