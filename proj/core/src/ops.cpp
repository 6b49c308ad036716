#include "blindsr/ops.hpp"

#include <algorithm>
#include <cmath>

#include "blindsr/common.hpp"

namespace blindsr {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Strides for indexing a tensor of shape `in` as if broadcast to `out`
// (trailing-dimension alignment, stride 0 on broadcast axes).
std::vector<int64_t> bcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> nat = row_major_strides(in);
  std::vector<int64_t> st(out.size(), 0);
  int64_t off = static_cast<int64_t>(out.size()) - static_cast<int64_t>(in.size());
  for (size_t d = 0; d < in.size(); ++d) {
    size_t od = static_cast<size_t>(off) + d;
    if (in[d] == out[od]) {
      st[od] = nat[d];
    } else {
      BSR_CHECK(in[d] == 1, "broadcast error: " << shape_str(in) << " vs "
                                                << shape_str(out));
    }
  }
  return st;
}

// Walks every element of `out_shape`, feeding the linear offsets of the two
// broadcast operands.
template <class F>
void for_each_bcast2(const Shape& out_shape, const std::vector<int64_t>& sa,
                     const std::vector<int64_t>& sb, F&& f) {
  int64_t n = shape_numel(out_shape);
  int r = static_cast<int>(out_shape.size());
  if (r == 0) {
    if (n > 0) f(0, 0, 0);
    return;
  }
  std::vector<int64_t> coord(static_cast<size_t>(r), 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (int d = r - 1; d >= 0; --d) {
      ++coord[d];
      ia += sa[d];
      ib += sb[d];
      if (coord[d] < out_shape[d]) break;
      ia -= sa[d] * out_shape[d];
      ib -= sb[d] * out_shape[d];
      coord[d] = 0;
    }
  }
}

using Fn2 = double (*)(double, double);

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fn2 f,
                 Fn2 dfda, Fn2 dfdb) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  int64_t n = shape_numel(os);
  std::vector<double> out(static_cast<size_t>(n));
  const double* da = a.data();
  const double* db = b.data();
  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < n; ++i) out[i] = f(da[i], db[i]);
  } else {
    auto sa = bcast_strides(a.shape(), os);
    auto sb = bcast_strides(b.shape(), os);
    for_each_bcast2(os, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
      out[i] = f(da[ia], db[ib]);
    });
  }
  Shape os_copy = os;
  return make_op_result(
      std::move(os_copy), std::move(out), name, {a, b},
      [os, dfda, dfdb](TapeNode& node) {
        const auto& ai = node.inputs[0];
        const auto& bi = node.inputs[1];
        const double* av = ai->data.data();
        const double* bv = bi->data.data();
        const double* go = node.out->grad.data();
        std::vector<double> ga, gb;
        if (ai->requires_grad) ga.assign(ai->data.size(), 0.0);
        if (bi->requires_grad) gb.assign(bi->data.size(), 0.0);
        auto sa = bcast_strides(ai->shape, os);
        auto sb = bcast_strides(bi->shape, os);
        for_each_bcast2(os, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
          double g = go[i];
          if (!ga.empty()) ga[ia] += g * dfda(av[ia], bv[ib]);
          if (!gb.empty()) gb[ib] += g * dfdb(av[ia], bv[ib]);
        });
        if (!ga.empty())
          accumulate_grad(ai, ga.data(), static_cast<int64_t>(ga.size()));
        if (!gb.empty())
          accumulate_grad(bi, gb.data(), static_cast<int64_t>(gb.size()));
      });
}

// Unary op; derivative may use the input x and/or the output y.
template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* da = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = f(da[i]);
  return make_op_result(
      a.shape(), std::move(out), name, {a}, [n, df](TapeNode& node) {
        const auto& ai = node.inputs[0];
        if (!ai->requires_grad) return;
        const double* x = ai->data.data();
        const double* y = node.out->data.data();
        const double* go = node.out->grad.data();
        std::vector<double> ga(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) ga[i] = go[i] * df(x[i], y[i]);
        accumulate_grad(ai, ga.data(), n);
      });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    int64_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    BSR_CHECK(ea == eb || ea == 1 || eb == 1,
              "broadcast error: " << shape_str(a) << " vs " << shape_str(b));
    out[r - 1 - i] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* da = a.data();
  for (int64_t i = 0; i < n; ++i)
    out[i] = da[i] > 0.0 ? da[i] : slope * da[i];
  return make_op_result(
      a.shape(), std::move(out), "leaky_relu", {a}, [n, slope](TapeNode& node) {
        const auto& ai = node.inputs[0];
        if (!ai->requires_grad) return;
        const double* x = ai->data.data();
        const double* go = node.out->grad.data();
        std::vector<double> ga(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i)
          ga[i] = go[i] * (x[i] > 0.0 ? 1.0 : slope);
        accumulate_grad(ai, ga.data(), n);
      });
}

Tensor gelu(const Tensor& a) {
  // exact form, 0.5 x (1 + erf(x/sqrt(2)))
  return unary_op(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor elementwise(EwOp op, const Tensor& a, const std::optional<Tensor>& b) {
  auto want_binary = [&](bool yes) {
    BSR_CHECK(b.has_value() == yes, "elementwise: wrong operand count");
  };
  switch (op) {
    case EwOp::Add: want_binary(true); return add(a, *b);
    case EwOp::Sub: want_binary(true); return sub(a, *b);
    case EwOp::Mul: want_binary(true); return mul(a, *b);
    case EwOp::Div: want_binary(true); return divide(a, *b);
    case EwOp::Exp: want_binary(false); return exp(a);
    case EwOp::Sqrt: want_binary(false); return sqrt(a);
    case EwOp::LeakyRelu: want_binary(false); return leaky_relu(a);
    case EwOp::Gelu: want_binary(false); return gelu(a);
    case EwOp::Sigmoid: want_binary(false); return sigmoid(a);
  }
  throw std::runtime_error("elementwise: unknown op");
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      "add_scalar", a, [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_op(
      "mul_scalar", a, [c](double x) { return x * c; },
      [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor abs_val(const Tensor& a) {
  return unary_op(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.vec()) s += v;
  int64_t n = a.numel();
  return make_op_result({}, {s}, "sum", {a}, [n](TapeNode& node) {
    const auto& ai = node.inputs[0];
    if (!ai->requires_grad) return;
    double g = node.out->grad[0];
    std::vector<double> ga(static_cast<size_t>(n), g);
    accumulate_grad(ai, ga.data(), n);
  });
}

Tensor mean(const Tensor& a) {
  BSR_CHECK(a.numel() > 0, "mean of empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, int64_t axis, bool keepdims) {
  int64_t r = a.rank();
  if (axis < 0) axis += r;
  BSR_CHECK(axis >= 0 && axis < r, "sum_axis: axis out of range");
  const Shape& s = a.shape();
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (int64_t d = axis + 1; d < r; ++d) inner *= s[static_cast<size_t>(d)];
  int64_t m = s[static_cast<size_t>(axis)];

  Shape os;
  for (int64_t d = 0; d < r; ++d) {
    if (d == axis) {
      if (keepdims) os.push_back(1);
    } else {
      os.push_back(s[static_cast<size_t>(d)]);
    }
  }

  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  const double* da = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    const double* base = da + o * m * inner;
    double* ob = out.data() + o * inner;
    for (int64_t j = 0; j < m; ++j) {
      const double* row = base + j * inner;
      for (int64_t i = 0; i < inner; ++i) ob[i] += row[i];
    }
  }
  return make_op_result(
      std::move(os), std::move(out), "sum_axis", {a},
      [outer, m, inner](TapeNode& node) {
        const auto& ai = node.inputs[0];
        if (!ai->requires_grad) return;
        const double* go = node.out->grad.data();
        std::vector<double> ga(ai->data.size());
        for (int64_t o = 0; o < outer; ++o) {
          const double* gb = go + o * inner;
          double* base = ga.data() + o * m * inner;
          for (int64_t j = 0; j < m; ++j) {
            double* row = base + j * inner;
            for (int64_t i = 0; i < inner; ++i) row[i] = gb[i];
          }
        }
        accumulate_grad(ai, ga.data(), static_cast<int64_t>(ga.size()));
      });
}

Tensor mean_axis(const Tensor& a, int64_t axis, bool keepdims) {
  int64_t r = a.rank();
  int64_t ax = axis < 0 ? axis + r : axis;
  BSR_CHECK(ax >= 0 && ax < r, "mean_axis: axis out of range");
  double m = static_cast<double>(a.shape()[static_cast<size_t>(ax)]);
  return mul_scalar(sum_axis(a, axis, keepdims), 1.0 / m);
}

// ---- matmul ----------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n]
void mm_nn(const double* A, const double* B, double* C, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    const double* a = A + i * k;
    for (int64_t p = 0; p < k; ++p) {
      double av = a[p];
      const double* b = B + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T  (i.e. C = G * B^T)
void mm_nt(const double* G, const double* B, double* C, int64_t m, int64_t n,
           int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const double* g = G + i * n;
    double* c = C + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double* b = B + p * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += g[j] * b[j];
      c[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
void mm_tn(const double* A, const double* G, double* C, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    const double* g = G + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double av = a[p];
      double* c = C + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * g[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  BSR_CHECK(a.rank() >= 1 && b.rank() >= 1, "matmul: rank-0 operand");
  bool a_vec = a.rank() == 1;
  bool b_vec = b.rank() == 1;
  Shape as = a.shape(), bs = b.shape();
  if (a_vec) as.insert(as.begin(), 1);
  if (b_vec) bs.push_back(1);

  int64_t m = as[as.size() - 2], ka = as.back();
  int64_t kb = bs[bs.size() - 2], n = bs.back();
  BSR_CHECK(ka == kb, "matmul: inner extents disagree, " << shape_str(a.shape())
                                                         << " x "
                                                         << shape_str(b.shape()));
  Shape abatch(as.begin(), as.end() - 2), bbatch(bs.begin(), bs.end() - 2);
  Shape batch = broadcast_shape(abatch, bbatch);
  int64_t nbatch = shape_numel(batch);

  auto sa = bcast_strides(abatch, batch);
  auto sb = bcast_strides(bbatch, batch);
  // strides above count matrices, scale to elements
  for (auto& v : sa) v *= m * ka;
  for (auto& v : sb) v *= ka * n;

  Shape os = batch;
  os.push_back(m);
  os.push_back(n);
  std::vector<double> out(static_cast<size_t>(nbatch * m * n), 0.0);
  const double* da = a.data();
  const double* db = b.data();
  for_each_bcast2(batch, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
    mm_nn(da + ia, db + ib, out.data() + i * m * n, m, ka, n);
  });

  // final shape with numpy-style squeeze of promoted vector dims
  Shape final_shape = os;
  if (a_vec) final_shape.erase(final_shape.end() - 2);
  if (b_vec) final_shape.pop_back();

  int64_t k = ka;
  return make_op_result(
      std::move(final_shape), std::move(out), "matmul", {a, b},
      [batch, sa, sb, m, k, n](TapeNode& node) {
        const auto& ai = node.inputs[0];
        const auto& bi = node.inputs[1];
        const double* av = ai->data.data();
        const double* bv = bi->data.data();
        const double* go = node.out->grad.data();
        std::vector<double> ga, gb;
        if (ai->requires_grad) ga.assign(ai->data.size(), 0.0);
        if (bi->requires_grad) gb.assign(bi->data.size(), 0.0);
        for_each_bcast2(batch, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
          const double* g = go + i * m * n;
          if (!ga.empty()) mm_nt(g, bv + ib, ga.data() + ia, m, n, k);
          if (!gb.empty()) mm_tn(av + ia, g, gb.data() + ib, m, k, n);
        });
        if (!ga.empty())
          accumulate_grad(ai, ga.data(), static_cast<int64_t>(ga.size()));
        if (!gb.empty())
          accumulate_grad(bi, gb.data(), static_cast<int64_t>(gb.size()));
      });
}

Tensor softmax_lastdim(const Tensor& a) {
  BSR_CHECK(a.rank() >= 1, "softmax: needs rank >= 1");
  int64_t L = a.shape().back();
  int64_t rows = a.numel() / L;
  std::vector<double> out(static_cast<size_t>(a.numel()));
  const double* da = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = da + r * L;
    double* y = out.data() + r * L;
    double mx = x[0];
    for (int64_t i = 1; i < L; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int64_t i = 0; i < L; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    double inv = 1.0 / z;
    for (int64_t i = 0; i < L; ++i) y[i] *= inv;
  }
  return make_op_result(
      a.shape(), std::move(out), "softmax", {a}, [rows, L](TapeNode& node) {
        const auto& ai = node.inputs[0];
        if (!ai->requires_grad) return;
        const double* p = node.out->data.data();
        const double* go = node.out->grad.data();
        std::vector<double> ga(ai->data.size());
        for (int64_t r = 0; r < rows; ++r) {
          const double* pr = p + r * L;
          const double* gr = go + r * L;
          double dot = 0.0;
          for (int64_t i = 0; i < L; ++i) dot += gr[i] * pr[i];
          double* out_r = ga.data() + r * L;
          for (int64_t i = 0; i < L; ++i) out_r[i] = pr[i] * (gr[i] - dot);
        }
        accumulate_grad(ai, ga.data(), static_cast<int64_t>(ga.size()));
      });
}

// ---- shape ops --------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  // one extent may be -1 (inferred)
  int64_t known = 1, infer = -1;
  for (size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == -1) {
      BSR_CHECK(infer == -1, "reshape: more than one -1 extent");
      infer = static_cast<int64_t>(d);
    } else {
      known *= shape[d];
    }
  }
  if (infer >= 0) shape[static_cast<size_t>(infer)] = a.numel() / known;
  BSR_CHECK(shape_numel(shape) == a.numel(),
            "reshape: cannot view " << shape_str(a.shape()) << " as "
                                    << shape_str(shape));
  std::vector<double> out(a.vec());
  return make_op_result(std::move(shape), std::move(out), "reshape", {a},
                        [](TapeNode& node) {
                          const auto& ai = node.inputs[0];
                          if (!ai->requires_grad) return;
                          accumulate_grad(ai, node.out->grad.data(),
                                          static_cast<int64_t>(node.out->grad.size()));
                        });
}

namespace {

void permute2_copy(const double* src, double* dst, const Shape& in_shape,
                   int64_t ax0, int64_t ax1) {
  // dst has in_shape with ax0/ax1 swapped; iterate dst, gather from src
  Shape os = in_shape;
  std::swap(os[static_cast<size_t>(ax0)], os[static_cast<size_t>(ax1)]);
  auto in_str = row_major_strides(in_shape);
  std::swap(in_str[static_cast<size_t>(ax0)], in_str[static_cast<size_t>(ax1)]);
  int r = static_cast<int>(os.size());
  int64_t n = shape_numel(os);
  std::vector<int64_t> coord(static_cast<size_t>(r), 0);
  int64_t isrc = 0;
  for (int64_t i = 0; i < n; ++i) {
    dst[i] = src[isrc];
    for (int d = r - 1; d >= 0; --d) {
      ++coord[d];
      isrc += in_str[d];
      if (coord[d] < os[d]) break;
      isrc -= in_str[d] * os[d];
      coord[d] = 0;
    }
  }
}

}  // namespace

Tensor transpose_axes(const Tensor& a, int64_t ax0, int64_t ax1) {
  int64_t r = a.rank();
  if (ax0 < 0) ax0 += r;
  if (ax1 < 0) ax1 += r;
  BSR_CHECK(ax0 >= 0 && ax0 < r && ax1 >= 0 && ax1 < r,
            "transpose_axes: axis out of range");
  Shape os = a.shape();
  std::swap(os[static_cast<size_t>(ax0)], os[static_cast<size_t>(ax1)]);
  std::vector<double> out(static_cast<size_t>(a.numel()));
  permute2_copy(a.data(), out.data(), a.shape(), ax0, ax1);
  Shape in_shape = a.shape();
  return make_op_result(
      std::move(os), std::move(out), "transpose", {a},
      [in_shape, ax0, ax1](TapeNode& node) {
        const auto& ai = node.inputs[0];
        if (!ai->requires_grad) return;
        Shape os2 = in_shape;
        std::swap(os2[static_cast<size_t>(ax0)], os2[static_cast<size_t>(ax1)]);
        std::vector<double> ga(ai->data.size());
        permute2_copy(node.out->grad.data(), ga.data(), os2, ax0, ax1);
        accumulate_grad(ai, ga.data(), static_cast<int64_t>(ga.size()));
      });
}

Tensor slice_axis(const Tensor& a, int64_t axis, int64_t start, int64_t len) {
  int64_t r = a.rank();
  if (axis < 0) axis += r;
  BSR_CHECK(axis >= 0 && axis < r, "slice_axis: axis out of range");
  const Shape& s = a.shape();
  int64_t m = s[static_cast<size_t>(axis)];
  BSR_CHECK(start >= 0 && len >= 0 && start + len <= m,
            "slice_axis: range [" << start << "," << start + len
                                  << ") out of extent " << m);
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (int64_t d = axis + 1; d < r; ++d) inner *= s[static_cast<size_t>(d)];

  Shape os = s;
  os[static_cast<size_t>(axis)] = len;
  std::vector<double> out(static_cast<size_t>(outer * len * inner));
  const double* da = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    const double* src = da + (o * m + start) * inner;
    double* dst = out.data() + o * len * inner;
    std::copy(src, src + len * inner, dst);
  }
  return make_op_result(
      std::move(os), std::move(out), "slice", {a},
      [outer, m, inner, start, len](TapeNode& node) {
        const auto& ai = node.inputs[0];
        if (!ai->requires_grad) return;
        const double* go = node.out->grad.data();
        std::vector<double> ga(ai->data.size(), 0.0);
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = go + o * len * inner;
          double* dst = ga.data() + (o * m + start) * inner;
          for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
        accumulate_grad(ai, ga.data(), static_cast<int64_t>(ga.size()));
      });
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  BSR_CHECK(!parts.empty(), "concat: no inputs");
  int64_t r = parts[0].rank();
  if (axis < 0) axis += r;
  BSR_CHECK(axis >= 0 && axis < r, "concat: axis out of range");
  Shape os = parts[0].shape();
  int64_t total = 0;
  std::vector<int64_t> extents;
  for (const Tensor& p : parts) {
    BSR_CHECK(p.rank() == r, "concat: rank mismatch");
    for (int64_t d = 0; d < r; ++d) {
      if (d == axis) continue;
      BSR_CHECK(p.shape()[static_cast<size_t>(d)] == os[static_cast<size_t>(d)],
                "concat: shape mismatch " << shape_str(p.shape()));
    }
    extents.push_back(p.extent(axis));
    total += p.extent(axis);
  }
  os[static_cast<size_t>(axis)] = total;

  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= os[static_cast<size_t>(d)];
  for (int64_t d = axis + 1; d < r; ++d) inner *= os[static_cast<size_t>(d)];

  std::vector<double> out(static_cast<size_t>(outer * total * inner));
  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    int64_t m = extents[pi];
    const double* src = parts[pi].data();
    for (int64_t o = 0; o < outer; ++o) {
      double* dst = out.data() + (o * total + off) * inner;
      std::copy(src + o * m * inner, src + (o + 1) * m * inner, dst);
    }
    off += m;
  }

  // make_op_result takes an initializer_list; build the node manually for the
  // variadic case.
  bool rg = false;
  if (grad_enabled()) {
    for (const Tensor& p : parts) rg = rg || p.requires_grad();
  }
  Tensor result = Tensor::from_data(std::move(os), std::move(out), rg);
  if (finite_checks_enabled()) check_all_finite(result, "concat");
  if (rg) {
    TapeNode node;
    node.op = "concat";
    for (const Tensor& p : parts) node.inputs.push_back(p.impl());
    node.out = result.impl();
    node.backward = [outer, total, inner, extents](TapeNode& n) {
      const double* go = n.out->grad.data();
      int64_t off2 = 0;
      for (size_t pi = 0; pi < n.inputs.size(); ++pi) {
        const auto& ai = n.inputs[pi];
        int64_t m = extents[pi];
        if (ai->requires_grad) {
          std::vector<double> ga(ai->data.size());
          for (int64_t o = 0; o < outer; ++o) {
            const double* src = go + (o * total + off2) * inner;
            std::copy(src, src + m * inner, ga.data() + o * m * inner);
          }
          accumulate_grad(ai, ga.data(), static_cast<int64_t>(ga.size()));
        }
        off2 += m;
      }
    };
    result.impl()->tape_index = static_cast<int64_t>(Tape::current().nodes.size());
    Tape::current().nodes.push_back(std::move(node));
  }
  return result;
}

Tensor flip_last2(const Tensor& a) {
  BSR_CHECK(a.rank() >= 2, "flip_last2: rank < 2");
  const Shape& s = a.shape();
  int64_t h = s[s.size() - 2], w = s.back();
  int64_t planes = a.numel() / (h * w);
  std::vector<double> out(static_cast<size_t>(a.numel()));
  const double* da = a.data();
  auto flip = [h, w, planes](const double* src, double* dst) {
    for (int64_t p = 0; p < planes; ++p) {
      const double* sp = src + p * h * w;
      double* dp = dst + p * h * w;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
          dp[i * w + j] = sp[(h - 1 - i) * w + (w - 1 - j)];
    }
  };
  flip(da, out.data());
  return make_op_result(a.shape(), std::move(out), "flip_last2", {a},
                        [flip](TapeNode& node) {
                          const auto& ai = node.inputs[0];
                          if (!ai->requires_grad) return;
                          std::vector<double> ga(ai->data.size());
                          flip(node.out->grad.data(), ga.data());
                          accumulate_grad(ai, ga.data(),
                                          static_cast<int64_t>(ga.size()));
                        });
}

// ---- composites -------------------------------------------------------------

Tensor layer_norm_channel(const Tensor& x, double eps) {
  BSR_CHECK(x.rank() == 4, "layer_norm_channel expects [b,c,h,w]");
  Tensor mu = mean_axis(x, 1, true);
  Tensor xc = sub(x, mu);
  Tensor var = mean_axis(mul(xc, xc), 1, true);
  return divide(xc, sqrt(add_scalar(var, eps)));
}

Tensor l2_normalize_lastdim(const Tensor& x, double eps) {
  Tensor n2 = sum_axis(mul(x, x), -1, true);
  return divide(x, sqrt(add_scalar(n2, eps)));
}

Tensor global_avg_pool(const Tensor& x) {
  BSR_CHECK(x.rank() == 4, "global_avg_pool expects [b,c,h,w]");
  return mean_axis(mean_axis(x, 3, false), 2, false);
}

}  // namespace blindsr
