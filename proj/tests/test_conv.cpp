#include <doctest.h>

#include <cmath>

#include "blindsr/conv.hpp"
#include "blindsr/ops.hpp"
#include "blindsr/rng.hpp"

using namespace blindsr;

namespace {

Tensor randn(Shape s, Rng& rng, bool rg = false) {
  std::vector<double> v(static_cast<size_t>(shape_numel(s)));
  for (double& x : v) x = rng.normal();
  return Tensor::from_data(std::move(s), std::move(v), rg);
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

}  // namespace

TEST_CASE("conv2d identity cases") {
  Rng rng(3);
  Tensor x = randn({1, 1, 5, 5}, rng);

  // delta kernel (center 1) reproduces the input
  Tensor delta = Tensor::zeros({1, 1, 3, 3});
  delta.data()[4] = 1.0;
  for (PaddingMode m :
       {PaddingMode::Zero, PaddingMode::Replicate, PaddingMode::Circular}) {
    Tensor y = conv2d(x, delta, 1, m);
    CHECK(y.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i)
      CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-15));
  }

  // 1x1 all-ones kernel leaves [[1,2],[3,4]] unchanged
  Tensor x2 = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor ones1 = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor y2 = conv2d(x2, ones1, 1, PaddingMode::Zero);
  CHECK(y2.vec() == std::vector<double>{1, 2, 3, 4});

  // even kernels rejected for the same-size entry point
  CHECK_THROWS(conv2d(x, Tensor::zeros({1, 1, 2, 2}), 1, PaddingMode::Zero));
  // channel/group mismatch
  CHECK_THROWS(conv2d(x, Tensor::zeros({2, 3, 3, 3}), 1, PaddingMode::Zero));
  CHECK_THROWS(conv2d(randn({1, 4, 5, 5}, rng), Tensor::zeros({4, 1, 3, 3}), 1,
                      PaddingMode::Zero, 3));
}

TEST_CASE("conv2d adjoint identity, all modes/strides/groups") {
  // <conv(x,w), u> == <x, conv_input_adjoint(u,w)> ; forward is a gather,
  // adjoint is the scatter the tape uses, so this pits both code paths
  // against each other.
  Rng rng(11);
  for (PaddingMode m :
       {PaddingMode::Zero, PaddingMode::Replicate, PaddingMode::Circular}) {
    for (int stride : {1, 2}) {
      for (int groups : {1, 2}) {
        Shape xs{2, 2, 6, 6};
        Tensor x = randn(xs, rng);
        Tensor w = randn({4, 2 / groups, 3, 3}, rng);
        NoGradGuard ng;
        Tensor ax = conv2d(x, w, stride, m, groups);
        Tensor u = randn(ax.shape(), rng);
        Tensor atu = conv2d_input_adjoint(u, w, xs, stride, 1, 1, m, groups);
        double lhs = dot(ax, u), rhs = dot(x, atu);
        double denom = norm(ax) * norm(u);
        CHECK(std::abs(lhs - rhs) / denom < 1e-10);
      }
    }
  }
}

TEST_CASE("decimate / zero_upsample are exact adjoints") {
  Rng rng(5);
  Tensor x = randn({3, 8, 8}, rng);
  NoGradGuard ng;
  Tensor dx = decimate2d(x, 2);
  CHECK(dx.shape() == Shape{3, 4, 4});
  Tensor u = randn({3, 4, 4}, rng);
  Tensor uu = zero_upsample2d(u, 2, 8, 8);
  CHECK(std::abs(dot(dx, u) - dot(x, uu)) / (norm(dx) * norm(u)) < 1e-12);

  // decimation keeps sample (0,0) of each block
  Tensor ramp = Tensor::from_data({1, 4, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10,
                                              11, 12, 13, 14, 15});
  Tensor d2 = decimate2d(ramp, 2);
  CHECK(d2.vec() == std::vector<double>{0, 2, 8, 10});
}

TEST_CASE("conv_transpose2d doubles extents and matches brute force") {
  Rng rng(17);
  Tensor x = randn({1, 2, 4, 4}, rng);
  Tensor w = randn({2, 3, 3, 3}, rng);  // [cin, cout, kh, kw]
  NoGradGuard ng;
  Tensor y = conv_transpose2d(x, w, 2, 1, 1);
  CHECK(y.shape() == Shape{1, 3, 8, 8});

  // brute-force scatter oracle
  std::vector<double> want(static_cast<size_t>(3 * 8 * 8), 0.0);
  for (int ci = 0; ci < 2; ++ci)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double xv = x.at({0, ci, i, j});
        for (int co = 0; co < 3; ++co)
          for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
              int oi = i * 2 - 1 + r, oj = j * 2 - 1 + c;
              if (oi < 0 || oi >= 8 || oj < 0 || oj >= 8) continue;
              want[static_cast<size_t>((co * 8 + oi) * 8 + oj)] +=
                  xv * w.at({ci, co, r, c});
            }
      }
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("conv2d inner-product adjoint via tape gradient") {
  // gradient of <conv(x,w), u> w.r.t. x equals the adjoint applied to u
  Rng rng(23);
  Shape xs{1, 1, 6, 6};
  Tensor x = randn(xs, rng, true);
  Tensor w = randn({1, 1, 5, 5}, rng);
  Tensor ax = conv2d(x, w, 1, PaddingMode::Zero);
  Tensor u = randn(ax.shape(), rng);
  backward(sum(mul(ax, u)));
  Tensor atu = conv2d_input_adjoint(u, w, xs, 1, 2, 2, PaddingMode::Zero, 1);
  double scale = norm(atu);
  for (int64_t i = 0; i < atu.numel(); ++i)
    CHECK(std::abs(x.grad()[static_cast<size_t>(i)] - atu.data()[i]) / scale <
          1e-12);
}
