#include <doctest.h>

#include <cmath>

#include "blindsr/degrade.hpp"
#include "blindsr/mcformer.hpp"
#include "blindsr/ops.hpp"
#include "blindsr/schedule.hpp"

using namespace blindsr;

namespace {

Tensor randn(Shape s, Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(s)));
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from_data(std::move(s), std::move(v));
}

void randomize_all(MCFormer& m, Rng rng) {
  m.init_params(rng);
  for (auto& [name, e] : m.params().entries()) {
    if (e.kind == InitKind::Zero) {
      Rng pr = rng.split(name);
      for (int64_t i = 0; i < e.tensor.numel(); ++i)
        e.tensor.data()[i] = pr.uniform(-0.05, 0.05);
    }
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("config validation") {
  MCFormerConfig c = MCFormerConfig::toy();
  CHECK_NOTHROW(c.validate());
  c.channels_per_level = {8};  // wrong length
  CHECK_THROWS(c.validate());
  c = MCFormerConfig::toy();
  c.channels_per_level = {8, 15};  // 15 not divisible by 2 heads
  CHECK_THROWS(c.validate());
  c = MCFormerConfig::full();
  CHECK_NOTHROW(c.validate());
  CHECK(c.blocks_per_level == std::vector<int>{2, 3, 6, 8});
  CHECK(c.channels_per_level == std::vector<int>{48, 96, 192, 384});
  CHECK(c.heads_per_level == std::vector<int>{1, 2, 4, 8});
}

TEST_CASE("modulate1 reduces to plain layer norm at gamma=1, tau=0") {
  Rng rng(4);
  Tensor f = randn({2, 4, 3, 3}, rng);
  Tensor embed = randn({2, 6}, rng);
  ModulationParams p{Tensor::zeros({6, 4}), Tensor::full({4}, 1.0),
                     Tensor::zeros({6, 4}), Tensor::zeros({4})};
  NoGradGuard ng;
  Tensor out = modulate1(f, embed, p);
  Tensor want = layer_norm_channel(f);
  CHECK(max_abs_diff(out, want) < 1e-14);

  // gamma = 0: output is tau broadcast
  ModulationParams pz{Tensor::zeros({6, 4}), Tensor::zeros({4}),
                      Tensor::zeros({6, 4}),
                      Tensor::from_data({4}, {1, 2, 3, 4})};
  Tensor out2 = modulate1(f, embed, pz);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          CHECK(out2.at({b, c, i, j}) == doctest::Approx(c + 1.0));

  // conditioning is live: different kernel embeddings change the output
  Rng r2(5);
  ModulationParams pr{randn({6, 4}, r2), randn({4}, r2), randn({6, 4}, r2),
                      randn({4}, r2)};
  Tensor e1 = randn({2, 6}, r2);
  Tensor e2 = add_scalar(e1, 0.1);
  CHECK(max_abs_diff(modulate1(f, e1, pr), modulate1(f, e2, pr)) > 0.0);
}

TEST_CASE("modulate2 is affine in the feature") {
  Rng rng(6);
  Tensor f = randn({1, 4, 2, 2}, rng);
  Tensor embed = randn({1, 6}, rng);
  ModulationParams p{randn({6, 4}, rng), randn({4}, rng), randn({6, 4}, rng),
                     randn({4}, rng)};
  NoGradGuard ng;

  // identity at gamma=1, tau=0
  ModulationParams pid{Tensor::zeros({6, 4}), Tensor::full({4}, 1.0),
                       Tensor::zeros({6, 4}), Tensor::zeros({4})};
  CHECK(max_abs_diff(modulate2(f, embed, pid), f) < 1e-15);

  // M(aF) - tau == a (M(F) - tau) for fixed embeddings
  Tensor tau = modulate2(Tensor::zeros(f.shape()), embed, p);
  Tensor lhs = sub(modulate2(mul_scalar(f, 2.5), embed, p), tau);
  Tensor rhs = mul_scalar(sub(modulate2(f, embed, p), tau), 2.5);
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("mdta shape, softmax rows, spatial equivariance") {
  Rng rng(8);
  int64_t c = 4, heads = 2;
  Tensor f = randn({1, c, 5, 5}, rng);
  MdtaParams p;
  p.qkv_w = randn({3 * c, c, 1, 1}, rng, 0.5);
  p.qkv_b = randn({3 * c, 1, 1}, rng, 0.1);
  // delta depthwise kernels: identity on each channel
  p.dw_w = Tensor::zeros({3 * c, 1, 3, 3});
  for (int64_t ch = 0; ch < 3 * c; ++ch) p.dw_w.data()[ch * 9 + 4] = 1.0;
  p.dw_b = Tensor::zeros({3 * c, 1, 1});
  p.temperature = Tensor::full({heads, 1, 1}, 1.3);
  p.proj_w = randn({c, c, 1, 1}, rng, 0.5);
  p.proj_b = randn({c, 1, 1}, rng, 0.1);
  p.heads = static_cast<int>(heads);

  NoGradGuard ng;
  MdtaDebug dbg;
  Tensor out = mdta(f, p, &dbg);
  CHECK(out.shape() == f.shape());

  // attention rows sum to 1
  REQUIRE(dbg.attention.defined());
  CHECK(dbg.attention.shape() == Shape{1, heads, c / heads, c / heads});
  int64_t rows = dbg.attention.numel() / (c / heads);
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0;
    for (int64_t i = 0; i < c / heads; ++i)
      acc += dbg.attention.data()[r * (c / heads) + i];
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
  }

  // permuting spatial positions permutes the output identically
  Tensor out_flip = mdta(flip_last2(f), p);
  CHECK(max_abs_diff(out_flip, flip_last2(out)) < 1e-12);

  // channels not divisible by heads
  MdtaParams bad = p;
  bad.heads = 3;
  CHECK_THROWS(mdta(f, bad));
}

TEST_CASE("gdfn zero case and shape") {
  Rng rng(10);
  int64_t c = 3, hid = 4;
  GdfnParams p;
  p.expand_w = randn({2 * hid, c, 1, 1}, rng);
  p.expand_b = Tensor::zeros({2 * hid, 1, 1});
  p.dw_w = randn({2 * hid, 1, 3, 3}, rng);
  p.dw_b = Tensor::zeros({2 * hid, 1, 1});
  p.proj_w = randn({c, hid, 1, 1}, rng);
  p.proj_b = Tensor::zeros({c, 1, 1});
  NoGradGuard ng;

  Tensor z = Tensor::zeros({2, c, 4, 4});
  Tensor out = gdfn(z, p);
  CHECK(out.shape() == z.shape());
  for (double v : out.vec()) CHECK(v == 0.0);

  Tensor f = randn({2, c, 4, 4}, rng);
  CHECK(gdfn(f, p).shape() == f.shape());
}

TEST_CASE("mcformer forward: shape, determinism, conditioning") {
  MCFormerConfig cfg = MCFormerConfig::toy();
  MCFormer model(cfg, 3);
  randomize_all(model, Rng(123));
  DiffusionSchedule sched = linear_schedule(50, 2e-3, 0.4);

  Rng rng(55);
  Tensor x_t = randn({2, 3, 8, 8}, rng);
  Tensor y = randn({2, 3, 4, 4}, rng, 0.3);

  NoGradGuard ng;
  DenoiserOutput out = model.evaluate(x_t, 7, y, sched);
  CHECK(out.eps_hat.shape() == x_t.shape());
  CHECK(out.kernel_code.shape() == Shape{2, cfg.kernel_code_dim});
  for (double v : out.eps_hat.vec()) CHECK(std::isfinite(v));

  // bit-identical on re-evaluation
  DenoiserOutput out2 = model.evaluate(x_t, 7, y, sched);
  CHECK(out.eps_hat.vec() == out2.eps_hat.vec());
  CHECK(out.kernel_code.vec() == out2.kernel_code.vec());

  // kernel-code conditioning is live: shifting the estimator head bias
  // changes the code and therefore eps_hat
  model.params().at("est.head.b").data()[0] += 0.5;
  DenoiserOutput out3 = model.evaluate(x_t, 7, y, sched);
  CHECK(max_abs_diff(out3.kernel_code, out.kernel_code) > 0.4);
  CHECK(max_abs_diff(out3.eps_hat, out.eps_hat) > 1e-6);

  // timestep conditioning is live too
  DenoiserOutput out4 = model.evaluate(x_t, 40, y, sched);
  CHECK(max_abs_diff(out4.eps_hat, out3.eps_hat) > 1e-9);

  // spatial extents must divide 2^(levels-1)
  CHECK_THROWS(model.evaluate(randn({1, 3, 7, 7}, rng), 3,
                              randn({1, 3, 4, 4}, rng), sched));
}

TEST_CASE("zero-initialized heads give zero outputs") {
  MCFormer model(MCFormerConfig::toy(), 3);
  model.init_params(Rng(9));  // est.head and out.conv stay zero
  DiffusionSchedule sched = linear_schedule(50, 2e-3, 0.4);
  Rng rng(11);
  NoGradGuard ng;
  DenoiserOutput out = model.evaluate(randn({1, 3, 8, 8}, rng), 5,
                                      randn({1, 3, 4, 4}, rng), sched);
  for (double v : out.kernel_code.vec()) CHECK(v == 0.0);
  for (double v : out.eps_hat.vec()) CHECK(v == 0.0);
}

TEST_CASE("no dead branches: every parameter receives gradient") {
  MCFormerConfig cfg = MCFormerConfig::toy();
  MCFormer model(cfg, 3);
  randomize_all(model, Rng(321));
  DiffusionSchedule sched = linear_schedule(50, 2e-3, 0.4);

  Rng rng(77);
  Tensor x_t = randn({2, 3, 8, 8}, rng);
  Tensor y = randn({2, 3, 4, 4}, rng, 0.3);
  Tensor eps = randn({2, 3, 8, 8}, rng);
  Tensor code_gt = randn({2, cfg.kernel_code_dim}, rng, 0.1);

  DenoiserOutput out = model.forward(x_t, {3, 47}, y);
  // combined objective: noise MSE + kernel-code L1
  Tensor d = sub(eps, out.eps_hat);
  Tensor loss = add(mean(mul(d, d)), mean(abs_val(sub(code_gt, out.kernel_code))));
  backward(loss);

  for (const auto& [name, e] : model.params().entries()) {
    INFO("param ", name);
    REQUIRE(e.tensor.has_grad());
    double norm = 0;
    for (double g : e.tensor.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
  model.params().zero_grad();
}

TEST_CASE("weight counts are stable") {
  MCFormer toy(MCFormerConfig::toy(), 3);
  CHECK(toy.params().scalar_count() == 27080);
  MCFormer full(MCFormerConfig::full(), 3);
  CHECK(full.params().scalar_count() == 27787975);
}

TEST_CASE("oracle denoiser inverts q_sample exactly") {
  DiffusionSchedule sched = linear_schedule(50, 2e-3, 0.4);
  Rng rng(2);
  Tensor x0 = randn({1, 3, 8, 8}, rng, 0.3);
  std::vector<double> code{0.1, -0.2, 0.3};
  OracleDenoiser oracle(x0, code);

  for (int t : {1, 10, 30, 50}) {
    Tensor eps = randn(x0.shape(), rng);
    Tensor x_t = q_sample(sched, x0, t, eps);
    NoGradGuard ng;
    DenoiserOutput out = oracle.evaluate(x_t, t, Tensor::zeros({1, 3, 4, 4}), sched);
    CHECK(out.kernel_code.vec() == code);
    // eps_hat equals the true eps, so predict_x0 returns x0 exactly
    Tensor back = predict_x0(sched, x_t, t, out.eps_hat);
    CHECK(max_abs_diff(back, x0) < 1e-10);
  }
}
