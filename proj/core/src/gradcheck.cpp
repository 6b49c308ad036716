#include "blindsr/gradcheck.hpp"

#include <cmath>

#include "blindsr/common.hpp"
#include "blindsr/conv.hpp"
#include "blindsr/degrade.hpp"
#include "blindsr/kernels.hpp"
#include "blindsr/mcformer.hpp"
#include "blindsr/ops.hpp"
#include "blindsr/rng.hpp"
#include "blindsr/schedule.hpp"

namespace blindsr {

std::vector<double> fd_gradient(const ScalarFn& f, std::vector<double> x,
                                double h) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_error(const std::vector<double>& analytic,
                     const std::vector<double>& fd, double scale_floor) {
  BSR_CHECK(analytic.size() == fd.size(), "max_rel_error: size mismatch");
  double scale = scale_floor;
  for (double v : fd) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (size_t i = 0; i < fd.size(); ++i)
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / scale);
  return worst;
}

namespace {

using Builder = std::function<Tensor(const std::vector<Tensor>&)>;
using Sampler = std::function<double(Rng&)>;

double sample_plain(Rng& r) { return r.normal(); }
double sample_positive(Rng& r) { return r.uniform(0.5, 1.5); }
// keeps |x| in (0.1, 1.1) so kinks and FD steps never interact
double sample_offzero(Rng& r) {
  double v = r.uniform(0.1, 1.1);
  return r.uniform() < 0.5 ? -v : v;
}

struct CheckSpec {
  std::string name;
  std::vector<Shape> in_shapes;
  std::vector<Sampler> samplers;  // one per input
  Builder build;                  // returns a scalar tensor
};

double run_spec_once(const CheckSpec& spec, Rng& rng, double h) {
  // fresh leaf inputs
  std::vector<std::vector<double>> values;
  for (size_t i = 0; i < spec.in_shapes.size(); ++i) {
    std::vector<double> v(static_cast<size_t>(shape_numel(spec.in_shapes[i])));
    for (double& x : v) x = spec.samplers[i](rng);
    values.push_back(std::move(v));
  }

  auto make_inputs = [&](bool rg) {
    std::vector<Tensor> ins;
    for (size_t i = 0; i < values.size(); ++i)
      ins.push_back(Tensor::from_data(spec.in_shapes[i], values[i], rg));
    return ins;
  };

  // analytic gradients
  std::vector<Tensor> ins = make_inputs(true);
  Tensor out = spec.build(ins);
  backward(out);
  std::vector<std::vector<double>> analytic;
  for (auto& t : ins)
    analytic.push_back(t.has_grad() ? t.grad()
                                    : std::vector<double>(
                                          static_cast<size_t>(t.numel()), 0.0));

  // finite differences, one input at a time
  double worst = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    ScalarFn f = [&](const std::vector<double>& x) {
      NoGradGuard ng;
      std::vector<Tensor> e;
      for (size_t j = 0; j < values.size(); ++j)
        e.push_back(Tensor::from_data(spec.in_shapes[j],
                                      j == i ? x : values[j], false));
      return spec.build(e).item();
    };
    std::vector<double> fd = fd_gradient(f, values[i], h);
    worst = std::max(worst, max_rel_error(analytic[i], fd));
  }
  return worst;
}

// weights a tensor into a scalar so every output element participates
Tensor weighted_sum(const Tensor& t, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(t.numel()));
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  return sum(mul(t, Tensor::from_data(t.shape(), std::move(w))));
}

std::vector<CheckSpec> build_specs(Rng& seed_rng) {
  std::vector<CheckSpec> specs;
  // capture a private stream for output weights so they stay fixed per spec
  auto wrng = std::make_shared<Rng>(seed_rng.split("weights"));

  auto add_spec = [&](std::string name, std::vector<Shape> shapes,
                      std::vector<Sampler> samplers,
                      std::function<Tensor(const std::vector<Tensor>&)> fn) {
    CheckSpec s;
    s.name = std::move(name);
    s.in_shapes = std::move(shapes);
    s.samplers = std::move(samplers);
    s.build = [fn, wrng](const std::vector<Tensor>& ins) {
      Rng r = wrng->split("out");
      return weighted_sum(fn(ins), r);
    };
    specs.push_back(std::move(s));
  };

  // elementwise, with broadcasting
  add_spec("add", {{3, 4}, {3, 4}}, {sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) { return add(a[0], a[1]); });
  add_spec("add_broadcast", {{2, 3, 4}, {1, 4}}, {sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) { return add(a[0], a[1]); });
  add_spec("sub", {{4, 3}, {3}}, {sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) { return sub(a[0], a[1]); });
  add_spec("mul", {{2, 4, 4}, {2, 4, 4}}, {sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) { return mul(a[0], a[1]); });
  add_spec("mul_broadcast", {{2, 3, 1, 4}, {3, 1, 1}},
           {sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) { return mul(a[0], a[1]); });
  add_spec("div", {{3, 4}, {3, 4}}, {sample_plain, sample_positive},
           [](const std::vector<Tensor>& a) { return divide(a[0], a[1]); });
  add_spec("exp", {{3, 4}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return exp(a[0]); });
  add_spec("sqrt", {{3, 4}}, {sample_positive},
           [](const std::vector<Tensor>& a) { return sqrt(a[0]); });
  add_spec("leaky_relu", {{4, 4}}, {sample_offzero},
           [](const std::vector<Tensor>& a) { return leaky_relu(a[0]); });
  add_spec("gelu", {{4, 4}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return gelu(a[0]); });
  add_spec("sigmoid", {{4, 4}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return sigmoid(a[0]); });
  add_spec("abs", {{4, 4}}, {sample_offzero},
           [](const std::vector<Tensor>& a) { return abs_val(a[0]); });
  add_spec("add_scalar", {{3, 3}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return add_scalar(a[0], 0.7); });
  add_spec("mul_scalar", {{3, 3}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return mul_scalar(a[0], -1.3); });

  // matmul
  add_spec("matmul", {{3, 4}, {4, 5}}, {sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) { return matmul(a[0], a[1]); });
  add_spec("matmul_batched", {{2, 2, 3, 4}, {2, 4, 3}},
           {sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) { return matmul(a[0], a[1]); });
  add_spec("matmul_vec", {{3, 3}, {3}}, {sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) { return matmul(a[0], a[1]); });

  // reductions and softmax
  add_spec("sum_axis", {{2, 3, 4}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return sum_axis(a[0], 1, true); });
  add_spec("mean_axis", {{2, 3, 4}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return mean_axis(a[0], -1, false); });
  add_spec("softmax", {{3, 5}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return softmax_lastdim(a[0]); });

  // shape ops
  add_spec("reshape", {{2, 6}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return reshape(a[0], {3, 4}); });
  add_spec("transpose", {{2, 3, 4}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return transpose_axes(a[0], -1, -2); });
  add_spec("slice", {{2, 6, 3}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return slice_axis(a[0], 1, 2, 3); });
  add_spec("concat", {{2, 2, 3}, {2, 4, 3}}, {sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) {
             return concat({a[0], a[1]}, 1);
           });
  add_spec("flip_last2", {{2, 3, 4}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return flip_last2(a[0]); });

  // conv family, all padding modes, stride 2, groups
  for (auto [mname, mode] : {std::pair{"zero", PaddingMode::Zero},
                             std::pair{"replicate", PaddingMode::Replicate},
                             std::pair{"circular", PaddingMode::Circular}}) {
    PaddingMode m = mode;
    add_spec(std::string("conv2d_") + mname, {{2, 3, 6, 6}, {4, 3, 3, 3}},
             {sample_plain, sample_plain},
             [m](const std::vector<Tensor>& a) {
               return conv2d(a[0], a[1], 1, m);
             });
  }
  add_spec("conv2d_stride2", {{1, 2, 8, 8}, {3, 2, 3, 3}},
           {sample_plain, sample_plain}, [](const std::vector<Tensor>& a) {
             return conv2d(a[0], a[1], 2, PaddingMode::Zero);
           });
  add_spec("conv2d_depthwise", {{2, 4, 5, 5}, {4, 1, 3, 3}},
           {sample_plain, sample_plain}, [](const std::vector<Tensor>& a) {
             return conv2d(a[0], a[1], 1, PaddingMode::Zero, 4);
           });
  add_spec("conv_transpose2d", {{1, 3, 4, 4}, {3, 2, 3, 3}},
           {sample_plain, sample_plain}, [](const std::vector<Tensor>& a) {
             return conv_transpose2d(a[0], a[1], 2, 1, 1);
           });
  add_spec("decimate2d", {{2, 3, 8, 8}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return decimate2d(a[0], 2); });
  add_spec("zero_upsample2d", {{1, 2, 3, 3}}, {sample_plain},
           [](const std::vector<Tensor>& a) {
             return zero_upsample2d(a[0], 2, 6, 6);
           });

  // composites used by the denoiser
  add_spec("layer_norm_channel", {{2, 4, 3, 3}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return layer_norm_channel(a[0]); });
  add_spec("l2_normalize", {{2, 3, 5}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return l2_normalize_lastdim(a[0]); });
  add_spec("global_avg_pool", {{2, 3, 4, 4}}, {sample_plain},
           [](const std::vector<Tensor>& a) { return global_avg_pool(a[0]); });

  // modulation / attention / feed-forward blocks (params as leaves)
  add_spec("modulate1",
           {{2, 4, 3, 3}, {2, 6}, {6, 4}, {4}, {6, 4}, {4}},
           {sample_plain, sample_plain, sample_plain, sample_plain,
            sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) {
             ModulationParams p{a[2], a[3], a[4], a[5]};
             return modulate1(a[0], a[1], p);
           });
  add_spec("modulate2",
           {{2, 4, 3, 3}, {2, 6}, {6, 4}, {4}, {6, 4}, {4}},
           {sample_plain, sample_plain, sample_plain, sample_plain,
            sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) {
             ModulationParams p{a[2], a[3], a[4], a[5]};
             return modulate2(a[0], a[1], p);
           });
  add_spec("mdta",
           {{1, 4, 4, 4},
            {12, 4, 1, 1},
            {12, 1, 1},
            {12, 1, 3, 3},
            {12, 1, 1},
            {2, 1, 1},
            {4, 4, 1, 1},
            {4, 1, 1}},
           {sample_plain, sample_plain, sample_plain, sample_plain,
            sample_plain, sample_positive, sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) {
             MdtaParams p{a[1], a[2], a[3], a[4], a[5], a[6], a[7], 2};
             return mdta(a[0], p);
           });
  add_spec("gdfn",
           {{1, 1, 4, 4},
            {6, 1, 1, 1},
            {6, 1, 1},
            {6, 1, 3, 3},
            {6, 1, 1},
            {1, 3, 1, 1},
            {1, 1, 1}},
           {sample_plain, sample_plain, sample_plain, sample_plain,
            sample_plain, sample_plain, sample_plain},
           [](const std::vector<Tensor>& a) {
             GdfnParams p{a[1], a[2], a[3], a[4], a[5], a[6]};
             return gdfn(a[0], p);
           });

  return specs;
}

}  // namespace

std::vector<GradCheckResult> run_op_gradchecks(int seeds, double tol) {
  Rng root(0xBD00);
  std::vector<CheckSpec> specs = build_specs(root);
  std::vector<GradCheckResult> results;
  for (const auto& spec : specs) {
    GradCheckResult r;
    r.name = spec.name;
    for (int s = 0; s < seeds; ++s) {
      Rng rng = root.split(spec.name, static_cast<uint64_t>(s));
      r.max_rel = std::max(r.max_rel, run_spec_once(spec, rng, 1e-5));
    }
    r.pass = r.max_rel < tol;
    results.push_back(std::move(r));
  }

  // fidelity + predict_x0 (scalar output already)
  {
    GradCheckResult r;
    r.name = "fidelity";
    DiffusionSchedule sched = linear_schedule(10, 2e-3, 0.2);
    for (int s = 0; s < seeds; ++s) {
      Rng rng = root.split("fidelity", static_cast<uint64_t>(s));
      BlurKernel k = make_isotropic(5, rng.uniform(0.6, 2.0));
      Shape xs{1, 1, 8, 8};
      std::vector<double> xv(64), yv(16);
      for (double& v : xv) v = rng.uniform(0.0, 1.0);
      for (double& v : yv) v = rng.uniform(0.0, 1.0);
      Tensor y = Tensor::from_data({1, 1, 4, 4}, yv);
      int t = static_cast<int>(rng.uniform_int(1, sched.T));

      Tensor x = Tensor::from_data(xs, xv, true);
      // gradient through predict_x0 as in the sampler (eps_hat fixed here)
      std::vector<double> ev(64);
      for (double& v : ev) v = rng.normal();
      Tensor eps_hat = Tensor::from_data(xs, ev);
      Tensor fid = fidelity(y, k, predict_x0(sched, x, t, eps_hat), 2);
      backward(fid);
      std::vector<double> analytic = x.grad();

      ScalarFn f = [&](const std::vector<double>& xd) {
        NoGradGuard ng;
        Tensor xt = Tensor::from_data(xs, xd);
        return fidelity(y, k, predict_x0(sched, xt, t, eps_hat), 2).item();
      };
      std::vector<double> fd = fd_gradient(f, xv, 1e-5);
      r.max_rel = std::max(r.max_rel, max_rel_error(analytic, fd));
    }
    r.pass = r.max_rel < tol;
    results.push_back(std::move(r));
  }
  return results;
}

GradCheckResult run_end_to_end_gradcheck(int seeds, double tol) {
  GradCheckResult r;
  r.name = "fidelity_through_network";

  MCFormerConfig cfg = MCFormerConfig::toy();
  DiffusionSchedule sched = linear_schedule(50, 2e-3, 0.4);

  // tiny code space at the toy kernel size
  std::vector<BlurKernel> corpus = pca_training_corpus(120, 11, 7);
  KernelPCA pca = fit_pca(corpus, cfg.kernel_code_dim);

  for (int s = 0; s < seeds; ++s) {
    Rng rng(0xE2E0 + static_cast<uint64_t>(s));
    MCFormer model(cfg, 3);
    model.init_params(rng.split("init"));
    // re-randomize the zero-initialized heads so every branch is live
    for (auto& [name, e] : model.params().entries()) {
      if (e.kind == InitKind::Zero) {
        Rng pr = rng.split(name);
        for (int64_t i = 0; i < e.tensor.numel(); ++i)
          e.tensor.data()[i] = pr.uniform(-0.05, 0.05);
      }
    }

    BlurKernel k = decode(pca, encode(pca, sample_training_kernel(
                                               KernelFamily::Isotropic, 11,
                                               rng)));
    Shape xs{1, 3, 8, 8};
    std::vector<double> xv(static_cast<size_t>(shape_numel(xs)));
    for (double& v : xv) v = rng.normal();
    std::vector<double> yv(3 * 4 * 4);
    for (double& v : yv) v = rng.uniform(0.0, 1.0);
    Tensor y = Tensor::from_data({1, 3, 4, 4}, yv);
    int t = static_cast<int>(rng.uniform_int(1, sched.T));

    Tensor x = Tensor::from_data(xs, xv, true);
    DenoiserOutput out = model.evaluate(x, t, y, sched);
    Tensor fid = fidelity(y, k, predict_x0(sched, x, t, out.eps_hat), 2);
    backward(fid);
    std::vector<double> analytic = x.grad();

    ScalarFn f = [&](const std::vector<double>& xd) {
      NoGradGuard ng;
      Tensor xt = Tensor::from_data(xs, xd);
      DenoiserOutput o = model.evaluate(xt, t, y, sched);
      return fidelity(y, k, predict_x0(sched, xt, t, o.eps_hat), 2).item();
    };
    std::vector<double> fd = fd_gradient(f, xv, 1e-5);
    r.max_rel = std::max(r.max_rel, max_rel_error(analytic, fd));
  }
  r.pass = r.max_rel < tol;
  return r;
}

}  // namespace blindsr
