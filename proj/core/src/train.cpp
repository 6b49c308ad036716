#include "blindsr/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "blindsr/common.hpp"
#include "blindsr/ops.hpp"
#include "blindsr/toyimg.hpp"

namespace blindsr {

void TrainConfig::validate() const {
  model.validate();
  BSR_CHECK(batch_size >= 1, "train: batch_size must be >= 1");
  BSR_CHECK(hr_patch >= 1 && hr_patch % scale == 0,
            "train: hr_patch must be divisible by scale");
  BSR_CHECK(total_iters >= 0, "train: total_iters must be >= 0");
  BSR_CHECK(lr >= 0.0, "train: lr must be >= 0");
  BSR_CHECK(lr_halving_interval >= 1, "train: lr_halving_interval must be >= 1");
  BSR_CHECK(kernel_size % 2 == 1, "train: kernel_size must be odd");
  BSR_CHECK(T >= 1, "train: T must be >= 1");
}

double TrainConfig::lr_at(int64_t iter) const {
  int64_t halvings = iter / lr_halving_interval;
  return lr * std::pow(0.5, static_cast<double>(halvings));
}

TrainConfig full_protocol_config() {
  TrainConfig c;
  c.model = MCFormerConfig::full();
  c.batch_size = 8;
  c.hr_patch = 256;
  c.total_iters = 500000;
  c.lr = 2e-4;
  c.lr_halving_interval = 100000;
  c.scale = 4;
  c.T = 1000;
  c.beta_start = 1e-4;
  c.beta_end = 0.02;
  return c;
}

// ---- Adam -------------------------------------------------------------------

void adam_step(ParamStore& params, AdamState& st, double lr) {
  st.step += 1;
  double b1t = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  double b2t = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (auto& [name, e] : params.entries()) {
    Tensor& p = e.tensor;
    size_t n = static_cast<size_t>(p.numel());
    auto& m = st.m[name];
    auto& v = st.v[name];
    if (m.empty()) m.assign(n, 0.0);
    if (v.empty()) v.assign(n, 0.0);
    const double* g = nullptr;
    if (p.has_grad()) g = p.grad().data();
    double* pd = p.data();
    for (size_t i = 0; i < n; ++i) {
      double gi = g != nullptr ? g[i] : 0.0;
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
      double mhat = m[i] / b1t;
      double vhat = v[i] / b2t;
      pd[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

// ---- corpus -----------------------------------------------------------------

ImageCorpus ImageCorpus::synthetic(int count, int channels, int h, int w,
                                   uint64_t seed) {
  ImageCorpus c;
  Rng root(seed);
  for (int i = 0; i < count; ++i) {
    Rng r = root.split("toyimg", static_cast<uint64_t>(i));
    c.images_.push_back(toy_texture_image(channels, h, w, r));
  }
  return c;
}

ImageCorpus ImageCorpus::from_images(std::vector<Tensor> images) {
  BSR_CHECK(!images.empty(), "corpus: no images");
  ImageCorpus c;
  c.images_ = std::move(images);
  return c;
}

// ---- batch synthesis ----------------------------------------------------------

Batch synthesize_batch(const TrainConfig& cfg, const ImageCorpus& corpus,
                       const KernelPCA& pca, Rng& rng) {
  BSR_CHECK(corpus.size() > 0, "synthesize_batch: empty corpus");
  int b = cfg.batch_size, p = cfg.hr_patch, s = cfg.scale;
  int c = cfg.img_channels;
  int lp = p / s;
  bool flip_enabled = cfg.hflip && !deterministic_mode();

  std::vector<double> x0(static_cast<size_t>(b) * c * p * p);
  std::vector<double> y(static_cast<size_t>(b) * c * lp * lp);
  std::vector<double> codes(static_cast<size_t>(b) * pca.dim);
  std::vector<BlurKernel> kernels;
  kernels.reserve(static_cast<size_t>(b));

  for (int bi = 0; bi < b; ++bi) {
    const Tensor& img = corpus.image(static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(corpus.size()) - 1)));
    BSR_CHECK(img.rank() == 3 && img.extent(0) == c,
              "corpus image must be [c,h,w]");
    int64_t ih = img.extent(1), iw = img.extent(2);
    BSR_CHECK(ih >= p && iw >= p, "corpus image " << ih << "x" << iw
                                                  << " smaller than patch " << p);
    int64_t oy = rng.uniform_int(0, ih - p);
    int64_t ox = rng.uniform_int(0, iw - p);
    bool flip = flip_enabled && rng.uniform() < 0.5;

    std::vector<double> patch(static_cast<size_t>(c) * p * p);
    const double* src = img.data();
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) {
          int jj = flip ? p - 1 - j : j;
          patch[static_cast<size_t>((ci * p + i) * p + j)] =
              src[(ci * ih + (oy + i)) * iw + (ox + jj)];
        }
    Tensor xp = Tensor::from_data({c, p, p}, patch);

    BlurKernel k = sample_training_kernel(cfg.family, cfg.kernel_size, rng);
    DegradationSpec spec{k, s, cfg.degradation_noise_sigma,
                         PaddingMode::Replicate};
    Tensor yp = degrade_apply(spec, xp, rng);

    std::copy(patch.begin(), patch.end(), x0.begin() + static_cast<int64_t>(bi) * c * p * p);
    std::copy(yp.data(), yp.data() + c * lp * lp,
              y.begin() + static_cast<int64_t>(bi) * c * lp * lp);
    std::vector<double> code = encode(pca, k);
    std::copy(code.begin(), code.end(), codes.begin() + static_cast<int64_t>(bi) * pca.dim);
    kernels.push_back(std::move(k));
  }

  Batch out;
  out.x0 = Tensor::from_data({b, c, p, p}, std::move(x0));
  out.y = Tensor::from_data({b, c, lp, lp}, std::move(y));
  out.k_code_gt = Tensor::from_data({b, pca.dim}, std::move(codes));
  out.kernels = std::move(kernels);
  return out;
}

// ---- loss and step -------------------------------------------------------------

Tensor train_loss(const DenoiserOutput& out, const Tensor& eps,
                  const Tensor& k_code_gt) {
  BSR_CHECK(out.eps_hat.shape() == eps.shape(), "loss: eps shape mismatch");
  BSR_CHECK(out.kernel_code.shape() == k_code_gt.shape(),
            "loss: code shape mismatch");
  Tensor d = sub(eps, out.eps_hat);
  Tensor mse = mean(mul(d, d));
  Tensor l1 = mean(abs_val(sub(k_code_gt, out.kernel_code)));
  return add(mse, l1);
}

StepMetrics train_step(MCFormer& model, AdamState& opt, const Batch& batch,
                       const DiffusionSchedule& sched, double lr,
                       Rng& rng_timestep, Rng& rng_noise) {
  int64_t b = batch.x0.extent(0);
  int64_t item = batch.x0.numel() / b;

  std::vector<int> ts(static_cast<size_t>(b));
  std::vector<double> eps(static_cast<size_t>(batch.x0.numel()));
  std::vector<double> noisy(static_cast<size_t>(batch.x0.numel()));
  const double* x0 = batch.x0.data();
  for (int64_t i = 0; i < b; ++i) {
    int t = static_cast<int>(rng_timestep.uniform_int(1, sched.T));
    ts[static_cast<size_t>(i)] = t;
    double sa = std::sqrt(sched.alpha_bar(t));
    double sn = std::sqrt(1.0 - sched.alpha_bar(t));
    for (int64_t j = 0; j < item; ++j) {
      double e = rng_noise.normal();
      eps[static_cast<size_t>(i * item + j)] = e;
      noisy[static_cast<size_t>(i * item + j)] = sa * x0[i * item + j] + sn * e;
    }
  }
  Tensor eps_t = Tensor::from_data(batch.x0.shape(), std::move(eps));
  Tensor x_noisy = Tensor::from_data(batch.x0.shape(), std::move(noisy));

  DenoiserOutput out = model.forward(x_noisy, ts, batch.y);
  Tensor d = sub(eps_t, out.eps_hat);
  Tensor mse = mean(mul(d, d));
  Tensor l1 = mean(abs_val(sub(batch.k_code_gt, out.kernel_code)));
  Tensor loss = add(mse, l1);

  StepMetrics m;
  m.eps_mse = mse.item();
  m.kernel_l1 = l1.item();
  m.loss = loss.item();
  m.lr = lr;
  if (!std::isfinite(m.loss)) {
    Tape::current().clear();
    throw std::runtime_error("train_step: non-finite loss (eps_mse=" +
                             std::to_string(m.eps_mse) + ", kernel_l1=" +
                             std::to_string(m.kernel_l1) + ")");
  }

  model.params().zero_grad();
  backward(loss);
  adam_step(model.params(), opt, lr);
  model.params().zero_grad();
  return m;
}

// ---- loop ----------------------------------------------------------------------

TrainResult train_loop(const TrainConfig& cfg, MCFormer& model,
                       const ImageCorpus& corpus, const KernelPCA& pca,
                       AdamState& opt, int64_t start_iter) {
  cfg.validate();
  DiffusionSchedule sched = linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
  Rng root(cfg.seed);

  bool io = !cfg.out_dir.empty();
  std::ofstream log;
  if (io) {
    std::filesystem::create_directories(cfg.out_dir);
    bool fresh = start_iter == 0;
    log.open(cfg.out_dir + "/metrics.csv",
             fresh ? std::ios::trunc : std::ios::app);
    BSR_CHECK(log.is_open(), "cannot open metrics log in " << cfg.out_dir);
    if (fresh) log << "iter,loss,eps_mse,kernel_l1,lr\n";
    log.precision(12);
  }

  TrainResult res;
  auto checkpoint_path = [&](const char* tag) {
    return cfg.out_dir + "/ckpt_" + tag + ".bdtn";
  };
  if (io && start_iter == 0)
    save_checkpoint(checkpoint_path("init"), model, sched, cfg.scale, 0, &opt);

  for (int64_t it = start_iter; it < cfg.total_iters; ++it) {
    Rng rit = root.split("iter", static_cast<uint64_t>(it));
    Rng rb = rit.split("batch");
    Rng rt = rit.split("t");
    Rng re = rit.split("eps");
    Batch batch = synthesize_batch(cfg, corpus, pca, rb);
    StepMetrics m = train_step(model, opt, batch, sched, cfg.lr_at(it), rt, re);
    res.history.push_back(m);
    if (io)
      log << it << ',' << m.loss << ',' << m.eps_mse << ',' << m.kernel_l1
          << ',' << m.lr << '\n';
    if (io && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(checkpoint_path("latest"), model, sched, cfg.scale,
                      it + 1, &opt);
  }
  res.final_iter = cfg.total_iters;
  if (io) {
    res.final_checkpoint = checkpoint_path("final");
    save_checkpoint(res.final_checkpoint, model, sched, cfg.scale,
                    cfg.total_iters, &opt);
    log.flush();
  }
  return res;
}

// ---- checkpoints ----------------------------------------------------------------

namespace {

Tensor meta_scalar(double v) { return Tensor::scalar(v); }

Tensor meta_vec(const std::vector<int>& v) {
  std::vector<double> d(v.begin(), v.end());
  return Tensor::from_data({static_cast<int64_t>(v.size())}, std::move(d));
}

std::vector<int> vec_from_meta(const Tensor& t) {
  std::vector<int> v;
  for (double x : t.vec()) v.push_back(static_cast<int>(x));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const MCFormer& model,
                     const DiffusionSchedule& sched, int scale, int64_t iter,
                     const AdamState* opt) {
  NamedTensors out;
  const MCFormerConfig& c = model.config();
  out.emplace_back("meta/model/levels", meta_scalar(c.levels));
  out.emplace_back("meta/model/blocks", meta_vec(c.blocks_per_level));
  out.emplace_back("meta/model/channels", meta_vec(c.channels_per_level));
  out.emplace_back("meta/model/heads", meta_vec(c.heads_per_level));
  out.emplace_back("meta/model/refinement", meta_scalar(c.refinement_blocks));
  out.emplace_back("meta/model/kernel_code_dim", meta_scalar(c.kernel_code_dim));
  out.emplace_back("meta/model/time_embed_dim", meta_scalar(c.time_embed_dim));
  out.emplace_back("meta/model/gdfn_expansion", meta_scalar(c.gdfn_expansion));
  out.emplace_back("meta/model/img_channels", meta_scalar(model.img_channels()));
  out.emplace_back("meta/schedule/T", meta_scalar(sched.T));
  out.emplace_back("meta/schedule/beta_start", meta_scalar(sched.beta_start));
  out.emplace_back("meta/schedule/beta_end", meta_scalar(sched.beta_end));
  out.emplace_back("meta/schedule/family",
                   meta_scalar(sched.family == "linear" ? 0.0 : -1.0));
  out.emplace_back("meta/train/scale", meta_scalar(scale));
  out.emplace_back("meta/train/iter", meta_scalar(static_cast<double>(iter)));
  for (const auto& [name, e] : model.params().entries())
    out.emplace_back("p/" + name, e.tensor.detach());
  if (opt != nullptr) {
    out.emplace_back("opt/step", meta_scalar(static_cast<double>(opt->step)));
    for (const auto& [name, m] : opt->m) {
      std::vector<double> d = m;
      out.emplace_back("opt/m/" + name,
                       Tensor::from_data({static_cast<int64_t>(d.size())},
                                         std::move(d)));
    }
    for (const auto& [name, v] : opt->v) {
      std::vector<double> d = v;
      out.emplace_back("opt/v/" + name,
                       Tensor::from_data({static_cast<int64_t>(d.size())},
                                         std::move(d)));
    }
  }
  save_tensors(path, out);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  NamedTensors in = load_tensors(path);
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : in)
      if (n == name) return t;
    throw std::runtime_error("checkpoint missing entry: " + name);
  };
  LoadedCheckpoint ck;
  ck.cfg.levels = static_cast<int>(find("meta/model/levels").item());
  ck.cfg.blocks_per_level = vec_from_meta(find("meta/model/blocks"));
  ck.cfg.channels_per_level = vec_from_meta(find("meta/model/channels"));
  ck.cfg.heads_per_level = vec_from_meta(find("meta/model/heads"));
  ck.cfg.refinement_blocks = static_cast<int>(find("meta/model/refinement").item());
  ck.cfg.kernel_code_dim =
      static_cast<int>(find("meta/model/kernel_code_dim").item());
  ck.cfg.time_embed_dim =
      static_cast<int>(find("meta/model/time_embed_dim").item());
  ck.cfg.gdfn_expansion = find("meta/model/gdfn_expansion").item();
  ck.img_channels = static_cast<int>(find("meta/model/img_channels").item());
  int T = static_cast<int>(find("meta/schedule/T").item());
  ck.sched = linear_schedule(T, find("meta/schedule/beta_start").item(),
                             find("meta/schedule/beta_end").item());
  ck.scale = static_cast<int>(find("meta/train/scale").item());
  ck.iter = static_cast<int64_t>(find("meta/train/iter").item());
  for (const auto& [name, t] : in) {
    if (name.rfind("p/", 0) == 0) {
      ck.weights.emplace_back(name, t);
    } else if (name == "opt/step") {
      ck.opt.step = static_cast<int64_t>(t.item());
      ck.has_opt = true;
    } else if (name.rfind("opt/m/", 0) == 0) {
      ck.opt.m[name.substr(6)] = t.vec();
      ck.has_opt = true;
    } else if (name.rfind("opt/v/", 0) == 0) {
      ck.opt.v[name.substr(6)] = t.vec();
      ck.has_opt = true;
    }
  }
  return ck;
}

MCFormer LoadedCheckpoint::build_model() const {
  MCFormer model(cfg, img_channels);
  for (const auto& [name, t] : weights) {
    std::string pname = name.substr(2);
    Tensor& p = model.params().at(pname);
    BSR_CHECK(p.shape() == t.shape(),
              "checkpoint weight " << pname << " has shape "
                                   << shape_str(t.shape()) << ", model wants "
                                   << shape_str(p.shape()));
    std::copy(t.data(), t.data() + t.numel(), p.data());
  }
  return model;
}

}  // namespace blindsr
