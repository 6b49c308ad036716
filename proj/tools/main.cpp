// blindsr command line: dataset synthesis, PCA fitting, training, guided
// restoration and evaluation. Usage errors exit 2, runtime errors exit 1.

#include <CLI11.hpp>

#include <filesystem>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include "blindsr/checkpoint.hpp"
#include "blindsr/common.hpp"
#include "blindsr/config.hpp"
#include "blindsr/degrade.hpp"
#include "blindsr/gradcheck.hpp"
#include "blindsr/image_io.hpp"
#include "blindsr/kernels.hpp"
#include "blindsr/metrics.hpp"
#include "blindsr/sample.hpp"
#include "blindsr/toyimg.hpp"
#include "blindsr/train.hpp"

namespace fs = std::filesystem;
using namespace blindsr;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& t : split_csv(s)) out.push_back(std::stoi(t));
  return out;
}

// kernel_path is either a BDK1 file or a synthesis spec:
//   iso:SIZE:SIGMA
//   aniso:SIZE:SX:SY:THETA:NOISE_AMP
BlurKernel resolve_kernel(const std::string& kernel_path, Rng& rng) {
  if (kernel_path.rfind("iso:", 0) == 0 || kernel_path.rfind("aniso:", 0) == 0) {
    auto parts = split_csv(kernel_path);
    (void)parts;
    std::vector<std::string> f;
    std::stringstream ss(kernel_path);
    std::string tok;
    while (std::getline(ss, tok, ':')) f.push_back(tok);
    if (f[0] == "iso") {
      BSR_CHECK(f.size() == 3, "kernel spec wants iso:SIZE:SIGMA, got " << kernel_path);
      return make_isotropic(std::stoi(f[1]), std::stod(f[2]));
    }
    BSR_CHECK(f.size() == 6,
              "kernel spec wants aniso:SIZE:SX:SY:THETA:NOISE_AMP, got " << kernel_path);
    return make_anisotropic(std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]),
                            std::stod(f[4]), std::stod(f[5]), rng);
  }
  return load_kernel(kernel_path);
}

struct TrainSetup {
  TrainConfig cfg;
  std::string pca_path;
  std::string corpus_spec;
  KVConfig raw;
};

TrainSetup parse_train_config(const std::string& path) {
  TrainSetup ts;
  KVConfig kv = KVConfig::parse_file(path);
  ts.raw = kv;
  TrainConfig& c = ts.cfg;

  std::string profile = kv.get("model", "profile", "toy");
  if (profile == "full") {
    c = full_protocol_config();
  } else {
    BSR_CHECK(profile == "toy", "model.profile must be toy or full");
  }
  if (kv.has("model", "levels")) {
    c.model.levels = static_cast<int>(kv.get_int("model", "levels", 2));
    c.model.blocks_per_level = parse_int_list(kv.get("model", "blocks"));
    c.model.channels_per_level = parse_int_list(kv.get("model", "channels"));
    c.model.heads_per_level = parse_int_list(kv.get("model", "heads"));
  }
  c.model.refinement_blocks = static_cast<int>(
      kv.get_int("model", "refinement", c.model.refinement_blocks));
  c.model.kernel_code_dim = static_cast<int>(
      kv.get_int("model", "kernel_code_dim", c.model.kernel_code_dim));
  c.model.time_embed_dim = static_cast<int>(
      kv.get_int("model", "time_embed_dim", c.model.time_embed_dim));

  c.T = static_cast<int>(kv.get_int("schedule", "T", c.T));
  c.beta_start = kv.get_double("schedule", "beta_start", c.beta_start);
  c.beta_end = kv.get_double("schedule", "beta_end", c.beta_end);

  c.scale = static_cast<int>(kv.get_int("degradation", "scale", c.scale));
  std::string fam = kv.get("degradation", "family", "iso");
  c.family = fam == "aniso" ? KernelFamily::Anisotropic : KernelFamily::Isotropic;
  c.kernel_size = static_cast<int>(
      kv.get_int("degradation", "kernel_size", c.kernel_size));
  c.degradation_noise_sigma =
      kv.get_double("degradation", "noise_sigma", c.degradation_noise_sigma);
  c.hr_patch = static_cast<int>(kv.get_int("degradation", "hr_patch", c.hr_patch));

  c.lr = kv.get_double("optimizer", "lr", c.lr);
  c.batch_size = static_cast<int>(kv.get_int("optimizer", "batch_size", c.batch_size));
  c.total_iters = kv.get_int("optimizer", "total_iters", c.total_iters);
  c.lr_halving_interval =
      kv.get_int("optimizer", "lr_halving_interval", c.lr_halving_interval);
  c.seed = static_cast<uint64_t>(kv.get_int("optimizer", "seed", 0));
  c.hflip = kv.get_int("optimizer", "hflip", 0) != 0;

  c.out_dir = kv.get("io", "out_dir", "train_out");
  c.checkpoint_every = kv.get_int("io", "checkpoint_every", c.checkpoint_every);
  ts.pca_path = kv.get("io", "pca", "");
  ts.corpus_spec = kv.get("io", "corpus", "synthetic:64");
  return ts;
}

ImageCorpus load_corpus(const std::string& spec, const TrainConfig& cfg) {
  if (spec.rfind("synthetic:", 0) == 0) {
    int count = std::stoi(spec.substr(10));
    int side = std::max(64, cfg.hr_patch);
    return ImageCorpus::synthetic(count, cfg.img_channels, side, side,
                                  cfg.seed ^ 0x5EEDC0FFEEULL);
  }
  std::vector<Tensor> imgs;
  if (fs::is_directory(spec)) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(spec))
      if (e.path().extension() == ".png") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) imgs.push_back(load_png(f));
  } else {
    for (const auto& e : read_manifest(spec)) imgs.push_back(load_png(e.hr_path));
  }
  return ImageCorpus::from_images(std::move(imgs));
}

KernelPCA load_or_fit_pca(const std::string& path, const TrainConfig& cfg) {
  if (!path.empty() && fs::exists(path)) return load_pca(path);
  std::cerr << "fitting kernel PCA (10000 kernels, d="
            << cfg.model.kernel_code_dim << ", size=" << cfg.kernel_size
            << ", seed 0)...\n";
  KernelPCA pca = fit_pca(pca_training_corpus(10000, cfg.kernel_size, 0),
                          cfg.model.kernel_code_dim);
  if (!path.empty()) {
    save_pca(path, pca);
    std::cerr << "wrote " << path << "\n";
  }
  return pca;
}

int run_parallel_rows(size_t n, const std::function<void(size_t)>& fn) {
  unsigned hw = std::thread::hardware_concurrency();
  if (deterministic_mode() || hw <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return 0;
  }
  std::vector<std::future<void>> futs;
  std::atomic<size_t> next{0};
  unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(n));
  for (unsigned w = 0; w < workers; ++w) {
    futs.push_back(std::async(std::launch::async, [&] {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    }));
  }
  for (auto& f : futs) f.get();
  return 0;
}

// ---- subcommands ---------------------------------------------------------------

int cmd_degrade(const std::string& manifest, const std::string& out_dir,
                uint64_t seed) {
  fs::create_directories(out_dir);
  auto entries = read_manifest(manifest);
  Rng root(seed);
  std::vector<ManifestEntry> produced;
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    Rng rng = root.split("row", static_cast<uint64_t>(i));
    Tensor hr = load_png(e.hr_path);
    BlurKernel k = resolve_kernel(e.kernel_path, rng);
    DegradationSpec spec{k, e.scale, e.noise_sigma, PaddingMode::Replicate};
    Tensor lr = degrade_apply(spec, hr, rng);
    std::string stem = fs::path(e.hr_path).stem().string();
    std::string lr_path = out_dir + "/" + stem + "_lr.png";
    std::string k_path = out_dir + "/" + stem + "_k.bdk";
    save_png(lr_path, lr);
    save_kernel(k_path, k);
    produced.push_back({e.hr_path, k_path, e.scale, e.noise_sigma});
    std::cout << lr_path << "\n";
  }
  write_manifest(out_dir + "/manifest.tsv", produced);
  return 0;
}

int cmd_fit_pca(const std::string& out, int count, int d, int size,
                uint64_t seed) {
  KernelPCA pca = fit_pca(pca_training_corpus(count, size, seed), d);
  save_pca(out, pca);
  std::cout << "wrote " << out << " (d=" << d << ", size=" << size
            << ", recon_mse_threshold=" << pca.recon_mse_threshold << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  TrainSetup ts = parse_train_config(config_path);
  TrainConfig& cfg = ts.cfg;
  std::string pca_path = ts.pca_path.empty()
                             ? cfg.out_dir + "/pca.bdp"
                             : ts.pca_path;
  fs::create_directories(cfg.out_dir);
  KernelPCA pca = load_or_fit_pca(pca_path, cfg);
  BSR_CHECK(pca.dim == cfg.model.kernel_code_dim,
            "PCA dim " << pca.dim << " != model kernel_code_dim "
                       << cfg.model.kernel_code_dim);
  ImageCorpus corpus = load_corpus(ts.corpus_spec, cfg);

  std::string fp = config_fingerprint(ts.raw, cfg.seed);
  std::cout << "config fingerprint: " << fp << "\n";

  MCFormer model(cfg.model, cfg.img_channels);
  AdamState opt;
  int64_t start_iter = 0;
  if (!resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resume);
    model = ck.build_model();
    BSR_CHECK(ck.has_opt, "resume checkpoint has no optimizer state");
    opt = ck.opt;
    start_iter = ck.iter;
    std::cout << "resumed from " << resume << " at iter " << start_iter << "\n";
  } else {
    model.init_params(Rng(cfg.seed).split("init"));
  }
  TrainResult res = train_loop(cfg, model, corpus, pca, opt, start_iter);
  std::cout << "trained to iter " << res.final_iter << ", checkpoint: "
            << res.final_checkpoint << "\n";
  return 0;
}

int cmd_restore(const std::string& lr_path, const std::string& ckpt_path,
                const std::string& pca_path, double lambda, uint64_t seed,
                int scale_override, const std::string& out_path,
                const std::string& kernel_out, const std::string& trace_out) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  MCFormer model = ck.build_model();
  KernelPCA pca = load_pca(pca_path);
  int s = scale_override > 0 ? scale_override : ck.scale;

  Tensor y = load_png(lr_path);
  SamplerConfig cfg;
  cfg.lambda = lambda;
  cfg.seed = seed;
  SampleResult res = sample(model, ck.sched, y, s, pca, cfg);

  save_png(out_path, res.x0_hat);
  std::cout << "wrote " << out_path << "\n";
  if (!kernel_out.empty()) {
    save_kernel(kernel_out, res.k0_hat);
    std::cout << "wrote " << kernel_out << "\n";
  }
  if (!trace_out.empty()) {
    write_trace_csv(trace_out, res.trace);
    std::cout << "wrote " << trace_out << "\n";
  }
  return 0;
}

struct EvalRowResult {
  ReportRow row;
};

int cmd_eval(const std::string& manifest, const std::string& ckpt_path,
             const std::string& pca_path, double lambda, uint64_t seed,
             const std::string& out_path) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  MCFormer model = ck.build_model();
  KernelPCA pca = load_pca(pca_path);
  auto entries = read_manifest(manifest);
  BSR_CHECK(!entries.empty(), "eval: empty manifest");

  KVConfig fpcfg;
  fpcfg.set("eval", "manifest", manifest);
  fpcfg.set("eval", "ckpt", ckpt_path);
  fpcfg.set("eval", "lambda", std::to_string(lambda));

  ExperimentReport report;
  report.fingerprint = config_fingerprint(fpcfg, seed);
  report.rows.resize(entries.size());

  Rng root(seed);
  run_parallel_rows(entries.size(), [&](size_t i) {
    const auto& e = entries[i];
    Rng rng = root.split("row", static_cast<uint64_t>(i));
    Tensor hr = load_png(e.hr_path);
    BlurKernel k = resolve_kernel(e.kernel_path, rng);
    DegradationSpec spec{k, e.scale, e.noise_sigma, PaddingMode::Replicate};
    Tensor y = degrade_apply(spec, hr, rng);
    DegradationSpec clean{k, e.scale, 0.0, PaddingMode::Replicate};
    Tensor y_ref = degrade_linear(clean, hr);

    SamplerConfig scfg;
    scfg.lambda = lambda;
    scfg.seed = rng.split("sampler").seed();
    SampleResult res = sample(model, ck.sched, y, e.scale, pca, scfg);

    ReportRow& row = report.rows[i];
    row.id = fs::path(e.hr_path).stem().string();
    row.psnr = psnr(res.x0_hat, hr, 1.0);
    row.kernel_l1 = kernel_l1(res.k0_hat, k);
    row.lr_consistency_psnr = lr_consistency_psnr(res.k0_hat, hr, y_ref, e.scale);
  });

  report.write_csv(out_path);
  std::cout << "wrote " << out_path << " (mean psnr " << report.mean_psnr()
            << ", mean kernel L1 " << report.mean_kernel_l1() << ")\n";
  return 0;
}

int cmd_lambda_sweep(const std::string& manifest, const std::string& ckpt_path,
                     const std::string& pca_path, const std::string& lambdas_s,
                     uint64_t seed, const std::string& out_path) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  MCFormer model = ck.build_model();
  KernelPCA pca = load_pca(pca_path);
  auto entries = read_manifest(manifest);
  BSR_CHECK(!entries.empty(), "lambda-sweep: empty manifest");

  std::vector<double> lambdas;
  for (const auto& t : split_csv(lambdas_s)) lambdas.push_back(std::stod(t));

  Rng root(seed);
  std::vector<SweepInstance> set;
  int s = entries[0].scale;
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    BSR_CHECK(e.scale == s, "lambda-sweep: mixed scales in manifest");
    Rng rng = root.split("row", static_cast<uint64_t>(i));
    SweepInstance inst;
    inst.x0 = load_png(e.hr_path);
    inst.kernel = resolve_kernel(e.kernel_path, rng);
    DegradationSpec spec{inst.kernel, e.scale, e.noise_sigma, PaddingMode::Replicate};
    inst.y = degrade_apply(spec, inst.x0, rng);
    set.push_back(std::move(inst));
  }

  auto rows = lambda_sweep(model, ck.sched, set, s, pca, lambdas, seed);
  std::ofstream os(out_path, std::ios::trunc);
  BSR_CHECK(os.is_open(), "cannot open for writing: " << out_path);
  os.precision(12);
  os << "lambda,mean_residual,mean_psnr\n";
  for (const auto& r : rows) {
    os << r.lambda << ',' << r.mean_residual << ',' << r.mean_psnr << '\n';
    std::cout << "lambda=" << r.lambda << " residual=" << r.mean_residual
              << " psnr=" << r.mean_psnr << "\n";
  }
  return 0;
}

int cmd_gradcheck(int seeds, double op_tol, double net_tol) {
  bool ok = true;
  for (const auto& r : run_op_gradchecks(seeds, op_tol)) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name
              << " max_rel=" << r.max_rel << "\n";
    ok = ok && r.pass;
  }
  GradCheckResult e2e = run_end_to_end_gradcheck(seeds, net_tol);
  std::cout << (e2e.pass ? "[PASS] " : "[FAIL] ") << e2e.name
            << " max_rel=" << e2e.max_rel << "\n";
  ok = ok && e2e.pass;
  if (!ok) throw std::runtime_error("gradient checks failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blind super-resolution via kernel-aware guided diffusion"};
  app.require_subcommand(1);

  // degrade
  std::string d_manifest, d_out = "degraded";
  uint64_t d_seed = 0;
  auto* deg = app.add_subcommand("degrade", "synthesize LR images + kernels from a manifest");
  deg->add_option("--manifest", d_manifest, "TSV: hr<TAB>kernel<TAB>s<TAB>sigma")->required();
  deg->add_option("--out", d_out, "output directory");
  deg->add_option("--seed", d_seed, "root seed");

  // fit-pca
  std::string p_out = "pca.bdp";
  int p_count = 10000, p_d = 10, p_size = 21;
  uint64_t p_seed = 0;
  auto* fp = app.add_subcommand("fit-pca", "fit the blur-kernel PCA code space");
  fp->add_option("--out", p_out, "output BDP1 file");
  fp->add_option("--count", p_count, "training kernels");
  fp->add_option("--d", p_d, "code dimension");
  fp->add_option("--size", p_size, "kernel size (odd)");
  fp->add_option("--seed", p_seed, "root seed");

  // train
  std::string t_config, t_resume;
  auto* tr = app.add_subcommand("train", "train the denoiser (config file driven)");
  tr->add_option("--config", t_config, "key-value config file")->required();
  tr->add_option("--resume", t_resume, "checkpoint to resume from");

  // restore
  std::string r_lr, r_ckpt, r_pca, r_out = "sr.png", r_kout, r_trace;
  double r_lambda = 1.0;
  uint64_t r_seed = 0;
  int r_scale = 0;
  auto* re = app.add_subcommand("restore", "blind SR of one LR image");
  re->add_option("--lr", r_lr, "input LR png")->required();
  re->add_option("--ckpt", r_ckpt, "model checkpoint")->required();
  re->add_option("--pca", r_pca, "kernel PCA file")->required();
  re->add_option("--lambda", r_lambda, "guidance weight");
  re->add_option("--seed", r_seed, "sampler seed");
  re->add_option("--scale", r_scale, "override checkpoint scale");
  re->add_option("--out", r_out, "output SR png");
  re->add_option("--kernel-out", r_kout, "write estimated kernel (BDK1)");
  re->add_option("--trace", r_trace, "write residual trace CSV");

  // eval
  std::string e_manifest, e_ckpt, e_pca, e_out = "report.csv";
  double e_lambda = 1.0;
  uint64_t e_seed = 0;
  auto* ev = app.add_subcommand("eval", "restore a manifest and report metrics");
  ev->add_option("--manifest", e_manifest)->required();
  ev->add_option("--ckpt", e_ckpt)->required();
  ev->add_option("--pca", e_pca)->required();
  ev->add_option("--lambda", e_lambda);
  ev->add_option("--seed", e_seed);
  ev->add_option("--out", e_out, "report CSV");

  // lambda-sweep
  std::string s_manifest, s_ckpt, s_pca, s_lambdas = "0,0.1,1,5,10",
              s_out = "sweep.csv";
  uint64_t s_seed = 0;
  auto* sw = app.add_subcommand("lambda-sweep", "guidance-weight ablation");
  sw->add_option("--manifest", s_manifest)->required();
  sw->add_option("--ckpt", s_ckpt)->required();
  sw->add_option("--pca", s_pca)->required();
  sw->add_option("--lambdas", s_lambdas, "comma separated");
  sw->add_option("--seed", s_seed);
  sw->add_option("--out", s_out, "sweep CSV");

  // gradcheck
  int g_seeds = 20;
  double g_op_tol = 1e-4, g_net_tol = 1e-3;
  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference suites");
  gc->add_option("--seeds", g_seeds);
  gc->add_option("--op-tol", g_op_tol);
  gc->add_option("--net-tol", g_net_tol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*deg) return cmd_degrade(d_manifest, d_out, d_seed);
    if (*fp) return cmd_fit_pca(p_out, p_count, p_d, p_size, p_seed);
    if (*tr) return cmd_train(t_config, t_resume);
    if (*re)
      return cmd_restore(r_lr, r_ckpt, r_pca, r_lambda, r_seed, r_scale, r_out,
                         r_kout, r_trace);
    if (*ev) return cmd_eval(e_manifest, e_ckpt, e_pca, e_lambda, e_seed, e_out);
    if (*sw)
      return cmd_lambda_sweep(s_manifest, s_ckpt, s_pca, s_lambdas, s_seed, s_out);
    if (*gc) return cmd_gradcheck(g_seeds, g_op_tol, g_net_tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
