#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blindsr/checkpoint.hpp"
#include "blindsr/degrade.hpp"
#include "blindsr/kernels.hpp"
#include "blindsr/mcformer.hpp"
#include "blindsr/schedule.hpp"

namespace blindsr {

// Joint training of the noise objective and the kernel-code L1 objective on
// synthesized LR/HR/kernel triples.

struct TrainConfig {
  MCFormerConfig model = MCFormerConfig::toy();
  int img_channels = 3;

  int batch_size = 4;
  int hr_patch = 32;
  int64_t total_iters = 2000;
  double lr = 2e-3;
  int64_t lr_halving_interval = 100000;

  int scale = 2;
  KernelFamily family = KernelFamily::Isotropic;
  int kernel_size = 21;
  double degradation_noise_sigma = 0.0;

  int T = 50;
  double beta_start = 2e-3, beta_end = 0.4;

  uint64_t seed = 0;
  bool hflip = false;  // horizontal flip augmentation; forced off in
                       // deterministic mode
  int64_t checkpoint_every = 1000;
  std::string out_dir;  // checkpoints + metrics.csv; empty = no file output

  void validate() const;
  double lr_at(int64_t iter) const;  // halves every lr_halving_interval
};

// Full §-protocol analogue at production scale; not an acceptance target.
TrainConfig full_protocol_config();

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::map<std::string, std::vector<double>> m, v;
};

// One Adam update over every parameter (missing grads count as zero).
void adam_step(ParamStore& params, AdamState& state, double lr);

class ImageCorpus {
 public:
  static ImageCorpus synthetic(int count, int channels, int h, int w,
                               uint64_t seed);
  static ImageCorpus from_images(std::vector<Tensor> images);
  const Tensor& image(size_t i) const { return images_[i]; }
  size_t size() const { return images_.size(); }

 private:
  std::vector<Tensor> images_;
};

struct Batch {
  Tensor x0;                       // [b,c,p,p]
  Tensor y;                        // [b,c,p/s,p/s]
  Tensor k_code_gt;                // [b,d]
  std::vector<BlurKernel> kernels; // ground truth, per item
};

Batch synthesize_batch(const TrainConfig& cfg, const ImageCorpus& corpus,
                       const KernelPCA& pca, Rng& rng);

// mean((eps - eps_hat)^2) + mean(|code_gt - code|), unit weighting
Tensor train_loss(const DenoiserOutput& out, const Tensor& eps,
                  const Tensor& k_code_gt);

struct StepMetrics {
  double loss = 0.0, eps_mse = 0.0, kernel_l1 = 0.0, lr = 0.0;
};

// Draws per-item t and eps, forms the noisy input, evaluates the model,
// applies one Adam update. Throws on a non-finite loss.
StepMetrics train_step(MCFormer& model, AdamState& opt, const Batch& batch,
                       const DiffusionSchedule& sched, double lr,
                       Rng& rng_timestep, Rng& rng_noise);

struct TrainResult {
  int64_t final_iter = 0;
  std::vector<StepMetrics> history;
  std::string final_checkpoint;  // path, empty when out_dir unset
};

// Runs [start_iter, total_iters). All per-iteration randomness derives from
// (seed, iter), so a resumed run is bit-identical to an uninterrupted one.
TrainResult train_loop(const TrainConfig& cfg, MCFormer& model,
                       const ImageCorpus& corpus, const KernelPCA& pca,
                       AdamState& opt, int64_t start_iter = 0);

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::string& path, const MCFormer& model,
                     const DiffusionSchedule& sched, int scale, int64_t iter,
                     const AdamState* opt = nullptr);

struct LoadedCheckpoint {
  MCFormerConfig cfg;
  int img_channels = 3;
  int scale = 1;
  int64_t iter = 0;
  DiffusionSchedule sched;
  AdamState opt;
  bool has_opt = false;
  NamedTensors weights;  // "p/..." entries

  MCFormer build_model() const;  // constructs and loads weights
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace blindsr
