#pragma once

#include <map>
#include <string>
#include <vector>

#include "blindsr/rng.hpp"
#include "blindsr/schedule.hpp"
#include "blindsr/tensor.hpp"

namespace blindsr {

// The denoising network: a kernel estimator feeding a kernel- and
// time-modulated transformer encoder-decoder. Sub-blocks are free functions
// over explicit parameter bundles so they can be exercised in isolation.

struct MCFormerConfig {
  int levels = 2;
  std::vector<int> blocks_per_level;    // encoder depth per level, mirrored in the decoder
  std::vector<int> channels_per_level;  // doubles per level in the default profile
  std::vector<int> heads_per_level;
  int refinement_blocks = 1;
  int kernel_code_dim = 10;
  int time_embed_dim = 32;
  double gdfn_expansion = 2.66;

  void validate() const;
  static MCFormerConfig toy();   // small enough for finite-difference checks
  static MCFormerConfig full();  // 4 levels, blocks [2,3,6,8], channels [48..384]
};

enum class InitKind { Zero, One, FanIn, ModWeight };

struct ParamEntry {
  Tensor tensor;
  InitKind kind = InitKind::FanIn;
};

class ParamStore {
 public:
  Tensor& create(const std::string& name, Shape shape, InitKind kind);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::map<std::string, ParamEntry>& entries() { return entries_; }
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }
  int64_t scalar_count() const;
  void set_requires_grad(bool rg);
  void zero_grad();
  void init_values(const Rng& rng);  // per-parameter derived streams

 private:
  std::map<std::string, ParamEntry> entries_;
};

struct DenoiserOutput {
  Tensor eps_hat;      // shape of x_t
  Tensor kernel_code;  // [b, d]
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  // x_t [b,c,h,w], y_lr [b,c,h/s,w/s]. Differentiable in x_t.
  virtual DenoiserOutput evaluate(const Tensor& x_t, int t, const Tensor& y_lr,
                                  const DiffusionSchedule& sched) = 0;
};

// ---- testable sub-blocks ----------------------------------------------------

struct ModulationParams {
  Tensor gamma_w, gamma_b;  // [ted,c], [c]
  Tensor tau_w, tau_b;
};

struct MdtaParams {
  Tensor qkv_w, qkv_b;  // [3c,c,1,1], [3c,1,1]
  Tensor dw_w, dw_b;    // [3c,1,3,3], [3c,1,1]
  Tensor temperature;   // [heads,1,1]
  Tensor proj_w, proj_b;
  int heads = 1;
};

struct GdfnParams {
  Tensor expand_w, expand_b;  // [2*hid,c,1,1]
  Tensor dw_w, dw_b;          // [2*hid,1,3,3]
  Tensor proj_w, proj_b;      // [c,hid,1,1]
};

struct BlockParams {
  ModulationParams m1, m2;
  MdtaParams attn;
  GdfnParams ffn;
};

// embed is the fused time+kernel embedding, [b, ted].
Tensor modulate1(const Tensor& f, const Tensor& embed, const ModulationParams& p);
Tensor modulate2(const Tensor& f, const Tensor& embed, const ModulationParams& p);

struct MdtaDebug {
  Tensor attention;  // [b,heads,c/h,c/h] softmax output
};
Tensor mdta(const Tensor& f, const MdtaParams& p, MdtaDebug* dbg = nullptr);
Tensor gdfn(const Tensor& f, const GdfnParams& p);
Tensor transformer_block(const Tensor& f, const Tensor& embed,
                         const BlockParams& p);

Tensor sinusoidal_embedding(int t, int dim);  // [dim]

// ---- the full network ---------------------------------------------------------

class MCFormer : public Denoiser {
 public:
  MCFormer(MCFormerConfig cfg, int img_channels = 3);

  void init_params(const Rng& rng) { params_.init_values(rng); }

  DenoiserOutput evaluate(const Tensor& x_t, int t, const Tensor& y_lr,
                          const DiffusionSchedule& sched) override;
  // per-item timesteps (training path)
  DenoiserOutput forward(const Tensor& x_t, const std::vector<int>& t_per_item,
                         const Tensor& y_lr);

  // estimator alone; input is concat(y_up, x_t) along channels
  Tensor estimate_kernel_code(const Tensor& est_in);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const MCFormerConfig& config() const { return cfg_; }
  int img_channels() const { return img_channels_; }

 private:
  void register_params();
  void register_block(const std::string& prefix, int channels, int heads);
  BlockParams block_params(const std::string& prefix, int heads);
  Tensor run_blocks(Tensor f, const Tensor& embed, const std::string& prefix,
                    int count, int heads);

  MCFormerConfig cfg_;
  int img_channels_;
  ParamStore params_;
};

// Analytic test double: returns the exact noise for a known clean image and
// a fixed kernel code, so the sampler can be verified without training.
class OracleDenoiser : public Denoiser {
 public:
  OracleDenoiser(Tensor x0_true, std::vector<double> kernel_code);
  DenoiserOutput evaluate(const Tensor& x_t, int t, const Tensor& y_lr,
                          const DiffusionSchedule& sched) override;

 private:
  Tensor x0_;
  std::vector<double> code_;
};

}  // namespace blindsr
