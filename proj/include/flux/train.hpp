#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "flux/fluxvit.hpp"
#include "flux/tokenopt.hpp"
#include "flux/videogen.hpp"

namespace flux {

struct TrainConfig {
  int steps = 300;
  int batch_size = 4;
  double lr = 1e-3;
  double warmup_frac = 0.1;
  double weight_decay = 0.05;
  double beta1 = 0.9, beta2 = 0.98, adam_eps = 1e-8;
  Index k1 = 64, k2 = 32, k3 = 16;  // student token counts, k1 >= k2 >= k3
  Index k_teacher = 64;             // teacher token count (Flux-PT)
  int groups = 4;                   // N
  int norm_p = 2;                   // p for dynamic scores
  double sl1_beta = 1.0;            // smooth-L1 transition point
  double lambda_sd = 1.0;           // self-distillation weight
  int eval_every = 50;
  std::uint64_t seed = 0;
  bool raw_patch_scores = false;

  void validate() const;
};

struct MetricsRow {
  int step = 0;
  double total_loss = 0, ce_k1 = 0, ce_k2 = 0, ce_k3 = 0, sd_loss = 0;
  double acc_k1 = 0, acc_k2 = 0, acc_k3 = 0;
  double wall_time = 0;
};

struct TrainResult {
  std::vector<MetricsRow> log;
  bool aborted = false;
};

// Decoupled-weight-decay adaptive-moment optimizer; decay applies to
// rank >= 2 weights only.
class AdamW {
 public:
  AdamW(std::vector<Tensord> params, const TrainConfig& cfg);
  void step(double lr);

 private:
  std::vector<Tensord> params_;
  std::vector<Eigen::VectorXd> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  long t_ = 0;
};

double cosine_lr(int step, int total_steps, double lr_max, double warmup_frac);

// smooth-L1 between L2-normalized projected student rows and L2-normalized
// teacher rows
Tensord align_loss(const Tensord& student_feats, const Tensord& teacher_feats,
                   const Tensord& w_proj, const Tensord& b_proj, double beta);

struct PtStepOut {
  Tensord loss;
};

// One Flux-PT batch: flexi-sampled grids, group-dynamic teacher mask of
// exactly k_teacher tokens, CLS-attention student sub-masks at the three
// counts, masked feature alignment. Teacher receives no gradient.
PtStepOut flux_pt_step(const std::vector<const VideoSample*>& batch,
                       FluxViTParams& student, const FluxViTConfig& s_cfg,
                       const FluxViTParams& teacher, const FluxViTConfig& t_cfg,
                       const SamplerConfig& sampler, const TrainConfig& tc,
                       std::uint64_t step_seed);

struct FtStepOut {
  Tensord loss;
  double ce_k1 = 0, ce_k2 = 0, ce_k3 = 0, sd = 0;
};

// One Flux-FT batch: three forwards over nested masks from one
// group-dynamic score ordering; CE at each count plus stop-gradient
// smooth-L1 self-distillation larger -> smaller.
FtStepOut flux_ft_step(const std::vector<const VideoSample*>& batch,
                       FluxViTParams& params, const FluxViTConfig& cfg,
                       const SamplerConfig& sampler, const TrainConfig& tc,
                       std::uint64_t step_seed);

// classification accuracy at token count k on a fixed (largest-pool) grid
double eval_accuracy(FluxViTParams& params, const FluxViTConfig& cfg,
                     const SamplerConfig& sampler, const TrainConfig& tc,
                     const std::vector<VideoSample>& data, Index k);

enum class TrainMode { kPretrain, kFinetune };

// Set by the CLI's signal handler; the training loop stops at the next step
// boundary so the caller can write the latest checkpoint.
extern std::atomic<bool> stop_requested;

TrainResult train(TrainMode mode, FluxViTParams& params,
                  const FluxViTConfig& cfg, const FluxViTParams* teacher,
                  const FluxViTConfig* teacher_cfg, const SamplerConfig& sampler,
                  const TrainConfig& tc, const std::vector<VideoSample>& data,
                  const std::vector<VideoSample>& eval_data);

std::string metrics_to_csv(const std::vector<MetricsRow>& log);
std::string metrics_to_jsonl(const std::vector<MetricsRow>& log,
                             std::uint64_t seed, const std::string& config_hash);

}  // namespace flux
