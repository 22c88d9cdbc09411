#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcseg/augment.hpp"
#include "dcseg/networks.hpp"
#include "dcseg/volume.hpp"

namespace dcseg {

/// Per-term enable flags mirroring the ablation rows: anatomical contrastive,
/// modality contrastive, reconstruction, and the per-modality segmentation
/// regularizer. A disabled term contributes exactly zero and its exclusive
/// parameters receive no gradient.
struct LossSwitches {
  bool ana = true;
  bool mod = true;
  bool rec = true;
  bool reg = true;

  bool operator==(const LossSwitches&) const = default;
};

struct TrainConfig {
  double alpha = 0.4;
  double learning_rate = 2e-4;
  int64_t epochs = 500;
  int64_t batch_size = 2;
  double dropout_keep_prob = 0.5;  // Bernoulli keep probability for delta
  LossSwitches switches;
  uint64_t seed = 0;
  int64_t patch_side = 32;
  int64_t steps_per_epoch = 0;            // 0: ceil(dataset size / batch size)
  int64_t checkpoint_interval_epochs = 0; // 0: final checkpoint only
  double grad_clip_norm = 5.0;            // 0 disables clipping
  bool include_self_pairs = true;         // contrastive self-pair convention

  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Scalar view of one step's losses, as they go into the metrics log.
/// Disabled terms appear as exact zeros.
struct StepStats {
  int64_t step = 0;
  int64_t epoch = 0;
  double l_seg = 0, l_reg = 0, l_ana = 0, l_mod = 0, l_rec = 0, total = 0;
  double t_value = 0;  // current contrastive temperature
};

/// Graph-carrying loss terms for one batch; `total` is the Eq.-9 combination
/// of the enabled terms.
struct LossBreakdown {
  torch::Tensor seg, reg, ana, mod, rec, total;
};

/// Live training state: the model, its Adam optimizer, and progress counters.
struct TrainState {
  DCSegModel model{nullptr};
  std::shared_ptr<torch::optim::Adam> optimizer;
  int64_t step = 0;   // completed optimization steps
  int64_t epoch = 0;  // completed epochs
};

/// Everything run_training leaves behind.
struct TrainResult {
  TrainState state;
  std::string final_checkpoint;
  std::string metrics_path;
};

/// Draws one availability mask: independent Bernoulli(p) per modality,
/// resampled until at least one modality survives.
AvailabilityMask sample_availability(int64_t modality_count, double keep_prob,
                                     std::mt19937_64& rng);

/// Computes every enabled loss term for one batch. x: (B,M,s,s,s) float,
/// y: (B,s,s,s) int64, mask: (B,M) float zeros/ones. Disabled switches skip
/// the corresponding decoder work entirely.
LossBreakdown assemble_losses(DCSegModel& model, const torch::Tensor& x, const torch::Tensor& y,
                              const torch::Tensor& mask, const TrainConfig& cfg);

/// One optimization step over an already-assembled batch: sample one mask per
/// item from `rng`, assemble losses, backpropagate, clip, and apply Adam.
/// Throws DivergenceError naming the first non-finite loss component.
StepStats train_step(TrainState& state, const torch::Tensor& x, const torch::Tensor& y,
                     const TrainConfig& cfg, std::mt19937_64& rng);

/// Full training loop: builds (or resumes) the model, iterates epochs over
/// the dataset with augmentation, appends one metrics row per step to
/// metrics.csv, and writes dcseg_ckpt_v1 checkpoints at the configured cadence
/// plus a final one. Deterministic for fixed (config, seed, data): every
/// step's batch choice, augmentation, and masks derive from the step index
/// alone, which is also what makes resumed runs bit-identical.
TrainResult run_training(const std::vector<MultimodalVolume>& dataset, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const AugmentationConfig& acfg,
                         const std::string& out_dir, const std::string& resume_from = "",
                         torch::Device device = torch::kCPU);

}  // namespace dcseg
