#pragma once

#include <vector>

#include <torch/torch.h>

#include "dcseg/common.hpp"

namespace dcseg {

/// Settings shared by the two sigmoid contrastive losses. The temperature is
/// carried as a scalar tensor so it can be a learnable parameter; SSIM
/// stabilizer constants are sized for roughly unit-range features.
struct ContrastiveConfig {
  torch::Tensor temperature;  // positive scalar
  double ssim_c1 = 1e-4;
  double ssim_c2 = 9e-4;
  bool include_self_pairs = true;

  static ContrastiveConfig with_temperature(double t) {
    ContrastiveConfig cfg;
    cfg.temperature = torch::tensor(t, torch::kFloat64);
    return cfg;
  }

  void validate() const {
    DCSEG_CHECK(temperature.defined() && temperature.numel() == 1,
                "temperature must be a scalar tensor");
    DCSEG_CHECK(temperature.item<double>() > 0, "temperature must be positive");
    DCSEG_CHECK(ssim_c1 > 0 && ssim_c2 > 0, "SSIM constants must be positive");
  }
};

/// One representation tagged with its (sample, modality) coordinates.
struct RepEntry {
  int64_t sample;
  int64_t modality;
  torch::Tensor rep;
};

/// A full N x M batch of representations: every (sample, modality) pair
/// exactly once. Sample and modality indices are 0-based.
struct PairBatch {
  std::vector<RepEntry> items;

  int64_t size() const { return static_cast<int64_t>(items.size()); }
  void validate() const;

  /// Convenience: builds the batch from a (N, M, ...) stacked tensor.
  static PairBatch from_stacked(const torch::Tensor& stacked);
};

/// +1 when the two indices match, -1 otherwise. Decides positive vs negative
/// pairs for both contrastive directions.
inline int pair_indicator(int64_t u, int64_t u_prime) { return u == u_prime ? 1 : -1; }

/// Channel-wise mean structural similarity between two feature maps of shape
/// (C, d, d, d). Statistics are global per channel (one mean, variance and
/// covariance over all voxels of a channel; no sliding window). Returns a
/// differentiable scalar in [-1, 1]; identical inputs give exactly 1.
torch::Tensor ssim_channel_mean(const torch::Tensor& a, const torch::Tensor& b, double c1,
                                double c2);

/// Pairwise SSIM matrix for n stacked feature maps (n, C, spatial...).
/// Entry (u, w) equals ssim_channel_mean(maps[u], maps[w], c1, c2).
torch::Tensor pairwise_ssim(const torch::Tensor& stacked, double c1, double c2);

/// Pairwise cosine similarity matrix for n stacked vectors (n, C).
/// All vectors must have nonzero norm.
torch::Tensor pairwise_cosine(const torch::Tensor& stacked);

/// Sigmoid contrastive loss over anatomical feature maps: the mean over all
/// ordered pairs of -log sigmoid(f * t * SSIM), where f is +1 for same-sample
/// pairs and -1 otherwise. Self-pairs are part of the sum unless
/// cfg.include_self_pairs is off.
torch::Tensor anatomical_contrastive_loss(const PairBatch& batch, const ContrastiveConfig& cfg);

/// Same construction over modality vectors with cosine similarity, with pairs
/// labeled positive when they share the modality index.
torch::Tensor modality_contrastive_loss(const PairBatch& batch, const ContrastiveConfig& cfg);

/// L1 reconstruction loss: per-modality voxel-mean absolute error (a batch
/// mean when inputs are batched), summed over modalities.
torch::Tensor reconstruction_loss(const std::vector<torch::Tensor>& reconstructions,
                                  const std::vector<torch::Tensor>& targets);

/// Per-voxel weighted cross entropy. Accepts (K, D, H, W) logits with
/// (D, H, W) integer labels, or the batched forms (B, K, D, H, W) and
/// (B, D, H, W). `weights` holds one positive weight per class.
torch::Tensor weighted_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels,
                                     const torch::Tensor& weights);

/// Soft Dice loss over softmax probabilities, averaged over the foreground
/// classes (and the batch, when present). Stays in [0, 1].
torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& labels);

/// Inverse class-frequency weights for the batch at hand, clipped to [1, 50]
/// and renormalized to mean 1. Classes absent from the batch get the clip
/// ceiling before renormalization.
torch::Tensor inverse_frequency_weights(const torch::Tensor& labels, int64_t class_count,
                                        torch::Dtype dtype = torch::kFloat32);

/// Sum of the three disentanglement terms.
inline torch::Tensor disentangle_loss(const torch::Tensor& ana, const torch::Tensor& mod,
                                      const torch::Tensor& rec) {
  return ana + mod + rec;
}

/// Total training objective: seg + reg + alpha * disentangle.
torch::Tensor total_loss(const torch::Tensor& seg, const torch::Tensor& reg,
                         const torch::Tensor& disentangle, double alpha);

}  // namespace dcseg
