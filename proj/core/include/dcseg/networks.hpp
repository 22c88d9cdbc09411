#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "dcseg/common.hpp"
#include "dcseg/volume.hpp"

namespace dcseg {

/// Architecture hyperparameters. The encoder halves resolution between
/// levels, so the anatomical map lives at patch_side / 2^(levels-1); decoder
/// widths run bottleneck-to-full-resolution and must list the same number of
/// levels.
struct ModelConfig {
  int64_t modality_count = 4;  // M
  int64_t class_count = 4;     // K
  int64_t anat_channels = 8;   // C, channels of the anatomical map
  int64_t modality_dim = 8;    // C_mod, length of the modality vector
  std::vector<int64_t> encoder_widths = {8, 16, 32};
  std::vector<int64_t> decoder_widths = {24, 12, 6};
  int64_t patch_side = 32;
  double temperature_init = 10.0;

  int64_t levels() const { return static_cast<int64_t>(encoder_widths.size()); }
  int64_t downsample_factor() const { return int64_t{1} << (levels() - 1); }
  int64_t rep_side() const { return patch_side / downsample_factor(); }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Two 3x3x3 convolutions with leaky-ReLU activations.
struct ConvBlockImpl : torch::nn::Module {
  ConvBlockImpl(int64_t in_ch, int64_t out_ch);
  torch::Tensor forward(torch::Tensor x);
  torch::nn::Conv3d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Per-modality anatomical encoder: a single-conv stem followed by
/// average-pool downsampling and a double-conv block per level, projected to
/// C channels through a 1x1x1 head with tanh (bounded features suit the
/// SSIM stabilizer constants).
struct AnatomicalEncoderImpl : torch::nn::Module {
  explicit AnatomicalEncoderImpl(const ModelConfig& cfg);
  torch::Tensor forward(torch::Tensor x);  // (B,1,s,s,s) -> (B,C,d,d,d)
  torch::nn::Conv3d stem{nullptr}, head{nullptr};
  torch::nn::ModuleList blocks;
};
TORCH_MODULE(AnatomicalEncoder);

/// Per-modality appearance encoder: strided convolutions, global average
/// pooling, and a two-layer head with tanh output. The bounded nonlinearity
/// keeps vectors finite; callers still verify the nonzero-norm contract.
struct ModalityEncoderImpl : torch::nn::Module {
  explicit ModalityEncoderImpl(const ModelConfig& cfg);
  torch::Tensor forward(torch::Tensor x);  // (B,1,s,s,s) -> (B,C_mod)
  torch::nn::Conv3d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(ModalityEncoder);

/// Availability-masked gated fusion: per-modality 1x1x1 gates produce
/// per-voxel scores, masked-out scores are replaced by -1e9 before a softmax
/// over modalities, and the weighted sum passes through a channel-mixing
/// projection. Masked-out maps are also multiplied by zero, so their values
/// can never reach the output.
struct GatedFusionImpl : torch::nn::Module {
  explicit GatedFusionImpl(const ModelConfig& cfg);
  // anats: M maps of (B,C,d,d,d); mask: (B,M) float zeros/ones.
  torch::Tensor forward(const std::vector<torch::Tensor>& anats, const torch::Tensor& mask);
  torch::nn::ModuleList gates;
  torch::nn::Conv3d proj{nullptr};
};
TORCH_MODULE(GatedFusion);

/// Segmentation decoder shared by the per-modality regularizer and the fused
/// head: double-conv blocks with trilinear upsampling between levels and a
/// single slim convolution at full resolution.
struct SegDecoderImpl : torch::nn::Module {
  explicit SegDecoderImpl(const ModelConfig& cfg);
  torch::Tensor forward(torch::Tensor x);  // (B,C,d,d,d) -> (B,K,s,s,s)
  torch::nn::ModuleList blocks;
  torch::nn::Conv3d last{nullptr}, head{nullptr};
};
TORCH_MODULE(SegDecoder);

/// Modality-conditioned reconstruction decoder. The modality vector
/// modulates every level through learned per-channel scale and shift
/// (initialized to identity, so conditioning is a no-op until trained).
struct ReconDecoderImpl : torch::nn::Module {
  explicit ReconDecoderImpl(const ModelConfig& cfg);
  // z: (B,C,d,d,d), m: (B,C_mod) -> (B,1,s,s,s)
  torch::Tensor forward(torch::Tensor z, const torch::Tensor& m);
  torch::nn::ModuleList blocks, films;
  torch::nn::Conv3d last{nullptr}, head{nullptr};

 private:
  torch::Tensor modulate(torch::Tensor x, const torch::Tensor& m, int64_t level);
};
TORCH_MODULE(ReconDecoder);

/// Everything produced by one training forward pass, in the layout the loss
/// assembly consumes. Vectors are indexed by modality.
struct ForwardOutputs {
  std::vector<torch::Tensor> anatomical;       // M x (B,C,d,d,d)
  std::vector<torch::Tensor> modality;         // M x (B,C_mod)
  torch::Tensor fused;                         // (B,C,d,d,d)
  std::vector<torch::Tensor> reconstructions;  // M x (B,1,s,s,s)
  std::vector<torch::Tensor> separate_logits;  // M x (B,K,s,s,s)
  torch::Tensor fused_logits;                  // (B,K,s,s,s)
};

/// The full DC-Seg graph: per-modality anatomical and modality encoders,
/// gated fusion, per-modality reconstruction decoders, one weight-shared
/// separate segmentation decoder, one fused segmentation decoder, and the
/// learnable contrastive temperature (stored as log t).
struct DCSegModelImpl : torch::nn::Module {
  explicit DCSegModelImpl(ModelConfig cfg);

  /// a_j = E_j^ana(x_j). Accepts (1,s,s,s) or batched (B,1,s,s,s); the
  /// unbatched form returns (C,d,d,d).
  torch::Tensor encode_anatomical(const torch::Tensor& x, int64_t j);
  /// m_j = E_j^mod(x_j); (1,s,s,s) -> (C_mod,) or batched.
  torch::Tensor encode_modality(const torch::Tensor& x, int64_t j);
  /// z = F(delta_1 a_1, ..., delta_M a_M) for one subject.
  torch::Tensor fuse_anatomical(const std::vector<torch::Tensor>& anats,
                                const AvailabilityMask& mask);
  /// Batched fusion with one mask row per item.
  torch::Tensor fuse_anatomical(const std::vector<torch::Tensor>& anats,
                                const torch::Tensor& mask);
  /// Reconstruction of modality j from the fused map and its modality vector.
  torch::Tensor decode_reconstruction(const torch::Tensor& z, const torch::Tensor& m, int64_t j);
  /// Weight-shared single-modality segmentation logits (the regularizer path).
  torch::Tensor decode_separate(const torch::Tensor& a);
  /// Final segmentation logits from the fused representation.
  torch::Tensor decode_fused(const torch::Tensor& z);

  /// One full training pass: encodes all M modalities, fuses under the given
  /// per-item masks, and decodes reconstructions plus both logit sets.
  /// x: (B,M,s,s,s); mask: (B,M) float zeros/ones with nonzero rows.
  ForwardOutputs forward_training(const torch::Tensor& x, const torch::Tensor& mask);

  torch::Tensor temperature() const { return log_t.exp(); }

  ModelConfig config;
  torch::nn::ModuleList enc_ana, enc_mod, dec_rec;
  GatedFusion fusion{nullptr};
  SegDecoder dec_sep{nullptr}, dec_fuse{nullptr};
  torch::Tensor log_t;

 private:
  torch::Tensor run_single_input(const torch::Tensor& x, int64_t j, bool anatomical);
};
TORCH_MODULE(DCSegModel);

}  // namespace dcseg
