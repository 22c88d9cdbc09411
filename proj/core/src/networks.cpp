#include "dcseg/networks.hpp"

#include <cmath>
#include <utility>

namespace dcseg {

namespace F = torch::nn::functional;

namespace {

constexpr double kLeakySlope = 0.01;
// Replaces masked-out gate scores before the softmax; far below any tanh-fed
// gate output, so masked weights underflow to exactly zero.
constexpr double kMaskedScore = -1e9;

torch::nn::Conv3d make_conv(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride = 1) {
  auto conv = torch::nn::Conv3d(
      torch::nn::Conv3dOptions(in_ch, out_ch, kernel).stride(stride).padding(kernel / 2));
  torch::nn::init::kaiming_normal_(conv->weight, kLeakySlope, torch::kFanIn, torch::kLeakyReLU);
  torch::nn::init::zeros_(conv->bias);
  return conv;
}

torch::Tensor leaky(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kLeakySlope));
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2, 2, 2})
                               .mode(torch::kTrilinear)
                               .align_corners(false));
}

void check_patch_input(const torch::Tensor& x, int64_t patch_side) {
  DCSEG_CHECK(x.defined() && (x.dim() == 4 || x.dim() == 5),
              "input must be (1,s,s,s) or (B,1,s,s,s)");
  DCSEG_CHECK(x.size(x.dim() - 4) == 1, "input must have one channel");
  for (int64_t d = x.dim() - 3; d < x.dim(); ++d) {
    DCSEG_CHECK(x.size(d) == patch_side, "input spatial extent must equal patch_side=",
                patch_side);
  }
}

}  // namespace

void ModelConfig::validate() const {
  DCSEG_CHECK(modality_count >= 1, "modality_count must be >= 1");
  DCSEG_CHECK(class_count >= 2, "class_count must be >= 2");
  DCSEG_CHECK(anat_channels >= 1 && modality_dim >= 1,
              "anat_channels and modality_dim must be >= 1");
  DCSEG_CHECK(encoder_widths.size() >= 2, "need at least two encoder levels");
  DCSEG_CHECK(decoder_widths.size() == encoder_widths.size(),
              "decoder level count must match encoder level count");
  for (auto w : encoder_widths) DCSEG_CHECK(w >= 1, "encoder widths must be >= 1");
  for (auto w : decoder_widths) DCSEG_CHECK(w >= 1, "decoder widths must be >= 1");
  DCSEG_CHECK(patch_side >= downsample_factor() && patch_side % downsample_factor() == 0,
              "patch_side must be a positive multiple of the downsample factor");
  DCSEG_CHECK(temperature_init > 0, "temperature_init must be positive");
}

ConvBlockImpl::ConvBlockImpl(int64_t in_ch, int64_t out_ch) {
  conv1 = register_module("conv1", make_conv(in_ch, out_ch, 3));
  conv2 = register_module("conv2", make_conv(out_ch, out_ch, 3));
}

torch::Tensor ConvBlockImpl::forward(torch::Tensor x) {
  return leaky(conv2(leaky(conv1(std::move(x)))));
}

AnatomicalEncoderImpl::AnatomicalEncoderImpl(const ModelConfig& cfg) {
  const auto& w = cfg.encoder_widths;
  stem = register_module("stem", make_conv(1, w[0], 3));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (std::size_t i = 1; i < w.size(); ++i) blocks->push_back(ConvBlock(w[i - 1], w[i]));
  head = register_module("head", make_conv(w.back(), cfg.anat_channels, 1));
}

torch::Tensor AnatomicalEncoderImpl::forward(torch::Tensor x) {
  x = leaky(stem(std::move(x)));
  for (auto& block : *blocks) {
    x = F::avg_pool3d(x, F::AvgPool3dFuncOptions(2));
    x = block->as<ConvBlockImpl>()->forward(x);
  }
  return torch::tanh(head(x));
}

ModalityEncoderImpl::ModalityEncoderImpl(const ModelConfig& cfg) {
  conv1 = register_module("conv1", make_conv(1, 8, 3, 2));
  conv2 = register_module("conv2", make_conv(8, 16, 3, 2));
  conv3 = register_module("conv3", make_conv(16, 32, 3, 2));
  fc1 = register_module("fc1", torch::nn::Linear(32, 32));
  fc2 = register_module("fc2", torch::nn::Linear(32, cfg.modality_dim));
}

torch::Tensor ModalityEncoderImpl::forward(torch::Tensor x) {
  x = leaky(conv1(std::move(x)));
  x = leaky(conv2(x));
  x = leaky(conv3(x));
  x = x.mean({2, 3, 4});
  return torch::tanh(fc2(leaky(fc1(x))));
}

GatedFusionImpl::GatedFusionImpl(const ModelConfig& cfg) {
  gates = register_module("gates", torch::nn::ModuleList());
  for (int64_t j = 0; j < cfg.modality_count; ++j) {
    gates->push_back(make_conv(cfg.anat_channels, 1, 1));
  }
  proj = register_module("proj", make_conv(cfg.anat_channels, cfg.anat_channels, 1));
}

torch::Tensor GatedFusionImpl::forward(const std::vector<torch::Tensor>& anats,
                                       const torch::Tensor& mask) {
  const auto m_count = static_cast<int64_t>(anats.size());
  DCSEG_CHECK(m_count == static_cast<int64_t>(gates->size()),
              "fusion expects one map per modality");
  DCSEG_CHECK(mask.defined() && mask.dim() == 2 && mask.size(1) == m_count,
              "mask must be (B, M)");
  DCSEG_CHECK(mask.sum(1).min().item<double>() > 0, "no available modalities in mask");
  std::vector<torch::Tensor> scores;
  scores.reserve(m_count);
  for (int64_t j = 0; j < m_count; ++j) {
    scores.push_back(gates[j]->as<torch::nn::Conv3dImpl>()->forward(anats[j]));
  }
  auto score = torch::stack(scores, 1);  // (B,M,1,d,d,d)
  auto m = mask.view({mask.size(0), m_count, 1, 1, 1, 1}).to(score.dtype());
  score = torch::where(m > 0, score, torch::full_like(score, kMaskedScore));
  auto weights = torch::softmax(score, 1);
  // Zero the maps as well, so masked values cannot leak even through the
  // gate weights.
  auto stacked = torch::stack(anats, 1) * m;  // (B,M,C,d,d,d)
  auto z = (weights * stacked).sum(1);
  return proj(z);
}

SegDecoderImpl::SegDecoderImpl(const ModelConfig& cfg) {
  const auto& w = cfg.decoder_widths;
  const auto levels = static_cast<std::size_t>(cfg.levels());
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (std::size_t i = 0; i + 1 < levels; ++i) {
    blocks->push_back(ConvBlock(i == 0 ? cfg.anat_channels : w[i - 1], w[i]));
  }
  last = register_module("last", make_conv(w[levels - 2], w[levels - 1], 3));
  head = register_module("head", make_conv(w[levels - 1], cfg.class_count, 1));
}

torch::Tensor SegDecoderImpl::forward(torch::Tensor x) {
  for (std::size_t i = 0; i < blocks->size(); ++i) {
    if (i > 0) x = upsample2(x);
    x = blocks[i]->as<ConvBlockImpl>()->forward(x);
  }
  x = leaky(last(upsample2(x)));
  return head(x);
}

ReconDecoderImpl::ReconDecoderImpl(const ModelConfig& cfg) {
  const auto& w = cfg.decoder_widths;
  const auto levels = static_cast<std::size_t>(cfg.levels());
  blocks = register_module("blocks", torch::nn::ModuleList());
  films = register_module("films", torch::nn::ModuleList());
  for (std::size_t i = 0; i + 1 < levels; ++i) {
    blocks->push_back(ConvBlock(i == 0 ? cfg.anat_channels : w[i - 1], w[i]));
  }
  last = register_module("last", make_conv(w[levels - 2], w[levels - 1], 3));
  head = register_module("head", make_conv(w[levels - 1], 1, 1));
  for (std::size_t i = 0; i < levels; ++i) {
    auto film = torch::nn::Linear(cfg.modality_dim, 2 * w[i]);
    // Identity modulation at initialization: scale 1, shift 0.
    torch::nn::init::zeros_(film->weight);
    torch::nn::init::zeros_(film->bias);
    films->push_back(film);
  }
}

torch::Tensor ReconDecoderImpl::modulate(torch::Tensor x, const torch::Tensor& m, int64_t level) {
  auto scale_shift = films[static_cast<size_t>(level)]->as<torch::nn::LinearImpl>()->forward(m);
  const int64_t width = x.size(1);
  auto gamma = 1.0 + scale_shift.slice(1, 0, width).view({-1, width, 1, 1, 1});
  auto beta = scale_shift.slice(1, width, 2 * width).view({-1, width, 1, 1, 1});
  return x * gamma + beta;
}

torch::Tensor ReconDecoderImpl::forward(torch::Tensor z, const torch::Tensor& m) {
  DCSEG_CHECK(m.defined() && m.dim() == 2 && m.size(0) == z.size(0),
              "modality vector batch must match z");
  auto x = std::move(z);
  for (std::size_t i = 0; i < blocks->size(); ++i) {
    if (i > 0) x = upsample2(x);
    x = modulate(blocks[i]->as<ConvBlockImpl>()->forward(x), m, static_cast<int64_t>(i));
  }
  x = modulate(leaky(last(upsample2(x))), m, static_cast<int64_t>(blocks->size()));
  return head(x);
}

DCSegModelImpl::DCSegModelImpl(ModelConfig cfg) : config(std::move(cfg)) {
  config.validate();
  enc_ana = register_module("enc_ana", torch::nn::ModuleList());
  enc_mod = register_module("enc_mod", torch::nn::ModuleList());
  dec_rec = register_module("dec_rec", torch::nn::ModuleList());
  for (int64_t j = 0; j < config.modality_count; ++j) {
    enc_ana->push_back(AnatomicalEncoder(config));
    enc_mod->push_back(ModalityEncoder(config));
    dec_rec->push_back(ReconDecoder(config));
  }
  fusion = register_module("fusion", GatedFusion(config));
  dec_sep = register_module("dec_sep", SegDecoder(config));
  dec_fuse = register_module("dec_fuse", SegDecoder(config));
  log_t = register_parameter(
      "log_t", torch::tensor(std::log(config.temperature_init), torch::kFloat32));
}

torch::Tensor DCSegModelImpl::run_single_input(const torch::Tensor& x, int64_t j,
                                               bool anatomical) {
  DCSEG_CHECK(j >= 0 && j < config.modality_count, "modality index out of range");
  check_patch_input(x, config.patch_side);
  const bool batched = x.dim() == 5;
  auto in = batched ? x : x.unsqueeze(0);
  torch::Tensor out;
  if (anatomical) {
    out = enc_ana[static_cast<size_t>(j)]->as<AnatomicalEncoderImpl>()->forward(in);
  } else {
    out = enc_mod[static_cast<size_t>(j)]->as<ModalityEncoderImpl>()->forward(in);
    DCSEG_CHECK(out.norm(2, 1).min().item<double>() > 0,
                "modality vector collapsed to zero norm");
  }
  return batched ? out : out.squeeze(0);
}

torch::Tensor DCSegModelImpl::encode_anatomical(const torch::Tensor& x, int64_t j) {
  return run_single_input(x, j, /*anatomical=*/true);
}

torch::Tensor DCSegModelImpl::encode_modality(const torch::Tensor& x, int64_t j) {
  return run_single_input(x, j, /*anatomical=*/false);
}

torch::Tensor DCSegModelImpl::fuse_anatomical(const std::vector<torch::Tensor>& anats,
                                              const AvailabilityMask& mask) {
  DCSEG_CHECK(mask.any(), "no available modalities in mask");
  DCSEG_CHECK(static_cast<int64_t>(anats.size()) == config.modality_count &&
                  mask.modality_count() == config.modality_count,
              "need one map and one mask bit per modality");
  std::vector<torch::Tensor> batched;
  batched.reserve(anats.size());
  for (const auto& a : anats) {
    DCSEG_CHECK(a.dim() == 4, "unbatched fusion expects (C,d,d,d) maps");
    batched.push_back(a.unsqueeze(0));
  }
  return fusion(batched, mask.to_tensor().unsqueeze(0)).squeeze(0);
}

torch::Tensor DCSegModelImpl::fuse_anatomical(const std::vector<torch::Tensor>& anats,
                                              const torch::Tensor& mask) {
  return fusion(anats, mask);
}

torch::Tensor DCSegModelImpl::decode_reconstruction(const torch::Tensor& z,
                                                    const torch::Tensor& m, int64_t j) {
  DCSEG_CHECK(j >= 0 && j < config.modality_count, "modality index out of range");
  const bool batched = z.dim() == 5;
  auto zin = batched ? z : z.unsqueeze(0);
  auto min = batched ? m : m.unsqueeze(0);
  auto out = dec_rec[static_cast<size_t>(j)]->as<ReconDecoderImpl>()->forward(zin, min);
  return batched ? out : out.squeeze(0);
}

torch::Tensor DCSegModelImpl::decode_separate(const torch::Tensor& a) {
  const bool batched = a.dim() == 5;
  auto out = dec_sep(batched ? a : a.unsqueeze(0));
  return batched ? out : out.squeeze(0);
}

torch::Tensor DCSegModelImpl::decode_fused(const torch::Tensor& z) {
  const bool batched = z.dim() == 5;
  auto out = dec_fuse(batched ? z : z.unsqueeze(0));
  return batched ? out : out.squeeze(0);
}

ForwardOutputs DCSegModelImpl::forward_training(const torch::Tensor& x,
                                                const torch::Tensor& mask) {
  const int64_t m_count = config.modality_count;
  DCSEG_CHECK(x.defined() && x.dim() == 5 && x.size(1) == m_count,
              "training batch must be (B, M, s, s, s)");
  DCSEG_CHECK(mask.defined() && mask.dim() == 2 && mask.size(0) == x.size(0) &&
                  mask.size(1) == m_count,
              "mask must be (B, M)");
  ForwardOutputs out;
  out.anatomical.reserve(m_count);
  out.modality.reserve(m_count);
  for (int64_t j = 0; j < m_count; ++j) {
    auto xj = x.slice(1, j, j + 1);  // (B,1,s,s,s)
    out.anatomical.push_back(encode_anatomical(xj, j));
    out.modality.push_back(encode_modality(xj, j));
  }
  out.fused = fusion(out.anatomical, mask);
  out.reconstructions.reserve(m_count);
  out.separate_logits.reserve(m_count);
  for (int64_t j = 0; j < m_count; ++j) {
    out.reconstructions.push_back(decode_reconstruction(out.fused, out.modality[j], j));
    out.separate_logits.push_back(decode_separate(out.anatomical[j]));
  }
  out.fused_logits = decode_fused(out.fused);
  return out;
}

}  // namespace dcseg
