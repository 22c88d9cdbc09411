#include "dcseg/augment.hpp"

#include <random>

namespace dcseg {

MultimodalVolume augment(const MultimodalVolume& subject, const AugmentationConfig& cfg) {
  cfg.validate();
  DCSEG_CHECK(!subject.volumes.empty(), "augment: subject has no volumes");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const auto shape = subject.shape();

  MultimodalVolume out;
  out.subject_id = subject.subject_id;
  out.volumes = subject.volumes;
  out.label = subject.label;
  out.brain_mask = subject.brain_mask;

  // Flips: one coin per axis, shared across channels.
  for (int64_t ax = 0; ax < 3; ++ax) {
    if (unit(rng) < cfg.flip_probs[static_cast<size_t>(ax)]) {
      for (auto& v : out.volumes) v = v.flip(ax);
      out.label = out.label.flip(ax);
      out.brain_mask = out.brain_mask.flip(ax);
    }
  }

  // Crop. Half of the crops are steered to contain lesion foreground, which
  // otherwise occupies a vanishing fraction of the volume.
  if (cfg.crop_size > 0) {
    const int64_t c = cfg.crop_size;
    for (int64_t ax = 0; ax < 3; ++ax)
      DCSEG_CHECK(c <= shape[static_cast<size_t>(ax)], "crop_size ", c,
                  " exceeds volume extent ", shape[static_cast<size_t>(ax)], " on axis ", ax);

    std::array<int64_t, 3> start{0, 0, 0};
    const bool steer = unit(rng) < 0.5;
    torch::Tensor fg = (out.label > 0).nonzero();  // (n,3)
    if (steer && fg.size(0) > 0) {
      const int64_t pick = static_cast<int64_t>(unit(rng) * static_cast<double>(fg.size(0)));
      auto voxel = fg[std::min(pick, fg.size(0) - 1)];
      for (int64_t ax = 0; ax < 3; ++ax) {
        const int64_t v = voxel[ax].item<int64_t>();
        const int64_t lo = std::max<int64_t>(0, v - c + 1);
        const int64_t hi = std::min(shape[static_cast<size_t>(ax)] - c, v);
        start[static_cast<size_t>(ax)] =
            lo + static_cast<int64_t>(unit(rng) * static_cast<double>(hi - lo + 1));
        start[static_cast<size_t>(ax)] = std::min(start[static_cast<size_t>(ax)], hi);
      }
    } else {
      for (int64_t ax = 0; ax < 3; ++ax) {
        const int64_t hi = shape[static_cast<size_t>(ax)] - c;
        start[static_cast<size_t>(ax)] =
            static_cast<int64_t>(unit(rng) * static_cast<double>(hi + 1));
        start[static_cast<size_t>(ax)] = std::min(start[static_cast<size_t>(ax)], hi);
      }
    }

    auto crop = [&](const torch::Tensor& t) {
      return t.slice(0, start[0], start[0] + c)
          .slice(1, start[1], start[1] + c)
          .slice(2, start[2], start[2] + c)
          .contiguous();
    };
    for (auto& v : out.volumes) v = crop(v);
    out.label = crop(out.label);
    out.brain_mask = crop(out.brain_mask);
  }

  // Per-modality intensity shift/scale on the images, zero kept outside the
  // brain.
  if (cfg.intensity_shift > 0 || cfg.intensity_scale > 0) {
    torch::Tensor m = out.brain_mask.to(torch::kFloat32);
    for (auto& v : out.volumes) {
      const double scale = 1.0 + (2.0 * unit(rng) - 1.0) * cfg.intensity_scale;
      const double shift = (2.0 * unit(rng) - 1.0) * cfg.intensity_shift;
      v = (v * static_cast<float>(scale) + static_cast<float>(shift)) * m;
    }
  }

  return out;
}

}  // namespace dcseg
