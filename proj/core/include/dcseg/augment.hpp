#pragma once

#include <array>
#include <cstdint>

#include "dcseg/volume.hpp"

namespace dcseg {

/// Random flips, random cropping and per-modality intensity shifts/scales.
/// Spatial transforms are shared by all modalities, the label and the mask;
/// intensity transforms touch the images only. Deterministic given `seed`.
struct AugmentationConfig {
  std::array<double, 3> flip_probs{0.5, 0.5, 0.5};
  int64_t crop_size = 0;          // 0 disables cropping
  double intensity_shift = 0.1;   // shift ~ U(-v, v)
  double intensity_scale = 0.1;   // scale ~ U(1-v, 1+v)
  uint64_t seed = 0;

  void validate() const {
    for (double p : flip_probs)
      DCSEG_CHECK(p >= 0.0 && p <= 1.0, "flip probability outside [0,1]");
    DCSEG_CHECK(crop_size >= 0, "crop_size must be >= 0");
    DCSEG_CHECK(intensity_shift >= 0 && intensity_scale >= 0,
                "intensity ranges must be >= 0");
  }

  bool operator==(const AugmentationConfig&) const = default;
};

MultimodalVolume augment(const MultimodalVolume& subject, const AugmentationConfig& cfg);

}  // namespace dcseg
