#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dcseg/volume.hpp"

namespace dcseg {

/// Procedural multimodal phantom: one shared anatomy (an ellipsoidal brain
/// with two tissue shells plus nested spherical lesions) rendered into M
/// modality images through per-modality intensity transfers, with Gaussian
/// noise added inside the brain. The segmentation label depends on the
/// anatomy alone, so ground truth is modality-invariant by construction.
///
/// Tissue classes: 0 background, 1 outer shell, 2 inner core, then one class
/// per lesion shell from the outside in. With class_count = 4 the lesion
/// shells carry labels 2 (outer), 1 (middle), 3 (center), giving the nested
/// region structure {1,2,3} ⊇ {1,3} ⊇ {3}.
struct PhantomSpec {
  int64_t grid_side = 32;
  int64_t modality_count = 4;
  int64_t class_count = 4;
  std::pair<int64_t, int64_t> lesion_count{1, 3};
  std::pair<double, double> lesion_radius{3.0, 6.0};
  double noise_sigma = 0.05;
  uint64_t seed = 0;
  /// Optional per-modality intensity per tissue class; defaults are used when
  /// empty. Row length must be 3 + (class_count - 1).
  std::vector<std::vector<double>> transfers;

  void validate() const;

  bool operator==(const PhantomSpec&) const = default;

  /// Number of tissue classes implied by class_count.
  int64_t tissue_class_count() const { return 3 + (class_count - 1); }

  /// The transfers actually used: `transfers` when given, else defaults.
  /// The four stock modalities mimic FLAIR, T1, T1c and T2: each resolves
  /// only part of the lesion hierarchy, so the modalities complement one
  /// another the way BraTS sequences do.
  std::vector<std::vector<double>> effective_transfers() const;

  /// Labels of the lesion shells from the outside in.
  std::vector<int64_t> shell_labels() const;
};

/// Deterministic phantom subject with volumes z-scored inside the brain mask.
MultimodalVolume generate_phantom(const PhantomSpec& spec);

/// Same subject with raw (pre-normalization) intensities, as written to disk.
MultimodalVolume generate_phantom_raw(const PhantomSpec& spec);

}  // namespace dcseg
