#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcseg/common.hpp"

namespace dcseg {

/// Which modalities of a subject are present. Shared between training-time
/// latent dropout and test-time missing-modality simulation.
class AvailabilityMask {
 public:
  explicit AvailabilityMask(std::vector<bool> delta) : delta_(std::move(delta)) {
    DCSEG_CHECK(!delta_.empty(), "availability mask must cover at least one modality");
  }

  static AvailabilityMask all_on(int64_t m) {
    return AvailabilityMask(std::vector<bool>(static_cast<size_t>(m), true));
  }

  static AvailabilityMask single(int64_t m, int64_t j) {
    std::vector<bool> d(static_cast<size_t>(m), false);
    d.at(static_cast<size_t>(j)) = true;
    return AvailabilityMask(std::move(d));
  }

  static AvailabilityMask from_bits(int64_t m, uint32_t bits) {
    std::vector<bool> d(static_cast<size_t>(m), false);
    for (int64_t j = 0; j < m; ++j) d[static_cast<size_t>(j)] = (bits >> j) & 1u;
    return AvailabilityMask(std::move(d));
  }

  int64_t modality_count() const { return static_cast<int64_t>(delta_.size()); }
  bool available(int64_t j) const { return delta_.at(static_cast<size_t>(j)); }

  bool any() const {
    for (bool b : delta_)
      if (b) return true;
    return false;
  }

  int64_t count() const {
    int64_t n = 0;
    for (bool b : delta_) n += b ? 1 : 0;
    return n;
  }

  /// (M,) float32 tensor of 0/1 entries.
  torch::Tensor to_tensor() const {
    torch::Tensor t = torch::zeros({modality_count()}, torch::kFloat32);
    auto acc = t.accessor<float, 1>();
    for (int64_t j = 0; j < modality_count(); ++j) acc[j] = delta_[static_cast<size_t>(j)] ? 1.f : 0.f;
    return t;
  }

  /// e.g. "1010" for modalities 0 and 2 available.
  std::string to_string() const {
    std::string s;
    for (bool b : delta_) s += b ? '1' : '0';
    return s;
  }

  bool operator==(const AvailabilityMask& other) const { return delta_ == other.delta_; }

 private:
  std::vector<bool> delta_;
};

/// One co-registered multimodal subject: M single-channel volumes plus the
/// segmentation label and a brain mask, all sharing one (D,H,W) shape.
/// Volumes are z-scored within the brain mask after preprocessing.
struct MultimodalVolume {
  std::string subject_id;
  std::vector<torch::Tensor> volumes;  // each (D,H,W) float32
  torch::Tensor label;                 // (D,H,W) int64
  torch::Tensor brain_mask;            // (D,H,W) bool

  int64_t modality_count() const { return static_cast<int64_t>(volumes.size()); }

  std::vector<int64_t> shape() const {
    DCSEG_CHECK(!volumes.empty(), "subject has no volumes");
    auto s = volumes.front().sizes();
    return {s[0], s[1], s[2]};
  }

  /// Checks shape agreement and label validity against a class count.
  void validate(int64_t class_count) const;

  /// (M,D,H,W) stacked image tensor.
  torch::Tensor stack_volumes() const { return torch::stack(volumes, /*dim=*/0); }
};

}  // namespace dcseg
