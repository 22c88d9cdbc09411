#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dcseg/volume.hpp"

namespace dcseg {

/// Fixed modality order used throughout: (FLAIR, T1, T1c, T2).
const std::vector<std::string>& brats_modalities();

/// Z-scores `volume` inside `mask` (mean 0, std 1 over mask voxels) and sets
/// everything outside the mask to zero. A volume that is constant inside the
/// mask comes back as all zeros.
torch::Tensor normalize_in_mask(const torch::Tensor& volume, const torch::Tensor& mask);

/// Loads one subject from a BraTS-layout directory: one `<id>_<mod>.nii.gz`
/// per modality plus `<id>_seg.nii.gz`. Labels {0,1,2,4} are remapped to
/// {0,1,2,3}; the brain mask is the union of nonzero voxels across the
/// modality images; each modality is z-scored inside that mask.
/// A missing modality file raises an IoError naming the modality.
MultimodalVolume load_brats_subject(const std::filesystem::path& subject_dir);

/// Writes a subject in the BraTS directory layout (raw intensities as given).
void write_brats_subject(const std::filesystem::path& subject_dir,
                         const MultimodalVolume& subject);

/// Subject directories under a dataset root, sorted by name.
std::vector<std::filesystem::path> list_subject_dirs(const std::filesystem::path& dataset_dir);

/// Deterministic subject-level split: a subject id lands in the eval split
/// iff hash(id) mod 1000 < eval_fraction * 1000. Never splits by scan.
bool in_eval_split(const std::string& subject_id, double eval_fraction);

/// Stable FNV-1a hash used for splitting.
uint64_t subject_hash(const std::string& subject_id);

}  // namespace dcseg
