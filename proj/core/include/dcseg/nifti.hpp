#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace dcseg {

/// Reads a NIfTI-1 volume (.nii or .nii.gz, little-endian, single file).
/// Floating point data comes back as a float32 (D,H,W) tensor, integer data
/// as int64. Scl slope/intercept are applied when set. 4D files with a
/// trailing singleton dimension are squeezed.
torch::Tensor read_nifti(const std::filesystem::path& path);

/// Writes a (D,H,W) tensor as NIfTI-1 with 1mm isotropic spacing and an
/// identity sform. Float tensors are stored as float32, integer tensors as
/// int16. A ".gz" suffix selects gzip compression. Output bytes are a pure
/// function of the tensor contents.
void write_nifti(const std::filesystem::path& path, const torch::Tensor& volume);

}  // namespace dcseg
