#include "dcseg/dataset.hpp"

#include <algorithm>

#include "dcseg/nifti.hpp"

namespace dcseg {

namespace fs = std::filesystem;

const std::vector<std::string>& brats_modalities() {
  static const std::vector<std::string> kMods = {"flair", "t1", "t1ce", "t2"};
  return kMods;
}

void MultimodalVolume::validate(int64_t class_count) const {
  DCSEG_CHECK(!volumes.empty(), "subject ", subject_id, " has no volumes");
  const auto ref = volumes.front().sizes();
  for (size_t j = 0; j < volumes.size(); ++j) {
    DCSEG_CHECK(volumes[j].sizes() == ref, "subject ", subject_id, ": modality ", j,
                " shape mismatch");
    DCSEG_CHECK(volumes[j].isfinite().all().item<bool>(), "subject ", subject_id, ": modality ",
                j, " has non-finite voxels");
  }
  DCSEG_CHECK(label.sizes() == ref, "subject ", subject_id, ": label shape mismatch");
  DCSEG_CHECK(brain_mask.sizes() == ref, "subject ", subject_id, ": mask shape mismatch");
  const int64_t lmin = label.min().item<int64_t>();
  const int64_t lmax = label.max().item<int64_t>();
  DCSEG_CHECK(lmin >= 0 && lmax < class_count, "subject ", subject_id, ": label range [", lmin,
              ",", lmax, "] outside [0,", class_count, ")");
}

torch::Tensor normalize_in_mask(const torch::Tensor& volume, const torch::Tensor& mask) {
  DCSEG_CHECK(volume.sizes() == mask.sizes(), "normalize_in_mask: shape mismatch");
  torch::Tensor m = mask.to(torch::kBool);
  const int64_t n = m.sum().item<int64_t>();
  DCSEG_CHECK(n > 0, "normalize_in_mask: empty mask");

  torch::Tensor vals = volume.masked_select(m).to(torch::kFloat64);
  const double mean = vals.mean().item<double>();
  const double std = vals.std(/*unbiased=*/false).item<double>();

  torch::Tensor out = torch::zeros_like(volume, torch::kFloat32);
  if (std < 1e-6) {
    return out;  // constant signal inside the mask
  }
  torch::Tensor normed = ((volume.to(torch::kFloat64) - mean) / std).to(torch::kFloat32);
  out.masked_scatter_(m, normed.masked_select(m));
  return out;
}

MultimodalVolume load_brats_subject(const fs::path& subject_dir) {
  DCSEG_CHECK_IO(fs::is_directory(subject_dir), "not a subject directory: ",
                 subject_dir.string());
  const std::string id = subject_dir.filename().string();

  auto resolve = [&](const std::string& suffix) -> fs::path {
    for (const char* ext : {".nii.gz", ".nii"}) {
      fs::path p = subject_dir / (id + "_" + suffix + ext);
      if (fs::exists(p)) return p;
    }
    return {};
  };

  MultimodalVolume subject;
  subject.subject_id = id;

  std::vector<torch::Tensor> raw;
  for (const auto& mod : brats_modalities()) {
    fs::path p = resolve(mod);
    DCSEG_CHECK_IO(!p.empty(), "modality file absent for '", mod, "' in ", subject_dir.string());
    torch::Tensor v = read_nifti(p).to(torch::kFloat32);
    if (!raw.empty()) {
      DCSEG_CHECK_IO(v.sizes() == raw.front().sizes(), "shape mismatch across modalities in ",
                     subject_dir.string(), " at '", mod, "'");
    }
    raw.push_back(v);
  }

  fs::path seg = resolve("seg");
  DCSEG_CHECK_IO(!seg.empty(), "modality file absent for 'seg' in ", subject_dir.string());
  torch::Tensor label = read_nifti(seg).to(torch::kInt64);
  DCSEG_CHECK_IO(label.sizes() == raw.front().sizes(), "label shape mismatch in ",
                 subject_dir.string());
  // BraTS convention: enhancing tumor is stored as 4.
  label = torch::where(label == 4, torch::full_like(label, 3), label);

  torch::Tensor mask = torch::zeros_like(raw.front(), torch::kBool);
  for (const auto& v : raw) mask |= v != 0;
  DCSEG_CHECK_IO(mask.any().item<bool>(), "all-zero subject in ", subject_dir.string());

  for (const auto& v : raw) subject.volumes.push_back(normalize_in_mask(v, mask));
  subject.label = label;
  subject.brain_mask = mask;
  return subject;
}

void write_brats_subject(const fs::path& subject_dir, const MultimodalVolume& subject) {
  fs::create_directories(subject_dir);
  const std::string id = subject_dir.filename().string();
  const auto& mods = brats_modalities();
  DCSEG_CHECK(subject.volumes.size() <= mods.size(),
              "write_brats_subject supports at most ", mods.size(), " modalities");
  for (size_t j = 0; j < subject.volumes.size(); ++j) {
    write_nifti(subject_dir / (id + "_" + mods[j] + ".nii.gz"), subject.volumes[j]);
  }
  write_nifti(subject_dir / (id + "_seg.nii.gz"), subject.label);
}

std::vector<fs::path> list_subject_dirs(const fs::path& dataset_dir) {
  DCSEG_CHECK_IO(fs::is_directory(dataset_dir), "not a dataset directory: ",
                 dataset_dir.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dataset_dir)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

uint64_t subject_hash(const std::string& subject_id) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : subject_id) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

bool in_eval_split(const std::string& subject_id, double eval_fraction) {
  DCSEG_CHECK(eval_fraction >= 0.0 && eval_fraction <= 1.0, "eval_fraction outside [0,1]");
  return static_cast<double>(subject_hash(subject_id) % 1000) < eval_fraction * 1000.0;
}

}  // namespace dcseg
