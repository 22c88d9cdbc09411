#include "dcseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dcseg/dataset.hpp"
#include "rng_detail.hpp"

namespace dcseg {
namespace {

using detail::mix_seed;

// Stock transfers for up to four modalities over six tissue classes
// (background, shell, core, lesion outer/middle/center). Mimicking BraTS,
// each modality resolves only part of the lesion hierarchy — FLAIR shows the
// whole lesion but is flat inside it, T1 barely separates the shells, T1c
// singles out the center, T2 grades outside-in — so no single modality can
// segment every shell and cross-modal fusion carries real information.
const std::vector<std::vector<double>> kDefaultTransfers = {
    {0.0, 0.30, 0.50, 0.95, 0.95, 0.95},  // FLAIR-like: whole lesion bright, flat inside
    {0.0, 0.65, 0.85, 0.55, 0.45, 0.45},  // T1-like: lesion dark, shells nearly merged
    {0.0, 0.35, 0.55, 0.65, 0.72, 1.00},  // T1c-like: center enhances strongly
    {0.0, 0.25, 0.45, 0.85, 0.70, 0.60},  // T2-like: graded, outer shell brightest
};

struct Ellipsoid {
  double cz, cy, cx;
  double az, ay, ax;

  double norm_r2(double z, double y, double x) const {
    const double dz = (z - cz) / az, dy = (y - cy) / ay, dx = (x - cx) / ax;
    return dz * dz + dy * dy + dx * dx;
  }
  double min_axis() const { return std::min({az, ay, ax}); }
};

}  // namespace

void PhantomSpec::validate() const {
  DCSEG_CHECK(grid_side >= 16, "phantom grid_side must be >= 16, got ", grid_side);
  DCSEG_CHECK(modality_count >= 1, "phantom modality_count must be >= 1");
  DCSEG_CHECK(class_count >= 2, "phantom class_count must be >= 2");
  DCSEG_CHECK(lesion_count.first >= 0 && lesion_count.second >= lesion_count.first,
              "invalid lesion_count range");
  DCSEG_CHECK(lesion_radius.first > 0 && lesion_radius.second >= lesion_radius.first,
              "invalid lesion_radius range");
  DCSEG_CHECK(noise_sigma >= 0, "noise_sigma must be >= 0");
  const auto t = effective_transfers();
  DCSEG_CHECK(static_cast<int64_t>(t.size()) == modality_count,
              "need one transfer per modality, got ", t.size(), " for M=", modality_count);
  for (const auto& row : t) {
    DCSEG_CHECK(static_cast<int64_t>(row.size()) == tissue_class_count(),
                "transfer must map all ", tissue_class_count(), " tissue classes, got ",
                row.size());
  }
  for (size_t a = 0; a < t.size(); ++a)
    for (size_t b = a + 1; b < t.size(); ++b)
      DCSEG_CHECK(t[a] != t[b], "transfers must be distinct across modalities (", a, " vs ", b,
                  ")");
}

std::vector<std::vector<double>> PhantomSpec::effective_transfers() const {
  if (!transfers.empty()) return transfers;
  DCSEG_CHECK(modality_count <= static_cast<int64_t>(kDefaultTransfers.size()),
              "no default transfers beyond M=4; specify transfers explicitly");
  std::vector<std::vector<double>> out;
  const int64_t ncls = tissue_class_count();
  for (int64_t j = 0; j < modality_count; ++j) {
    std::vector<double> row(kDefaultTransfers[static_cast<size_t>(j)].begin(),
                            kDefaultTransfers[static_cast<size_t>(j)].begin() + 3);
    // lesion shells take the leading default lesion entries, outside in
    for (int64_t s = 0; s < class_count - 1 && 3 + s < 6; ++s)
      row.push_back(kDefaultTransfers[static_cast<size_t>(j)][static_cast<size_t>(3 + s)]);
    row.resize(static_cast<size_t>(ncls), row.back());
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<int64_t> PhantomSpec::shell_labels() const {
  // Outside-in labels chosen so that suffix regions nest, BraTS style.
  if (class_count == 2) return {1};
  std::vector<int64_t> labels = {2, 1};
  for (int64_t k = 3; k < class_count; ++k) labels.push_back(k);
  labels.resize(static_cast<size_t>(class_count - 1));
  return labels;
}

MultimodalVolume generate_phantom_raw(const PhantomSpec& spec) {
  spec.validate();
  const int64_t D = spec.grid_side;
  const int64_t M = spec.modality_count;

  std::mt19937_64 geom(mix_seed(spec.seed, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Ellipsoid brain;
  brain.cz = D / 2.0 + (unit(geom) - 0.5) * 2.0;
  brain.cy = D / 2.0 + (unit(geom) - 0.5) * 2.0;
  brain.cx = D / 2.0 + (unit(geom) - 0.5) * 2.0;
  brain.az = D * (0.38 + 0.06 * unit(geom));
  brain.ay = D * (0.38 + 0.06 * unit(geom));
  brain.ax = D * (0.38 + 0.06 * unit(geom));

  torch::Tensor idx = torch::arange(D, torch::kFloat64);
  auto grids = torch::meshgrid({idx, idx, idx}, "ij");
  torch::Tensor zz = grids[0], yy = grids[1], xx = grids[2];

  auto ell_r2 = [&](const Ellipsoid& e) {
    torch::Tensor dz = (zz - e.cz) / e.az;
    torch::Tensor dy = (yy - e.cy) / e.ay;
    torch::Tensor dx = (xx - e.cx) / e.ax;
    return dz * dz + dy * dy + dx * dx;
  };

  torch::Tensor r2 = ell_r2(brain);
  torch::Tensor tissue = torch::zeros({D, D, D}, torch::kInt64);
  tissue.masked_fill_(r2 <= 1.0, 1);
  tissue.masked_fill_(r2 <= 0.55, 2);

  torch::Tensor label = torch::zeros({D, D, D}, torch::kInt64);

  const int64_t count_span = spec.lesion_count.second - spec.lesion_count.first + 1;
  const int64_t n_lesions =
      spec.lesion_count.first + static_cast<int64_t>(unit(geom) * static_cast<double>(count_span));

  const auto shells = spec.shell_labels();
  const int64_t n_shells = static_cast<int64_t>(shells.size());
  // Shell boundary fractions of the lesion radius, outside in.
  std::vector<double> fracs;
  if (n_shells == 1)
    fracs = {1.0};
  else if (n_shells == 2)
    fracs = {1.0, 0.6};
  else if (n_shells == 3)
    fracs = {1.0, 0.7, 0.45};
  else {
    for (int64_t s = 0; s < n_shells; ++s)
      fracs.push_back(1.0 - static_cast<double>(s) / static_cast<double>(n_shells));
  }

  for (int64_t l = 0; l < n_lesions; ++l) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double r = spec.lesion_radius.first +
                       unit(geom) * (spec.lesion_radius.second - spec.lesion_radius.first);
      const double pz = unit(geom) * D, py = unit(geom) * D, px = unit(geom) * D;
      // Lesion must sit inside the brain and away from the volume edge.
      const double center_r = std::sqrt(brain.norm_r2(pz, py, px));
      if (center_r + r / brain.min_axis() > 0.92) continue;
      if (pz < r || py < r || px < r || pz > D - 1 - r || py > D - 1 - r || px > D - 1 - r)
        continue;

      torch::Tensor d2 = (zz - pz) * (zz - pz) + (yy - py) * (yy - py) + (xx - px) * (xx - px);
      for (int64_t s = 0; s < n_shells; ++s) {
        const double outer = r * fracs[static_cast<size_t>(s)];
        torch::Tensor in_shell = d2 <= outer * outer;
        tissue.masked_fill_(in_shell, 3 + s);
        label.masked_fill_(in_shell, shells[static_cast<size_t>(s)]);
      }
      placed = true;
    }
    DCSEG_CHECK(placed, "failed to place lesion ", l, " inside the brain after 100 retries");
  }

  torch::Tensor brain_mask = tissue > 0;

  const auto transfers = spec.effective_transfers();
  MultimodalVolume subject;
  subject.subject_id = "phantom_" + std::to_string(spec.seed);
  subject.label = label;
  subject.brain_mask = brain_mask;

  const int64_t nvox = D * D * D;
  for (int64_t j = 0; j < M; ++j) {
    torch::Tensor lut = torch::tensor(transfers[static_cast<size_t>(j)], torch::kFloat64);
    torch::Tensor vol = lut.index_select(0, tissue.reshape({nvox})).reshape({D, D, D});

    if (spec.noise_sigma > 0) {
      std::mt19937_64 noise_rng(mix_seed(spec.seed, 0x6e6f6973ull + static_cast<uint64_t>(j)));
      std::normal_distribution<double> gauss(0.0, spec.noise_sigma);
      torch::Tensor noise = torch::empty({nvox}, torch::kFloat64);
      double* p = noise.data_ptr<double>();
      for (int64_t i = 0; i < nvox; ++i) p[i] = gauss(noise_rng);
      vol = vol + noise.reshape({D, D, D});
    }
    vol.masked_fill_(~brain_mask, 0.0);
    subject.volumes.push_back(vol.to(torch::kFloat32));
  }
  return subject;
}

MultimodalVolume generate_phantom(const PhantomSpec& spec) {
  MultimodalVolume subject = generate_phantom_raw(spec);
  for (auto& vol : subject.volumes) vol = normalize_in_mask(vol, subject.brain_mask);
  return subject;
}

}  // namespace dcseg
