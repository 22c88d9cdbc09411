#include "dcseg/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "dcseg/dataset.hpp"

namespace dcseg {

namespace {

// Benchmark row order for M=4, encoded as bitmasks with modality j in bit j
// (FLAIR=1, T1=2, T1c=4, T2=8): singles T2..FLAIR, then pairs, triples, all.
constexpr int kTable1Order[] = {8, 4, 2, 1, 12, 6, 3, 10, 9, 5, 7, 11, 13, 14, 15};

std::string fmt(double v, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::vector<int64_t> window_starts(int64_t extent, int64_t patch) {
  DCSEG_CHECK(extent >= patch, "volume extent ", extent, " smaller than patch_side ", patch);
  std::vector<int64_t> starts;
  const int64_t stride = std::max<int64_t>(1, patch / 2);
  for (int64_t s = 0; s + patch < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);
  return starts;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  DCSEG_CHECK_IO(out.good(), "cannot open '", path, "' for writing");
  return out;
}

// Markdown tables use the conventional sequence names; CSV keeps the
// canonical lowercase identifiers so both stay machine-friendly.
std::string display_name(const std::string& canonical) {
  if (canonical == "flair") return "FLAIR";
  if (canonical == "t1") return "T1";
  if (canonical == "t1c" || canonical == "t1ce") return "T1c";
  if (canonical == "t2") return "T2";
  return canonical;
}

torch::Tensor center_window(const torch::Tensor& volume, int64_t side) {
  const auto shape = volume.sizes();
  DCSEG_CHECK(volume.dim() == 3, "expected a 3-D volume");
  auto out = volume;
  for (int64_t d = 0; d < 3; ++d) {
    DCSEG_CHECK(shape[d] >= side, "volume extent ", shape[d], " smaller than patch_side ", side);
    const int64_t start = (shape[d] - side) / 2;
    out = out.narrow(d, start, side);
  }
  return out.contiguous();
}

}  // namespace

std::vector<RegionSpec> brats_regions() {
  return {{"complete", {1, 2, 3}}, {"core", {1, 3}}, {"enhancing", {3}}};
}

double dice_score(const torch::Tensor& pred, const torch::Tensor& gt) {
  DCSEG_CHECK(pred.defined() && gt.defined() && pred.sizes() == gt.sizes(),
              "dice operands must share one shape");
  DCSEG_CHECK(pred.dtype() == torch::kBool && gt.dtype() == torch::kBool,
              "dice operands must be boolean volumes");
  const auto p = pred.sum().item<int64_t>();
  const auto g = gt.sum().item<int64_t>();
  if (p == 0 && g == 0) return 1.0;
  const auto inter = (pred & gt).sum().item<int64_t>();
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

torch::Tensor region_mask(const torch::Tensor& labels, const RegionSpec& region) {
  region.validate();
  DCSEG_CHECK(labels.defined() && labels.dtype() == torch::kInt64, "labels must be int64");
  auto mask = torch::zeros_like(labels, torch::kBool);
  for (auto cls : region.class_ids) mask |= labels.eq(cls);
  return mask;
}

void check_region_nesting(const std::vector<MultimodalVolume>& dataset,
                          const std::vector<RegionSpec>& regions) {
  for (const auto& subject : dataset) {
    for (std::size_t r = 0; r + 1 < regions.size(); ++r) {
      auto outer = region_mask(subject.label, regions[r]);
      auto inner = region_mask(subject.label, regions[r + 1]);
      DCSEG_CHECK(!(inner & ~outer).any().item<bool>(), "region nesting violated on subject '",
                  subject.subject_id, "': ", regions[r + 1].name, " is not contained in ",
                  regions[r].name);
    }
  }
}

std::vector<AvailabilityMask> subset_enumeration(int64_t modality_count) {
  DCSEG_CHECK(modality_count >= 1 && modality_count <= 16, "modality count out of range");
  std::vector<int> order;
  if (modality_count == 4) {
    order.assign(std::begin(kTable1Order), std::end(kTable1Order));
  } else {
    // Ascending subset size, ties by bitmask value.
    for (int k = 1; k <= modality_count; ++k) {
      for (int bits = 1; bits < (1 << modality_count); ++bits) {
        if (__builtin_popcount(static_cast<unsigned>(bits)) == k) order.push_back(bits);
      }
    }
  }
  std::vector<AvailabilityMask> subsets;
  subsets.reserve(order.size());
  for (int bits : order) {
    subsets.push_back(AvailabilityMask::from_bits(modality_count, static_cast<uint32_t>(bits)));
  }
  return subsets;
}

torch::Tensor infer_subset(DCSegModel& model, const MultimodalVolume& subject,
                           const AvailabilityMask& subset) {
  DCSEG_CHECK(subset.any(), "inference subset must contain at least one modality");
  const auto& cfg = model->config;
  DCSEG_CHECK(subject.modality_count() == cfg.modality_count &&
                  subset.modality_count() == cfg.modality_count,
              "subject and subset modality counts must match the model");
  torch::NoGradGuard no_grad;
  model->eval();

  const auto shape = subject.shape();
  const int64_t side = cfg.patch_side;
  const auto device = model->log_t.device();
  auto logit_sum = torch::zeros({cfg.class_count, shape[0], shape[1], shape[2]});
  auto hits = torch::zeros({shape[0], shape[1], shape[2]});
  auto mask_row = subset.to_tensor().unsqueeze(0).to(device);  // (1, M)
  const int64_t rep = cfg.rep_side();

  for (int64_t z0 : window_starts(shape[0], side)) {
    for (int64_t y0 : window_starts(shape[1], side)) {
      for (int64_t x0 : window_starts(shape[2], side)) {
        std::vector<torch::Tensor> anats(static_cast<std::size_t>(cfg.modality_count));
        torch::Tensor placeholder;
        for (int64_t j = 0; j < cfg.modality_count; ++j) {
          if (!subset.available(j)) continue;  // filled with zeros below
          auto window = subject.volumes[static_cast<std::size_t>(j)]
                            .slice(0, z0, z0 + side)
                            .slice(1, y0, y0 + side)
                            .slice(2, x0, x0 + side)
                            .unsqueeze(0)
                            .unsqueeze(0)
                            .to(device);  // (1,1,s,s,s)
          anats[static_cast<std::size_t>(j)] = model->encode_anatomical(window, j);
        }
        // Masked-out branches get zero placeholders; the fusion mask strips
        // them before they can contribute, so skipping the encoder is safe.
        for (auto& a : anats) {
          if (!a.defined()) {
            if (!placeholder.defined()) {
              placeholder = torch::zeros({1, cfg.anat_channels, rep, rep, rep},
                                         torch::TensorOptions().device(device));
            }
            a = placeholder;
          }
        }
        auto logits =
            model->decode_fused(model->fuse_anatomical(anats, mask_row)).squeeze(0).cpu();
        logit_sum.slice(1, z0, z0 + side)
            .slice(2, y0, y0 + side)
            .slice(3, x0, x0 + side)
            .add_(logits);
        hits.slice(0, z0, z0 + side)
            .slice(1, y0, y0 + side)
            .slice(2, x0, x0 + side)
            .add_(1.0);
      }
    }
  }
  return (logit_sum / hits.unsqueeze(0)).argmax(0);
}

SubsetReport evaluate_subsets(DCSegModel& model,
                              const std::vector<MultimodalVolume>& dataset,
                              const std::vector<RegionSpec>& regions,
                              std::vector<AvailabilityMask> subsets,
                              std::vector<std::string> modality_names) {
  DCSEG_CHECK(!dataset.empty(), "evaluation dataset must be non-empty");
  DCSEG_CHECK(!regions.empty(), "need at least one region");
  DCSEG_CHECK(!subsets.empty(), "need at least one subset");
  // The ground-truth nesting gate only applies to hierarchies (BraTS trio);
  // unrelated region lists (e.g. one region per class) skip it.
  bool nested_chain = true;
  for (std::size_t r = 0; r + 1 < regions.size(); ++r) {
    nested_chain = nested_chain &&
                   std::includes(regions[r].class_ids.begin(), regions[r].class_ids.end(),
                                 regions[r + 1].class_ids.begin(), regions[r + 1].class_ids.end());
  }
  if (nested_chain) check_region_nesting(dataset, regions);

  const int64_t m_count = model->config.modality_count;
  for (const auto& s : subsets) {
    DCSEG_CHECK(s.modality_count() == m_count, "subset arity must match the model");
  }
  if (modality_names.empty()) {
    if (m_count == 4) {
      modality_names = {"flair", "t1", "t1c", "t2"};
    } else {
      for (int64_t j = 0; j < m_count; ++j) modality_names.push_back("m" + std::to_string(j));
    }
  }
  DCSEG_CHECK(static_cast<int64_t>(modality_names.size()) == m_count,
              "need one modality name per modality");

  SubsetReport report;
  report.modality_names = std::move(modality_names);
  for (const auto& r : regions) report.region_names.push_back(r.name);
  report.subsets = std::move(subsets);
  report.dice.resize(report.subsets.size(), std::vector<double>(regions.size(), 0.0));
  report.averages.assign(regions.size(), 0.0);

  for (std::size_t s = 0; s < report.subsets.size(); ++s) {
    std::vector<double> sums(regions.size(), 0.0);
    for (const auto& subject : dataset) {
      auto pred = infer_subset(model, subject, report.subsets[s]);
      for (std::size_t r = 0; r < regions.size(); ++r) {
        sums[r] += dice_score(region_mask(pred, regions[r]),
                              region_mask(subject.label, regions[r]));
      }
    }
    for (std::size_t r = 0; r < regions.size(); ++r) {
      report.dice[s][r] = sums[r] / static_cast<double>(dataset.size());
      report.averages[r] += report.dice[s][r];
    }
  }
  for (auto& avg : report.averages) avg /= static_cast<double>(report.subsets.size());
  return report;
}

SubsetReport evaluate_all_subsets(DCSegModel& model,
                                  const std::vector<MultimodalVolume>& dataset,
                                  const std::vector<RegionSpec>& regions,
                                  std::vector<std::string> modality_names) {
  return evaluate_subsets(model, dataset, regions,
                          subset_enumeration(model->config.modality_count),
                          std::move(modality_names));
}

void write_report_csv(const SubsetReport& report, const std::string& path) {
  auto out = open_out(path);
  for (const auto& name : report.modality_names) out << name << ',';
  out << "region,dice\n";
  for (std::size_t s = 0; s < report.subsets.size(); ++s) {
    const auto& subset = report.subsets[s];
    for (std::size_t r = 0; r < report.region_names.size(); ++r) {
      for (int64_t j = 0; j < subset.modality_count(); ++j) {
        out << (subset.available(j) ? '1' : '0') << ',';
      }
      out << report.region_names[r] << ',' << fmt(report.dice[s][r], "%.12g") << '\n';
    }
  }
  out.flush();
  DCSEG_CHECK_IO(out.good(), "failed writing report '", path, "'");
}

void write_report_markdown(const SubsetReport& report, const std::string& path) {
  auto out = open_out(path);
  out << '|';
  for (const auto& name : report.modality_names) out << ' ' << display_name(name) << " |";
  for (const auto& name : report.region_names) out << ' ' << name << " |";
  out << "\n|";
  for (std::size_t i = 0; i < report.modality_names.size() + report.region_names.size(); ++i) {
    out << "---|";
  }
  out << '\n';
  for (std::size_t s = 0; s < report.subsets.size(); ++s) {
    const auto& subset = report.subsets[s];
    out << '|';
    for (int64_t j = 0; j < subset.modality_count(); ++j) {
      out << (subset.available(j) ? " \xE2\x97\x8F |" : " \xE2\x97\x8B |");  // filled/open circle
    }
    for (std::size_t r = 0; r < report.region_names.size(); ++r) {
      out << ' ' << fmt(report.dice[s][r], "%.4f") << " |";
    }
    out << '\n';
  }
  out << "| Average |";
  for (std::size_t j = 1; j < report.modality_names.size(); ++j) out << " |";
  for (std::size_t r = 0; r < report.region_names.size(); ++r) {
    out << ' ' << fmt(report.averages[r], "%.4f") << " |";
  }
  out << '\n';
  out.flush();
  DCSEG_CHECK_IO(out.good(), "failed writing report '", path, "'");
}

void export_representations(DCSegModel& model, const std::vector<MultimodalVolume>& dataset,
                            const std::string& out_path) {
  const auto& cfg = model->config;
  torch::NoGradGuard no_grad;
  model->eval();
  auto out = open_out(out_path);
  const int64_t width = std::max(cfg.anat_channels, cfg.modality_dim);
  out << "subject_id,modality,kind";
  for (int64_t i = 0; i < width; ++i) out << ",v" << i;
  out << '\n';
  auto write_row = [&](const std::string& id, int64_t j, const char* kind,
                       const torch::Tensor& vec) {
    out << id << ',' << j << ',' << kind;
    auto v = vec.to(torch::kFloat64);
    for (int64_t i = 0; i < width; ++i) {
      out << ',';
      if (i < v.numel()) out << fmt(v[i].item<double>(), "%.9g");
    }
    out << '\n';
  };
  for (const auto& subject : dataset) {
    DCSEG_CHECK(subject.modality_count() == cfg.modality_count,
                "subject modality count must match the model");
    for (int64_t j = 0; j < cfg.modality_count; ++j) {
      auto window = center_window(subject.volumes[static_cast<std::size_t>(j)], cfg.patch_side)
                        .unsqueeze(0)
                        .unsqueeze(0)
                        .to(model->log_t.device());
      auto anat = model->encode_anatomical(window, j).squeeze(0);  // (C,d,d,d)
      write_row(subject.subject_id, j, "anatomical", anat.mean({1, 2, 3}));
      write_row(subject.subject_id, j, "modality",
                model->encode_modality(window, j).squeeze(0));
    }
  }
  out.flush();
  DCSEG_CHECK_IO(out.good(), "failed writing embeddings '", out_path, "'");
}

}  // namespace dcseg
