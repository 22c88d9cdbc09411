#pragma once

#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcseg/networks.hpp"
#include "dcseg/volume.hpp"

namespace dcseg {

/// One evaluation region: the set of label classes merged into a binary mask.
struct RegionSpec {
  std::string name;
  std::set<int64_t> class_ids;

  void validate() const { DCSEG_CHECK(!class_ids.empty(), "region class set must be non-empty"); }
};

/// The BraTS trio under remapped labels: complete {1,2,3}, core {1,3},
/// enhancing {3}.
std::vector<RegionSpec> brats_regions();

/// Dice coefficient between two boolean volumes. Two empty sets score 1,
/// empty against non-empty scores 0.
double dice_score(const torch::Tensor& pred, const torch::Tensor& gt);

/// Binary mask of the voxels whose label belongs to the region.
torch::Tensor region_mask(const torch::Tensor& labels, const RegionSpec& region);

/// Data sanity gate: regions are listed outermost first and every
/// ground-truth mask must contain the next one (whole tumor ⊇ core ⊇
/// enhancing). Throws on the first violating subject.
void check_region_nesting(const std::vector<MultimodalVolume>& dataset,
                          const std::vector<RegionSpec>& regions);

/// Modality subsets in report order. M=4 follows the brain-tumor benchmark
/// row order (T2; T1c; T1; FLAIR; pairs; triples; all four); other M count up
/// by subset size.
std::vector<AvailabilityMask> subset_enumeration(int64_t modality_count);

/// Full-volume prediction under a modality subset: sliding windows of
/// patch_side with 50% overlap, uniform logit averaging in overlaps, argmax.
/// Unavailable modalities are never encoded, so their voxel data cannot
/// influence the output. Returns an int64 label volume of the subject shape.
torch::Tensor infer_subset(DCSegModel& model, const MultimodalVolume& subject,
                           const AvailabilityMask& subset);

/// Table-1-shaped results: one Dice per (subset, region), averaged over
/// subjects, plus the per-region average over subsets.
struct SubsetReport {
  std::vector<std::string> modality_names;
  std::vector<std::string> region_names;
  std::vector<AvailabilityMask> subsets;
  std::vector<std::vector<double>> dice;  // [subset][region]
  std::vector<double> averages;           // [region]
};

/// Runs the nesting gate, then evaluates the given subsets over the dataset.
/// `modality_names` defaults to the BraTS names when M=4.
SubsetReport evaluate_subsets(DCSegModel& model,
                              const std::vector<MultimodalVolume>& dataset,
                              const std::vector<RegionSpec>& regions,
                              std::vector<AvailabilityMask> subsets,
                              std::vector<std::string> modality_names = {});

/// evaluate_subsets over the full subset_enumeration.
SubsetReport evaluate_all_subsets(DCSegModel& model,
                                  const std::vector<MultimodalVolume>& dataset,
                                  const std::vector<RegionSpec>& regions,
                                  std::vector<std::string> modality_names = {});

/// CSV with one row per (subset, region): availability flags per modality
/// column, then region and dice. Byte-deterministic.
void write_report_csv(const SubsetReport& report, const std::string& path);

/// Markdown table mirroring the benchmark layout, with an Average row.
void write_report_markdown(const SubsetReport& report, const std::string& path);

/// Writes two rows per (subject, modality): the channel-mean-pooled
/// anatomical vector (kind "anatomical", length C) and the modality vector
/// (kind "modality", length C_mod). Header: subject_id,modality,kind,v0,...
void export_representations(DCSegModel& model, const std::vector<MultimodalVolume>& dataset,
                            const std::string& out_path);

}  // namespace dcseg
