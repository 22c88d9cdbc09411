#pragma once

#include <optional>
#include <string>

#include "dcseg/augment.hpp"
#include "dcseg/networks.hpp"
#include "dcseg/phantom.hpp"
#include "dcseg/training.hpp"

namespace dcseg {

/// One declarative run description: model + training + augmentation settings
/// plus exactly one dataset source — a directory of real subjects XOR a
/// phantom generator spec. Serialized as JSON; parse -> serialize -> parse is
/// the identity, and every field is emitted explicitly on the way out.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentationConfig augment;
  std::string dataset_dir;               // real data source; empty when unused
  double eval_fraction = 0.2;            // held-out share of a real dataset
  std::optional<PhantomSpec> phantom;    // synthetic source; XOR dataset_dir
  int64_t phantom_train_count = 20;
  int64_t phantom_eval_count = 8;
  std::string out_dir = "runs/out";

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Parses a JSON document. Unknown or ill-typed fields raise ConfigError
/// naming the dotted field path; missing fields fall back to defaults.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Deterministic serialization (sorted keys, all fields explicit).
std::string serialize_run_config(const RunConfig& cfg);
void save_run_config(const RunConfig& cfg, const std::string& path);

/// Standalone phantom spec documents (generator input and dataset sidecar).
PhantomSpec parse_phantom_spec(const std::string& text);
PhantomSpec load_phantom_spec(const std::string& path);
std::string serialize_phantom_spec(const PhantomSpec& spec);
void save_phantom_spec(const PhantomSpec& spec, const std::string& path);

}  // namespace dcseg
