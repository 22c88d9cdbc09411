#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <torch/torch.h>

#include "dcseg/networks.hpp"

namespace dcseg {

/// Version tag written at the start of every checkpoint file.
inline constexpr const char* kCheckpointMagic = "dcseg_ckpt_v1";

/// In-memory image of a checkpoint: the model configuration, every named
/// parameter (including log_t), and — when saved from a training run — the
/// Adam moments plus per-parameter step counts needed to resume bit-exactly.
struct CheckpointData {
  ModelConfig model_config;
  std::map<std::string, torch::Tensor> params;
  std::map<std::string, torch::Tensor> optim_moments;  // "exp_avg/<name>", "exp_avg_sq/<name>"
  std::map<std::string, int64_t> optim_steps;          // per-parameter Adam step counts
  int64_t step = 0;
  int64_t epoch = 0;

  bool has_optimizer() const { return !optim_moments.empty(); }
};

/// Captures model (and optionally optimizer) state. Pass a null optimizer for
/// inference-only checkpoints.
CheckpointData snapshot(const DCSegModel& model, const torch::optim::Adam* optimizer,
                        int64_t step, int64_t epoch);

/// Writes a checkpoint file: magic line, JSON manifest, raw little-endian
/// float32 tensor blob. Output bytes are a pure function of the data.
void save_checkpoint(const std::string& path, const CheckpointData& data);

/// Reads a checkpoint file back. A wrong magic or malformed manifest raises
/// ConfigError; I/O failures raise IoError.
CheckpointData load_checkpoint(const std::string& path);

/// Builds a model from the stored configuration and loads every parameter.
DCSegModel model_from_checkpoint(const CheckpointData& data);

/// Restores Adam moments and step counts into an optimizer that was
/// constructed over exactly this model's parameters.
void restore_optimizer(torch::optim::Adam& optimizer, const DCSegModel& model,
                       const CheckpointData& data);

}  // namespace dcseg
