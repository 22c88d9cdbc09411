#include "dcseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "json_detail.hpp"

namespace dcseg {

namespace {

using nlohmann::json;

// Adam moment prefixes used inside CheckpointData::optim_moments.
constexpr const char* kExpAvg = "exp_avg/";
constexpr const char* kExpAvgSq = "exp_avg_sq/";

torch::Tensor to_flat_cpu(const torch::Tensor& t) {
  return t.detach().to(torch::kCPU, torch::kFloat32).contiguous().flatten();
}

// Serializes one tensor map section into the manifest and blob.
void append_section(json& manifest_section, std::vector<float>& blob,
                    const std::map<std::string, torch::Tensor>& tensors) {
  manifest_section = json::array();
  for (const auto& [name, tensor] : tensors) {
    auto flat = to_flat_cpu(tensor);
    json entry;
    entry["name"] = name;
    entry["shape"] = std::vector<int64_t>(tensor.sizes().begin(), tensor.sizes().end());
    entry["offset"] = blob.size();
    manifest_section.push_back(entry);
    const auto* src = flat.data_ptr<float>();
    blob.insert(blob.end(), src, src + flat.numel());
  }
}

std::map<std::string, torch::Tensor> read_section(const json& section,
                                                  const std::vector<float>& blob) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& entry : section) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    int64_t numel = 1;
    for (auto s : shape) numel *= s;
    DCSEG_CHECK_CONFIG(offset + static_cast<std::size_t>(numel) <= blob.size(),
                       "checkpoint blob too small for tensor '", name, "'");
    auto t = torch::from_blob(const_cast<float*>(blob.data() + offset), shape, torch::kFloat32)
                 .clone();
    out.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace

CheckpointData snapshot(const DCSegModel& model, const torch::optim::Adam* optimizer,
                        int64_t step, int64_t epoch) {
  CheckpointData data;
  data.model_config = model->config;
  data.step = step;
  data.epoch = epoch;
  for (const auto& p : model->named_parameters()) {
    data.params.emplace(p.key(), p.value().detach().to(torch::kCPU).clone());
  }
  if (optimizer != nullptr) {
    const auto& state = optimizer->state();
    for (const auto& p : model->named_parameters()) {
      auto it = state.find(p.value().unsafeGetTensorImpl());
      if (it == state.end()) continue;  // parameter not yet stepped
      const auto& adam = static_cast<const torch::optim::AdamParamState&>(*it->second);
      data.optim_moments.emplace(kExpAvg + p.key(), adam.exp_avg().detach().clone());
      data.optim_moments.emplace(kExpAvgSq + p.key(), adam.exp_avg_sq().detach().clone());
      data.optim_steps.emplace(p.key(), adam.step());
    }
  }
  return data;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  json manifest;
  manifest["format"] = kCheckpointMagic;
  manifest["model_config"] = data.model_config;
  manifest["step"] = data.step;
  manifest["epoch"] = data.epoch;
  std::vector<float> blob;
  append_section(manifest["params"], blob, data.params);
  append_section(manifest["optim_moments"], blob, data.optim_moments);
  manifest["optim_steps"] = data.optim_steps;

  const std::string manifest_str = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  DCSEG_CHECK_IO(out.good(), "cannot open '", path, "' for writing");
  out << kCheckpointMagic << '\n';
  const uint64_t len = manifest_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  out.flush();
  DCSEG_CHECK_IO(out.good(), "failed writing checkpoint '", path, "'");
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  DCSEG_CHECK_IO(in.good(), "cannot open checkpoint '", path, "'");
  std::string magic;
  std::getline(in, magic);
  DCSEG_CHECK_CONFIG(magic == kCheckpointMagic, "bad checkpoint magic in '", path,
                     "' (expected ", kCheckpointMagic, ")");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  DCSEG_CHECK_CONFIG(in.good(), "truncated checkpoint manifest header in '", path, "'");
  std::string manifest_str(len, '\0');
  in.read(manifest_str.data(), static_cast<std::streamsize>(len));
  DCSEG_CHECK_CONFIG(in.good(), "truncated checkpoint manifest in '", path, "'");
  json manifest;
  try {
    manifest = json::parse(manifest_str);
  } catch (const json::exception& e) {
    throw ConfigError(
        detail::format_msg("config error: unreadable checkpoint manifest: ", e.what()));
  }

  std::vector<float> blob;
  {
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    DCSEG_CHECK_CONFIG(raw.size() % sizeof(float) == 0, "checkpoint blob in '", path,
                       "' is not float-aligned");
    blob.resize(raw.size() / sizeof(float));
    std::memcpy(blob.data(), raw.data(), raw.size());
  }

  CheckpointData data;
  try {
    data.model_config = manifest.at("model_config").get<ModelConfig>();
    data.step = manifest.at("step").get<int64_t>();
    data.epoch = manifest.at("epoch").get<int64_t>();
    data.params = read_section(manifest.at("params"), blob);
    data.optim_moments = read_section(manifest.at("optim_moments"), blob);
    data.optim_steps =
        manifest.at("optim_steps").get<std::map<std::string, int64_t>>();
  } catch (const json::exception& e) {
    throw ConfigError(
        detail::format_msg("config error: malformed checkpoint manifest: ", e.what()));
  }
  data.model_config.validate();
  return data;
}

DCSegModel model_from_checkpoint(const CheckpointData& data) {
  DCSegModel model(data.model_config);
  torch::NoGradGuard guard;
  auto params = model->named_parameters();
  DCSEG_CHECK_CONFIG(params.size() == data.params.size(), "checkpoint holds ",
                     data.params.size(), " parameters, model expects ", params.size());
  for (auto& p : params) {
    auto it = data.params.find(p.key());
    DCSEG_CHECK_CONFIG(it != data.params.end(), "checkpoint is missing parameter '", p.key(),
                       "'");
    DCSEG_CHECK_CONFIG(it->second.sizes() == p.value().sizes(),
                       "checkpoint shape mismatch for parameter '", p.key(), "'");
    p.value().copy_(it->second);
  }
  return model;
}

void restore_optimizer(torch::optim::Adam& optimizer, const DCSegModel& model,
                       const CheckpointData& data) {
  for (const auto& p : model->named_parameters()) {
    auto step_it = data.optim_steps.find(p.key());
    if (step_it == data.optim_steps.end()) continue;
    auto avg_it = data.optim_moments.find(kExpAvg + p.key());
    auto sq_it = data.optim_moments.find(kExpAvgSq + p.key());
    DCSEG_CHECK_CONFIG(avg_it != data.optim_moments.end() && sq_it != data.optim_moments.end(),
                       "checkpoint optimizer moments missing for '", p.key(), "'");
    auto state = std::make_unique<torch::optim::AdamParamState>();
    state->step(step_it->second);
    state->exp_avg(avg_it->second.clone().to(p.value().device()));
    state->exp_avg_sq(sq_it->second.clone().to(p.value().device()));
    optimizer.state()[p.value().unsafeGetTensorImpl()] = std::move(state);
  }
}

}  // namespace dcseg
