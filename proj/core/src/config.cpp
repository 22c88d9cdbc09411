#include "dcseg/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include "json_detail.hpp"

namespace dcseg {

namespace {

using nlohmann::json;

[[noreturn]] void bad_field(const std::string& path, const std::string& why) {
  throw ConfigError(detail::format_msg("config error: field '", path, "': ", why));
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) bad_field(path, "expected an object");
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) bad_field(join(path, it.key()), "unknown field");
  }
}

template <typename T>
void read(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    bad_field(join(path, key), e.what());
  }
}

ModelConfig parse_model(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, path,
             {"modality_count", "class_count", "anat_channels", "modality_dim",
              "encoder_widths", "decoder_widths", "patch_side", "temperature_init"});
  ModelConfig c;
  read(j, path, "modality_count", c.modality_count);
  read(j, path, "class_count", c.class_count);
  read(j, path, "anat_channels", c.anat_channels);
  read(j, path, "modality_dim", c.modality_dim);
  read(j, path, "encoder_widths", c.encoder_widths);
  read(j, path, "decoder_widths", c.decoder_widths);
  read(j, path, "patch_side", c.patch_side);
  read(j, path, "temperature_init", c.temperature_init);
  return c;
}

TrainConfig parse_train(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, path,
             {"alpha", "learning_rate", "epochs", "batch_size", "dropout_keep_prob",
              "switches", "seed", "patch_side", "steps_per_epoch",
              "checkpoint_interval_epochs", "grad_clip_norm", "include_self_pairs"});
  TrainConfig c;
  read(j, path, "alpha", c.alpha);
  read(j, path, "learning_rate", c.learning_rate);
  read(j, path, "epochs", c.epochs);
  read(j, path, "batch_size", c.batch_size);
  read(j, path, "dropout_keep_prob", c.dropout_keep_prob);
  if (j.contains("switches")) {
    const auto sw_path = join(path, "switches");
    const json& sw = j.at("switches");
    expect_object(sw, sw_path);
    check_keys(sw, sw_path, {"ana", "mod", "rec", "reg"});
    read(sw, sw_path, "ana", c.switches.ana);
    read(sw, sw_path, "mod", c.switches.mod);
    read(sw, sw_path, "rec", c.switches.rec);
    read(sw, sw_path, "reg", c.switches.reg);
  }
  read(j, path, "seed", c.seed);
  read(j, path, "patch_side", c.patch_side);
  read(j, path, "steps_per_epoch", c.steps_per_epoch);
  read(j, path, "checkpoint_interval_epochs", c.checkpoint_interval_epochs);
  read(j, path, "grad_clip_norm", c.grad_clip_norm);
  read(j, path, "include_self_pairs", c.include_self_pairs);
  return c;
}

AugmentationConfig parse_augment(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, path, {"flip_probs", "crop_size", "intensity_shift", "intensity_scale",
                       "seed"});
  AugmentationConfig c;
  read(j, path, "flip_probs", c.flip_probs);
  read(j, path, "crop_size", c.crop_size);
  read(j, path, "intensity_shift", c.intensity_shift);
  read(j, path, "intensity_scale", c.intensity_scale);
  read(j, path, "seed", c.seed);
  return c;
}

PhantomSpec parse_phantom(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, path, {"grid_side", "modality_count", "class_count", "lesion_count",
                       "lesion_radius", "noise_sigma", "seed", "transfers"});
  PhantomSpec c;
  read(j, path, "grid_side", c.grid_side);
  read(j, path, "modality_count", c.modality_count);
  read(j, path, "class_count", c.class_count);
  read(j, path, "lesion_count", c.lesion_count);
  read(j, path, "lesion_radius", c.lesion_radius);
  read(j, path, "noise_sigma", c.noise_sigma);
  read(j, path, "seed", c.seed);
  read(j, path, "transfers", c.transfers);
  return c;
}

json model_to_json(const ModelConfig& c) {
  return json(c);  // shared with the checkpoint manifest serializer
}

json train_to_json(const TrainConfig& c) {
  json sw;
  sw["ana"] = c.switches.ana;
  sw["mod"] = c.switches.mod;
  sw["rec"] = c.switches.rec;
  sw["reg"] = c.switches.reg;
  json j;
  j["alpha"] = c.alpha;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["dropout_keep_prob"] = c.dropout_keep_prob;
  j["switches"] = sw;
  j["seed"] = c.seed;
  j["patch_side"] = c.patch_side;
  j["steps_per_epoch"] = c.steps_per_epoch;
  j["checkpoint_interval_epochs"] = c.checkpoint_interval_epochs;
  j["grad_clip_norm"] = c.grad_clip_norm;
  j["include_self_pairs"] = c.include_self_pairs;
  return j;
}

json augment_to_json(const AugmentationConfig& c) {
  json j;
  j["flip_probs"] = c.flip_probs;
  j["crop_size"] = c.crop_size;
  j["intensity_shift"] = c.intensity_shift;
  j["intensity_scale"] = c.intensity_scale;
  j["seed"] = c.seed;
  return j;
}

json phantom_to_json(const PhantomSpec& c) {
  json j;
  j["grid_side"] = c.grid_side;
  j["modality_count"] = c.modality_count;
  j["class_count"] = c.class_count;
  j["lesion_count"] = c.lesion_count;
  j["lesion_radius"] = c.lesion_radius;
  j["noise_sigma"] = c.noise_sigma;
  j["seed"] = c.seed;
  j["transfers"] = c.transfers;
  return j;
}

json parse_document(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(detail::format_msg("config error: invalid JSON: ", e.what()));
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  DCSEG_CHECK_IO(in.good(), "cannot read config file '", path, "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  DCSEG_CHECK_IO(out.good(), "cannot write '", path, "'");
  out << text;
  out.flush();
  DCSEG_CHECK_IO(out.good(), "failed writing '", path, "'");
}

template <typename F>
void validate_section(const char* name, F&& body) {
  try {
    body();
  } catch (const ConfigError&) {
    throw;
  } catch (const ContractViolation& e) {
    std::string msg = e.what();
    const std::string prefix = "contract violation: ";
    if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
    throw ConfigError(
        detail::format_msg("config error: section '", name, "': ", msg));
  }
}

}  // namespace

void RunConfig::validate() const {
  validate_section("model", [&] { model.validate(); });
  validate_section("train", [&] { train.validate(); });
  validate_section("augment", [&] { augment.validate(); });
  const bool real = !dataset_dir.empty();
  DCSEG_CHECK_CONFIG(real != phantom.has_value(),
                     "exactly one dataset source required: set 'dataset_dir' or "
                     "'phantom', not ",
                     real || phantom.has_value() ? "both" : "neither");
  DCSEG_CHECK_CONFIG(train.patch_side == model.patch_side,
                     "'train.patch_side' (", train.patch_side,
                     ") must equal 'model.patch_side' (", model.patch_side, ")");
  DCSEG_CHECK_CONFIG(!out_dir.empty(), "'out_dir' must be non-empty");
  DCSEG_CHECK_CONFIG(eval_fraction >= 0.0 && eval_fraction < 1.0,
                     "'eval_fraction' must lie in [0, 1), got ", eval_fraction);
  if (phantom.has_value()) {
    validate_section("phantom", [&] { phantom->validate(); });
    DCSEG_CHECK_CONFIG(phantom->modality_count == model.modality_count,
                       "'phantom.modality_count' (", phantom->modality_count,
                       ") must equal 'model.modality_count' (", model.modality_count,
                       ")");
    DCSEG_CHECK_CONFIG(phantom->class_count == model.class_count,
                       "'phantom.class_count' (", phantom->class_count,
                       ") must equal 'model.class_count' (", model.class_count, ")");
    DCSEG_CHECK_CONFIG(phantom->grid_side >= model.patch_side,
                       "'phantom.grid_side' (", phantom->grid_side,
                       ") must be >= 'model.patch_side' (", model.patch_side, ")");
    DCSEG_CHECK_CONFIG(phantom_train_count >= 1,
                       "'phantom_train_count' must be >= 1 with a phantom source");
    DCSEG_CHECK_CONFIG(phantom_eval_count >= 0, "'phantom_eval_count' must be >= 0");
  }
}

RunConfig parse_run_config(const std::string& text) {
  const json j = parse_document(text);
  expect_object(j, "<root>");
  check_keys(j, "", {"model", "train", "augment", "dataset_dir", "eval_fraction", "phantom",
                     "phantom_train_count", "phantom_eval_count", "out_dir"});
  RunConfig c;
  if (j.contains("model")) c.model = parse_model(j.at("model"), "model");
  if (j.contains("train")) c.train = parse_train(j.at("train"), "train");
  if (j.contains("augment")) c.augment = parse_augment(j.at("augment"), "augment");
  read(j, "", "dataset_dir", c.dataset_dir);
  read(j, "", "eval_fraction", c.eval_fraction);
  if (j.contains("phantom")) c.phantom = parse_phantom(j.at("phantom"), "phantom");
  read(j, "", "phantom_train_count", c.phantom_train_count);
  read(j, "", "phantom_eval_count", c.phantom_eval_count);
  read(j, "", "out_dir", c.out_dir);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file(path));
}

std::string serialize_run_config(const RunConfig& cfg) {
  json j;
  j["model"] = model_to_json(cfg.model);
  j["train"] = train_to_json(cfg.train);
  j["augment"] = augment_to_json(cfg.augment);
  if (!cfg.dataset_dir.empty()) j["dataset_dir"] = cfg.dataset_dir;
  j["eval_fraction"] = cfg.eval_fraction;
  if (cfg.phantom.has_value()) j["phantom"] = phantom_to_json(*cfg.phantom);
  j["phantom_train_count"] = cfg.phantom_train_count;
  j["phantom_eval_count"] = cfg.phantom_eval_count;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  write_file(path, serialize_run_config(cfg));
}

PhantomSpec parse_phantom_spec(const std::string& text) {
  const json j = parse_document(text);
  return parse_phantom(j, "phantom");
}

PhantomSpec load_phantom_spec(const std::string& path) {
  return parse_phantom_spec(read_file(path));
}

std::string serialize_phantom_spec(const PhantomSpec& spec) {
  return phantom_to_json(spec).dump(2) + "\n";
}

void save_phantom_spec(const PhantomSpec& spec, const std::string& path) {
  write_file(path, serialize_phantom_spec(spec));
}

}  // namespace dcseg
