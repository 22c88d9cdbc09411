// dcseg: phantom generation, training, missing-modality evaluation and
// gradient checking behind one declarative JSON config.
//
// Exit codes: 0 success (gradcheck: all passes), 1 gradcheck failure,
// 2 invalid command line or config, 3 training divergence, 4 I/O failure,
// 5 internal contract violation.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcseg/checkpoint.hpp"
#include "dcseg/config.hpp"
#include "dcseg/dataset.hpp"
#include "dcseg/evaluation.hpp"
#include "dcseg/gradcheck.hpp"
#include "dcseg/phantom.hpp"
#include "dcseg/training.hpp"

namespace fs = std::filesystem;
using namespace dcseg;

namespace {

// Re-raise precondition failures from user-supplied inputs as config errors
// so they exit with code 2 instead of 5.
template <typename F>
auto as_config_error(F&& body) {
  try {
    return body();
  } catch (const ContractViolation& e) {
    std::string msg = e.what();
    const std::string prefix = "contract violation: ";
    if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
    throw ConfigError("config error: " + msg);
  }
}

torch::Device resolve_device() {
  const char* env = std::getenv("DCSEG_DEVICE");
  const std::string name = (env && *env) ? env : "cpu";
  std::optional<torch::Device> device;
  try {
    device.emplace(name);
  } catch (const c10::Error&) {
    throw ConfigError("config error: DCSEG_DEVICE='" + name + "' is not a valid device name");
  }
  if (device->is_cuda() && !torch::cuda::is_available()) {
    throw ConfigError("config error: DCSEG_DEVICE='" + name +
                      "' requests CUDA but no CUDA device is available");
  }
  return *device;
}

std::string subject_name(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "phantom_%03lld", static_cast<long long>(index));
  return buf;
}

PhantomSpec spec_for_subject(PhantomSpec base, uint64_t index) {
  base.seed += index;
  return base;
}

std::vector<MultimodalVolume> phantom_subjects(const PhantomSpec& base, uint64_t first,
                                               int64_t count) {
  std::vector<MultimodalVolume> subjects;
  subjects.reserve(static_cast<std::size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    auto spec = spec_for_subject(base, first + static_cast<uint64_t>(i));
    auto subject = generate_phantom(spec);
    subject.subject_id = subject_name(static_cast<int64_t>(first) + i);
    subjects.push_back(std::move(subject));
  }
  return subjects;
}

std::vector<MultimodalVolume> real_subjects(const std::string& dataset_dir, double eval_fraction,
                                            bool want_eval_split) {
  std::vector<MultimodalVolume> subjects;
  for (const auto& dir : list_subject_dirs(dataset_dir)) {
    if (in_eval_split(dir.filename().string(), eval_fraction) != want_eval_split) continue;
    subjects.push_back(load_brats_subject(dir));
  }
  DCSEG_CHECK_CONFIG(!subjects.empty(), "no ", want_eval_split ? "evaluation" : "training",
                     " subjects found under '", dataset_dir, "' with eval_fraction=",
                     eval_fraction);
  return subjects;
}

std::vector<RegionSpec> regions_for(const ModelConfig& cfg) {
  if (cfg.class_count == 4) return brats_regions();
  std::vector<RegionSpec> regions;
  for (int64_t k = 1; k < cfg.class_count; ++k) {
    regions.push_back({"class_" + std::to_string(k), {k}});
  }
  return regions;
}

AvailabilityMask parse_subset(const std::string& text, const std::vector<std::string>& names) {
  std::vector<bool> flags(names.size(), false);
  std::size_t start = 0;
  bool any = false;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    std::string token = text.substr(start, end - start);
    start = end + 1;
    token.erase(std::remove_if(token.begin(), token.end(), ::isspace), token.end());
    if (token.empty()) continue;
    std::transform(token.begin(), token.end(), token.begin(), ::tolower);
    if (token == "t1ce") token = "t1c";  // accept the on-disk BraTS spelling
    auto it = std::find(names.begin(), names.end(), token);
    if (it == names.end()) {
      std::string valid;
      for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
      throw ConfigError("config error: --subset names '" + token + "'; valid names: " + valid);
    }
    flags[static_cast<std::size_t>(it - names.begin())] = true;
    any = true;
  }
  if (!any) throw ConfigError("config error: --subset must name at least one modality");
  return AvailabilityMask(flags);
}

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> ablate;
  std::optional<int64_t> seed;
  std::string out;
  std::string resume;
};

RunConfig load_and_override(const TrainArgs& args) {
  RunConfig cfg = load_run_config(args.config_path);
  for (const auto& name : args.ablate) {
    if (name == "ana") cfg.train.switches.ana = false;
    if (name == "mod") cfg.train.switches.mod = false;
    if (name == "rec") cfg.train.switches.rec = false;
    if (name == "reg") cfg.train.switches.reg = false;
  }
  if (args.seed.has_value()) cfg.train.seed = static_cast<uint64_t>(*args.seed);
  if (!args.out.empty()) cfg.out_dir = args.out;
  cfg.validate();
  return cfg;
}

int cmd_generate(const std::string& spec_path, const std::string& out, int64_t count,
                 std::optional<int64_t> seed) {
  PhantomSpec base = load_phantom_spec(spec_path);
  if (seed.has_value()) base.seed = static_cast<uint64_t>(*seed);
  as_config_error([&] { base.validate(); });

  std::error_code ec;
  fs::create_directories(out, ec);
  DCSEG_CHECK_IO(!ec && fs::is_directory(out), "cannot create output directory '", out, "'");

  nlohmann::json manifest;
  manifest["format"] = "dcseg_phantom_dataset_v1";
  manifest["count"] = count;
  manifest["spec"] = nlohmann::json::parse(serialize_phantom_spec(base));
  {
    std::ofstream mf(fs::path(out) / "dataset_manifest.json", std::ios::trunc);
    DCSEG_CHECK_IO(mf.good(), "cannot write manifest under '", out, "'");
    mf << manifest.dump(2) << "\n";
    mf.flush();
    DCSEG_CHECK_IO(mf.good(), "failed writing manifest under '", out, "'");
  }

  for (int64_t i = 0; i < count; ++i) {
    auto spec = spec_for_subject(base, static_cast<uint64_t>(i));
    auto subject = generate_phantom_raw(spec);
    subject.subject_id = subject_name(i);
    const fs::path dir = fs::path(out) / subject.subject_id;
    write_brats_subject(dir, subject);
    save_phantom_spec(spec, (dir / "phantom_spec.json").string());
  }
  std::cout << "generated " << count << " subjects under " << out << "\n";
  return 0;
}

int cmd_train(const TrainArgs& args) {
  const RunConfig cfg = load_and_override(args);
  const auto device = resolve_device();

  std::vector<MultimodalVolume> subjects;
  if (cfg.phantom.has_value()) {
    subjects = phantom_subjects(*cfg.phantom, 0, cfg.phantom_train_count);
  } else {
    subjects = real_subjects(cfg.dataset_dir, cfg.eval_fraction, /*want_eval_split=*/false);
  }

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  DCSEG_CHECK_IO(!ec, "cannot create output directory '", cfg.out_dir, "'");
  save_run_config(cfg, (fs::path(cfg.out_dir) / "run_config.json").string());

  auto result =
      run_training(subjects, cfg.model, cfg.train, cfg.augment, cfg.out_dir, args.resume, device);
  std::cout << "checkpoint: " << result.final_checkpoint << "\n"
            << "metrics: " << result.metrics_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& config_path, const std::string& out,
             const std::string& subset_text) {
  DCSEG_CHECK_CONFIG(data_dir.empty() != config_path.empty(),
                     "eval needs exactly one dataset source: --data DIR or --config PATH");
  const auto device = resolve_device();
  auto data = load_checkpoint(ckpt_path);
  auto model = model_from_checkpoint(data);
  model->to(device);

  std::vector<MultimodalVolume> subjects;
  if (!config_path.empty()) {
    RunConfig cfg = load_run_config(config_path);
    cfg.validate();
    DCSEG_CHECK_CONFIG(cfg.phantom.has_value(),
                       "--config evaluation requires a 'phantom' dataset source");
    DCSEG_CHECK_CONFIG(cfg.phantom_eval_count >= 1, "'phantom_eval_count' must be >= 1");
    DCSEG_CHECK_CONFIG(cfg.model == model->config,
                       "checkpoint model config does not match 'model' in ", config_path);
    subjects = phantom_subjects(*cfg.phantom, static_cast<uint64_t>(cfg.phantom_train_count),
                                cfg.phantom_eval_count);
  } else {
    for (const auto& dir : list_subject_dirs(data_dir)) {
      subjects.push_back(load_brats_subject(dir));
    }
    DCSEG_CHECK_CONFIG(!subjects.empty(), "no subjects found under '", data_dir, "'");
  }
  for (const auto& s : subjects) {
    DCSEG_CHECK_CONFIG(s.modality_count() == model->config.modality_count,
                       "'model.modality_count' is ", model->config.modality_count,
                       " but subject '", s.subject_id, "' has ", s.modality_count(),
                       " modalities");
  }

  std::error_code ec;
  fs::create_directories(out, ec);
  DCSEG_CHECK_IO(!ec, "cannot create output directory '", out, "'");

  const auto regions = regions_for(model->config);
  SubsetReport report = as_config_error([&] {
    std::vector<std::string> names;
    if (model->config.modality_count == 4) names = {"flair", "t1", "t1c", "t2"};
    auto subsets = subset_enumeration(model->config.modality_count);
    if (!subset_text.empty()) {
      if (names.empty()) {
        for (int64_t j = 0; j < model->config.modality_count; ++j) {
          names.push_back("m" + std::to_string(j));
        }
      }
      subsets = {parse_subset(subset_text, names)};
    }
    return evaluate_subsets(model, subjects, regions, subsets, names);
  });

  const auto csv = (fs::path(out) / "subset_report.csv").string();
  const auto md = (fs::path(out) / "subset_report.md").string();
  const auto emb = (fs::path(out) / "embeddings.csv").string();
  write_report_csv(report, csv);
  write_report_markdown(report, md);
  export_representations(model, subjects, emb);
  std::cout << "report: " << csv << "\n" << "report: " << md << "\n"
            << "embeddings: " << emb << "\n";
  return 0;
}

int cmd_gradcheck(std::optional<int64_t> seed) {
  GradCheckOptions opts;
  if (seed.has_value()) opts.seed = *seed;
  const auto rows = run_gradient_suite(opts);
  bool all_passed = true;
  for (const auto& row : rows) {
    std::printf("%-24s max_rel_err %12.3e  %s\n", row.name.c_str(), row.max_rel_error,
                row.passed ? "PASS" : "FAIL");
    all_passed = all_passed && row.passed;
  }
  return all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DC-Seg: disentangled multimodal segmentation, robust to missing modalities"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a phantom dataset in BraTS layout");
  std::string gen_spec, gen_out = "data/phantoms";
  int64_t gen_count = 10;
  std::optional<int64_t> gen_seed;
  gen->add_option("--spec", gen_spec, "Phantom spec JSON")->required();
  gen->add_option("--out", gen_out, "Output dataset directory");
  gen->add_option("--count", gen_count, "Number of subjects")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "Override the spec's base seed");

  auto* train = app.add_subcommand("train", "Train from a run config");
  TrainArgs targs;
  train->add_option("--config", targs.config_path, "Run config JSON")->required();
  train->add_option("--ablate", targs.ablate, "Disable a loss term (repeatable)")
      ->check(CLI::IsMember({"ana", "mod", "rec", "reg"}));
  train->add_option("--seed", targs.seed, "Override train.seed");
  train->add_option("--out", targs.out, "Override out_dir");
  train->add_option("--resume", targs.resume, "Resume from a checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint over modality subsets");
  std::string eval_ckpt, eval_data, eval_config, eval_out = "runs/eval", eval_subset;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  eval->add_option("--data", eval_data, "Dataset directory (BraTS layout)");
  eval->add_option("--config", eval_config, "Run config with a phantom source");
  eval->add_option("--out", eval_out, "Output directory");
  eval->add_option("--subset", eval_subset, "Evaluate one subset, e.g. FLAIR,T1");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::optional<int64_t> grad_seed;
  grad->add_option("--seed", grad_seed, "Random seed for the suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_spec, gen_out, gen_count, gen_seed);
    if (train->parsed()) return cmd_train(targs);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_config, eval_out, eval_subset);
    if (grad->parsed()) return cmd_gradcheck(grad_seed);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
