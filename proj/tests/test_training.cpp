#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcseg/common.hpp"
#include "dcseg/networks.hpp"
#include "dcseg/phantom.hpp"
#include "dcseg/training.hpp"

#include "doctest_torch.hpp"  // after torch: reclaims the CHECK macro

using namespace dcseg;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.modality_count = 2;
  cfg.class_count = 3;
  cfg.anat_channels = 4;
  cfg.modality_dim = 4;
  cfg.encoder_widths = {4, 8};
  cfg.decoder_widths = {8, 4};
  cfg.patch_side = 8;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.patch_side = 8;
  cfg.seed = 5;
  return cfg;
}

std::vector<MultimodalVolume> tiny_dataset(int64_t count, int64_t modalities) {
  std::vector<MultimodalVolume> out;
  for (int64_t i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.grid_side = 16;
    spec.modality_count = modalities;
    spec.class_count = 3;
    spec.lesion_count = {1, 1};
    spec.lesion_radius = {2.0, 3.0};
    spec.seed = 1000 + static_cast<uint64_t>(i);
    auto s = generate_phantom(spec);
    s.subject_id = "unit_" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

AugmentationConfig tiny_augment() {
  AugmentationConfig cfg;
  cfg.crop_size = 8;
  return cfg;
}

std::pair<torch::Tensor, torch::Tensor> tiny_batch(const ModelConfig& cfg, int64_t b,
                                                   uint64_t seed) {
  torch::manual_seed(seed);
  auto x = torch::rand({b, cfg.modality_count, cfg.patch_side, cfg.patch_side, cfg.patch_side});
  auto y = torch::randint(0, cfg.class_count, {b, cfg.patch_side, cfg.patch_side, cfg.patch_side},
                          torch::kInt64);
  return {x, y};
}

double grad_mass(DCSegModel& model, const std::string& prefix) {
  double total = 0.0;
  for (const auto& item : model->named_parameters()) {
    if (item.key().rfind(prefix, 0) != 0) continue;
    if (!item.value().grad().defined()) continue;
    total += item.value().grad().abs().sum().item<double>();
  }
  return total;
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("train config: validation rejects broken settings with field paths") {
  auto cfg = tiny_train();
  cfg.validate();
  cfg.epochs = 0;  // legal: resume bookkeeping and checkpoint-only runs
  cfg.validate();

  cfg = tiny_train();
  cfg.alpha = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train();
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train();
  cfg.epochs = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train();
  cfg.dropout_keep_prob = 0.0;
  try {
    cfg.validate();
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.dropout_keep_prob") != std::string::npos);
  }
  cfg = tiny_train();
  cfg.dropout_keep_prob = 1.2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("assemble_losses: every enabled term is live and the blend is exact") {
  auto mcfg = tiny_model();
  torch::manual_seed(11);
  DCSegModel model(mcfg);
  auto [x, y] = tiny_batch(mcfg, 2, 12);
  auto mask = torch::ones({2, mcfg.modality_count});
  auto tcfg = tiny_train();

  auto losses = assemble_losses(model, x, y, mask, tcfg);
  for (const auto* t : {&losses.seg, &losses.reg, &losses.ana, &losses.mod, &losses.rec}) {
    CHECK(t->item<double>() > 0.0);
    CHECK(std::isfinite(t->item<double>()));
  }
  const double want = losses.seg.item<double>() + losses.reg.item<double>() +
                      tcfg.alpha * (losses.ana.item<double>() + losses.mod.item<double>() +
                                    losses.rec.item<double>());
  CHECK(losses.total.item<double>() == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("assemble_losses: each switch zeroes its term and leaves the rest untouched") {
  auto mcfg = tiny_model();
  torch::manual_seed(13);
  DCSegModel model(mcfg);
  auto [x, y] = tiny_batch(mcfg, 2, 14);
  auto mask = torch::ones({2, mcfg.modality_count});
  auto base_cfg = tiny_train();
  auto base = assemble_losses(model, x, y, mask, base_cfg);

  auto value = [](const torch::Tensor& t) { return t.item<double>(); };

  for (int which = 0; which < 4; ++which) {
    auto cfg = base_cfg;
    if (which == 0) cfg.switches.ana = false;
    if (which == 1) cfg.switches.mod = false;
    if (which == 2) cfg.switches.rec = false;
    if (which == 3) cfg.switches.reg = false;
    auto got = assemble_losses(model, x, y, mask, cfg);

    CHECK(value(got.seg) == value(base.seg));
    if (which == 0) {
      CHECK(value(got.ana) == 0.0);
      CHECK(value(got.mod) == value(base.mod));
      CHECK(value(got.rec) == value(base.rec));
      CHECK(value(got.reg) == value(base.reg));
    }
    if (which == 1) {
      CHECK(value(got.mod) == 0.0);
      CHECK(value(got.ana) == value(base.ana));
      CHECK(value(got.rec) == value(base.rec));
    }
    if (which == 2) {
      CHECK(value(got.rec) == 0.0);
      CHECK(value(got.ana) == value(base.ana));
      CHECK(value(got.mod) == value(base.mod));
    }
    if (which == 3) {
      CHECK(value(got.reg) == 0.0);
      CHECK(value(got.ana) == value(base.ana));
    }
    const double want = value(got.seg) + value(got.reg) +
                        cfg.alpha * (value(got.ana) + value(got.mod) + value(got.rec));
    CHECK(value(got.total) == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("assemble_losses: disabled branches receive no gradient") {
  auto mcfg = tiny_model();
  auto [x, y] = tiny_batch(mcfg, 1, 21);
  auto mask = torch::ones({1, mcfg.modality_count});

  SUBCASE("reconstruction off starves the reconstruction decoders") {
    torch::manual_seed(22);
    DCSegModel model(mcfg);
    auto cfg = tiny_train();
    cfg.switches.rec = false;
    assemble_losses(model, x, y, mask, cfg).total.backward();
    CHECK(grad_mass(model, "dec_rec") == 0.0);
    CHECK(grad_mass(model, "enc_ana") > 0.0);
    // Modality encoders still feed the modality contrastive term.
    CHECK(grad_mass(model, "enc_mod") > 0.0);
  }

  SUBCASE("regularizer off starves the separate decoder") {
    torch::manual_seed(23);
    DCSegModel model(mcfg);
    auto cfg = tiny_train();
    cfg.switches.reg = false;
    assemble_losses(model, x, y, mask, cfg).total.backward();
    CHECK(grad_mass(model, "dec_sep") == 0.0);
    CHECK(grad_mass(model, "dec_fuse") > 0.0);
  }

  SUBCASE("modality and reconstruction off starve the modality encoders") {
    torch::manual_seed(24);
    DCSegModel model(mcfg);
    auto cfg = tiny_train();
    cfg.switches.mod = false;
    cfg.switches.rec = false;
    assemble_losses(model, x, y, mask, cfg).total.backward();
    CHECK(grad_mass(model, "enc_mod") == 0.0);
    CHECK(grad_mass(model, "log_t") > 0.0);  // the anatomical term still uses it
  }

  SUBCASE("both contrastive terms off starve the temperature") {
    torch::manual_seed(25);
    DCSegModel model(mcfg);
    auto cfg = tiny_train();
    cfg.switches.ana = false;
    cfg.switches.mod = false;
    assemble_losses(model, x, y, mask, cfg).total.backward();
    CHECK(grad_mass(model, "log_t") == 0.0);
    CHECK(grad_mass(model, "dec_fuse") > 0.0);
  }
}

TEST_CASE("train_step: stats are finite, sequenced and actually optimize") {
  auto mcfg = tiny_model();
  torch::manual_seed(31);
  TrainState state;
  state.model = DCSegModel(mcfg);
  state.optimizer = std::make_shared<torch::optim::Adam>(state.model->parameters(),
                                                         torch::optim::AdamOptions(1e-3));
  auto tcfg = tiny_train();
  auto [x, y] = tiny_batch(mcfg, 2, 32);
  auto before = state.model->parameters()[0].clone();

  std::mt19937_64 rng(7);
  auto stats = train_step(state, x, y, tcfg, rng);
  CHECK(stats.step == 1);
  CHECK(state.step == 1);
  for (double v : {stats.l_seg, stats.l_reg, stats.l_ana, stats.l_mod, stats.l_rec, stats.total})
    CHECK(std::isfinite(v));
  CHECK(stats.total == doctest::Approx(stats.l_seg + stats.l_reg +
                                       tcfg.alpha * (stats.l_ana + stats.l_mod + stats.l_rec))
                           .epsilon(1e-6));
  CHECK(stats.t_value == doctest::Approx(10.0).epsilon(1e-5));
  CHECK(!state.model->parameters()[0].equal(before));

  auto again = train_step(state, x, y, tcfg, rng);
  CHECK(again.step == 2);
}

TEST_CASE("train_step: a blown-up temperature is reported as divergence") {
  auto mcfg = tiny_model();
  torch::manual_seed(41);
  TrainState state;
  state.model = DCSegModel(mcfg);
  state.optimizer = std::make_shared<torch::optim::Adam>(state.model->parameters(),
                                                         torch::optim::AdamOptions(1e-3));
  {
    torch::NoGradGuard ng;
    state.model->log_t.fill_(1e5f);  // exp overflows to infinity
  }
  auto tcfg = tiny_train();
  auto [x, y] = tiny_batch(mcfg, 1, 42);
  std::mt19937_64 rng(9);
  try {
    train_step(state, x, y, tcfg, rng);
    FAIL("expected a DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
  }
}

TEST_CASE("run_training: metrics layout, checkpoints and full determinism") {
  auto dataset = tiny_dataset(3, 2);
  auto mcfg = tiny_model();
  auto tcfg = tiny_train();
  tcfg.epochs = 2;
  tcfg.steps_per_epoch = 3;
  tcfg.checkpoint_interval_epochs = 1;
  auto acfg = tiny_augment();

  auto dir_a = fresh_dir("dcseg_test_train_a");
  auto result = run_training(dataset, mcfg, tcfg, acfg, dir_a.string());

  CHECK(result.state.step == 6);
  CHECK(result.state.epoch == 2);
  CHECK(fs::exists(result.final_checkpoint));
  CHECK(fs::path(result.final_checkpoint).filename() == "ckpt_final.dcseg");
  CHECK(fs::exists(dir_a / "ckpt_epoch_1.dcseg"));
  CHECK(fs::exists(dir_a / "ckpt_epoch_2.dcseg"));

  auto lines = lines_of(slurp(result.metrics_path));
  REQUIRE(lines.size() == 7);  // header + 6 steps
  CHECK(lines[0] == "step,epoch,l_seg,l_reg,l_ana,l_mod,l_rec,total,t_value");
  CHECK(lines[1].rfind("1,0,", 0) == 0);
  CHECK(lines[4].rfind("4,1,", 0) == 0);  // second epoch starts at step 4

  // The learnable temperature should have moved off its 10.0 start.
  const auto& last = lines.back();
  const double t_last = std::stod(last.substr(last.rfind(',') + 1));
  CHECK(t_last != doctest::Approx(10.0).epsilon(1e-12));

  // A second identical run reproduces both files byte for byte.
  auto dir_b = fresh_dir("dcseg_test_train_b");
  auto rerun = run_training(dataset, mcfg, tcfg, acfg, dir_b.string());
  CHECK(slurp(result.metrics_path) == slurp(rerun.metrics_path));
  CHECK(slurp(result.final_checkpoint) == slurp(rerun.final_checkpoint));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("run_training: interrupting and resuming is bit-identical") {
  auto dataset = tiny_dataset(3, 2);
  auto mcfg = tiny_model();
  auto acfg = tiny_augment();

  auto straight_cfg = tiny_train();
  straight_cfg.epochs = 2;
  straight_cfg.steps_per_epoch = 2;
  auto dir_straight = fresh_dir("dcseg_test_resume_straight");
  auto straight = run_training(dataset, mcfg, straight_cfg, acfg, dir_straight.string());

  auto dir_resumed = fresh_dir("dcseg_test_resume_split");
  auto first_cfg = straight_cfg;
  first_cfg.epochs = 1;
  auto first = run_training(dataset, mcfg, first_cfg, acfg, dir_resumed.string());
  auto resumed = run_training(dataset, mcfg, straight_cfg, acfg, dir_resumed.string(),
                              first.final_checkpoint);

  CHECK(slurp(straight.metrics_path) == slurp(resumed.metrics_path));
  CHECK(slurp(straight.final_checkpoint) == slurp(resumed.final_checkpoint));
  fs::remove_all(dir_straight);
  fs::remove_all(dir_resumed);
}

TEST_CASE("run_training: default steps per epoch cover the dataset") {
  auto dataset = tiny_dataset(3, 2);
  auto tcfg = tiny_train();
  tcfg.epochs = 1;
  tcfg.batch_size = 2;
  tcfg.steps_per_epoch = 0;  // ceil(3 / 2) = 2
  auto dir = fresh_dir("dcseg_test_train_steps");
  auto result = run_training(dataset, tiny_model(), tcfg, tiny_augment(), dir.string());
  CHECK(result.state.step == 2);
  fs::remove_all(dir);
}

TEST_CASE("run_training: dataset contract violations are rejected up front") {
  auto dir = fresh_dir("dcseg_test_train_bad");
  CHECK_THROWS_AS(
      run_training({}, tiny_model(), tiny_train(), tiny_augment(), dir.string()),
      ContractViolation);
  auto wrong = tiny_dataset(1, 3);  // three modalities, model expects two
  CHECK_THROWS_AS(
      run_training(wrong, tiny_model(), tiny_train(), tiny_augment(), dir.string()),
      ContractViolation);
  fs::remove_all(dir);
}
