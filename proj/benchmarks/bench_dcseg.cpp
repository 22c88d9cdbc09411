// Microbenchmarks for the hot paths: the pairwise-similarity losses, the
// model's forward/backward work, fusion, and phantom generation.

#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "dcseg/losses.hpp"
#include "dcseg/networks.hpp"
#include "dcseg/phantom.hpp"
#include "dcseg/training.hpp"

namespace {

using namespace dcseg;

constexpr int64_t kN = 2, kM = 4, kC = 8, kD = 8;

torch::Tensor stacked_maps() {
  torch::manual_seed(0);
  return torch::rand({kN, kM, kC, kD, kD, kD}).reshape({kN * kM, kC, kD, kD, kD});
}

ModelConfig toy_model_config() {
  ModelConfig cfg;  // defaults are the toy scale: M=4, C=8, patch 32
  return cfg;
}

void BM_PairwiseSsim(benchmark::State& state) {
  const auto maps = stacked_maps();
  for (auto _ : state) {
    benchmark::DoNotOptimize(pairwise_ssim(maps, 1e-4, 9e-4));
  }
}
BENCHMARK(BM_PairwiseSsim);

void BM_AnatomicalContrastive(benchmark::State& state) {
  const auto batch = PairBatch::from_stacked(stacked_maps().reshape({kN, kM, kC, kD, kD, kD}));
  const auto cfg = ContrastiveConfig::with_temperature(10.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(anatomical_contrastive_loss(batch, cfg));
  }
}
BENCHMARK(BM_AnatomicalContrastive);

void BM_ModalityContrastive(benchmark::State& state) {
  torch::manual_seed(0);
  const auto batch = PairBatch::from_stacked(torch::randn({kN, kM, 8}));
  const auto cfg = ContrastiveConfig::with_temperature(10.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(modality_contrastive_loss(batch, cfg));
  }
}
BENCHMARK(BM_ModalityContrastive);

void BM_SegmentationLosses(benchmark::State& state) {
  torch::manual_seed(0);
  const auto logits = torch::randn({2, 4, 32, 32, 32});
  const auto labels = torch::randint(0, 4, {2, 32, 32, 32}, torch::kInt64);
  const auto weights = inverse_frequency_weights(labels, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(weighted_cross_entropy(logits, labels, weights) +
                             soft_dice_loss(logits, labels));
  }
}
BENCHMARK(BM_SegmentationLosses);

void BM_FuseAnatomical(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  torch::manual_seed(0);
  DCSegModel model(toy_model_config());
  model->eval();
  std::vector<torch::Tensor> anats;
  const int64_t d = model->config.rep_side();
  for (int64_t j = 0; j < kM; ++j) {
    anats.push_back(torch::rand({1, model->config.anat_channels, d, d, d}));
  }
  const auto mask = AvailabilityMask::all_on(kM).to_tensor().unsqueeze(0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model->fuse_anatomical(anats, mask));
  }
}
BENCHMARK(BM_FuseAnatomical);

void BM_ForwardTraining(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  torch::manual_seed(0);
  DCSegModel model(toy_model_config());
  model->eval();
  const auto x = torch::rand({1, kM, 32, 32, 32});
  const auto mask = AvailabilityMask::all_on(kM).to_tensor().unsqueeze(0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model->forward_training(x, mask));
  }
}
BENCHMARK(BM_ForwardTraining);

void BM_TrainStep(benchmark::State& state) {
  torch::manual_seed(0);
  ModelConfig mcfg = toy_model_config();
  mcfg.patch_side = 16;
  TrainConfig tcfg;
  tcfg.patch_side = 16;
  tcfg.batch_size = 1;
  TrainState st;
  st.model = DCSegModel(mcfg);
  st.optimizer = std::make_shared<torch::optim::Adam>(
      st.model->parameters(), torch::optim::AdamOptions(tcfg.learning_rate));
  const auto x = torch::rand({1, kM, 16, 16, 16});
  const auto y = torch::randint(0, 4, {1, 16, 16, 16}, torch::kInt64);
  std::mt19937_64 rng(7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_step(st, x, y, tcfg, rng));
  }
}
BENCHMARK(BM_TrainStep);

void BM_GeneratePhantom(benchmark::State& state) {
  PhantomSpec spec;
  uint64_t seed = 0;
  for (auto _ : state) {
    spec.seed = seed++;
    benchmark::DoNotOptimize(generate_phantom(spec));
  }
}
BENCHMARK(BM_GeneratePhantom);

}  // namespace

BENCHMARK_MAIN();
