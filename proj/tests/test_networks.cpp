#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cmath>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "dcseg/common.hpp"
#include "dcseg/networks.hpp"
#include "dcseg/volume.hpp"

#include "doctest_torch.hpp"  // after torch: reclaims the CHECK macro

using namespace dcseg;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.modality_count = 3;
  cfg.class_count = 3;
  cfg.anat_channels = 4;
  cfg.modality_dim = 5;
  cfg.encoder_widths = {4, 8};
  cfg.decoder_widths = {8, 4};
  cfg.patch_side = 8;
  return cfg;
}

torch::Tensor random_batch(const ModelConfig& cfg, int64_t b, uint64_t seed) {
  torch::manual_seed(seed);
  return torch::rand({b, cfg.modality_count, cfg.patch_side, cfg.patch_side, cfg.patch_side});
}

bool all_finite(const torch::Tensor& t) { return t.isfinite().all().item<bool>(); }

}  // namespace

TEST_CASE("model config: geometry helpers and validation") {
  auto cfg = small_config();
  CHECK(cfg.levels() == 2);
  CHECK(cfg.downsample_factor() == 2);
  CHECK(cfg.rep_side() == 4);
  cfg.validate();

  ModelConfig bad = small_config();
  bad.patch_side = 9;  // not divisible by the downsample factor
  CHECK_THROWS_AS(bad.validate(), ContractViolation);

  bad = small_config();
  bad.decoder_widths = {8};
  CHECK_THROWS_AS(bad.validate(), ContractViolation);

  bad = small_config();
  bad.modality_count = 0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);

  bad = small_config();
  bad.class_count = 1;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);

  bad = small_config();
  bad.temperature_init = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("encoders and decoders produce the documented shapes") {
  auto cfg = small_config();
  torch::manual_seed(1);
  DCSegModel model(cfg);
  model->eval();
  torch::NoGradGuard ng;

  const int64_t s = cfg.patch_side, d = cfg.rep_side();
  auto x1 = torch::rand({1, s, s, s});
  auto a = model->encode_anatomical(x1, 0);
  CHECK(a.sizes() == torch::IntArrayRef({cfg.anat_channels, d, d, d}));
  auto m = model->encode_modality(x1, 0);
  CHECK(m.sizes() == torch::IntArrayRef({cfg.modality_dim}));

  auto xb = torch::rand({2, 1, s, s, s});
  auto ab = model->encode_anatomical(xb, 1);
  CHECK(ab.sizes() == torch::IntArrayRef({2, cfg.anat_channels, d, d, d}));
  auto mb = model->encode_modality(xb, 1);
  CHECK(mb.sizes() == torch::IntArrayRef({2, cfg.modality_dim}));

  std::vector<torch::Tensor> anats;
  for (int64_t j = 0; j < cfg.modality_count; ++j) anats.push_back(torch::rand_like(a));
  auto fused = model->fuse_anatomical(anats, AvailabilityMask::all_on(cfg.modality_count));
  CHECK(fused.sizes() == a.sizes());

  CHECK(model->decode_separate(a).sizes() == torch::IntArrayRef({cfg.class_count, s, s, s}));
  CHECK(model->decode_fused(fused).sizes() == torch::IntArrayRef({cfg.class_count, s, s, s}));
  CHECK(model->decode_reconstruction(fused, m, 0).sizes() == torch::IntArrayRef({1, s, s, s}));
}

TEST_CASE("forward pass: per-modality vectors, bounded maps, finite outputs") {
  auto cfg = small_config();
  torch::manual_seed(2);
  DCSegModel model(cfg);
  auto x = random_batch(cfg, 2, 3);
  auto mask = torch::ones({2, cfg.modality_count});
  auto out = model->forward_training(x, mask);

  REQUIRE(static_cast<int64_t>(out.anatomical.size()) == cfg.modality_count);
  REQUIRE(static_cast<int64_t>(out.modality.size()) == cfg.modality_count);
  REQUIRE(static_cast<int64_t>(out.reconstructions.size()) == cfg.modality_count);
  REQUIRE(static_cast<int64_t>(out.separate_logits.size()) == cfg.modality_count);

  const int64_t s = cfg.patch_side, d = cfg.rep_side();
  for (int64_t j = 0; j < cfg.modality_count; ++j) {
    CHECK(out.anatomical[static_cast<size_t>(j)].sizes() ==
          torch::IntArrayRef({2, cfg.anat_channels, d, d, d}));
    // The tanh head bounds anatomical features to (-1, 1).
    CHECK(out.anatomical[static_cast<size_t>(j)].abs().max().item<double>() <= 1.0);
    CHECK(out.modality[static_cast<size_t>(j)].abs().max().item<double>() <= 1.0);
    CHECK(out.reconstructions[static_cast<size_t>(j)].sizes() ==
          torch::IntArrayRef({2, 1, s, s, s}));
    CHECK(out.separate_logits[static_cast<size_t>(j)].sizes() ==
          torch::IntArrayRef({2, cfg.class_count, s, s, s}));
    CHECK(all_finite(out.separate_logits[static_cast<size_t>(j)]));
  }
  CHECK(out.fused.sizes() == torch::IntArrayRef({2, cfg.anat_channels, d, d, d}));
  CHECK(out.fused_logits.sizes() == torch::IntArrayRef({2, cfg.class_count, s, s, s}));
  CHECK(all_finite(out.fused_logits));
}

TEST_CASE("construction is deterministic under a fixed seed") {
  auto cfg = small_config();
  torch::manual_seed(77);
  DCSegModel m1(cfg);
  torch::manual_seed(77);
  DCSegModel m2(cfg);
  auto p1 = m1->parameters(), p2 = m2->parameters();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].equal(p2[i]));

  auto x = random_batch(cfg, 2, 5);
  auto mask = torch::ones({2, cfg.modality_count});
  torch::NoGradGuard ng;
  auto o1 = m1->forward_training(x, mask);
  auto o2 = m2->forward_training(x, mask);
  CHECK(o1.fused_logits.equal(o2.fused_logits));
  CHECK(o1.fused.equal(o2.fused));
}

TEST_CASE("separate decoder weights are shared across modalities") {
  auto cfg = small_config();
  torch::manual_seed(7);
  DCSegModel model(cfg);
  model->eval();
  torch::NoGradGuard ng;

  // A single decoder instance serves every modality: the named parameter
  // tree has exactly one dec_sep subtree, and the training outputs reproduce
  // direct calls through it.
  int sep_params = 0;
  for (const auto& item : model->named_parameters())
    if (item.key().rfind("dec_sep.", 0) == 0) ++sep_params;
  CHECK(sep_params > 0);
  const auto direct = model->dec_sep->parameters().size();
  CHECK(static_cast<std::size_t>(sep_params) == direct);

  auto x = random_batch(cfg, 1, 9);
  auto mask = torch::ones({1, cfg.modality_count});
  auto out = model->forward_training(x, mask);
  for (int64_t j = 0; j < cfg.modality_count; ++j) {
    auto again = model->decode_separate(out.anatomical[static_cast<size_t>(j)]);
    CHECK(again.equal(out.separate_logits[static_cast<size_t>(j)]));
  }
}

TEST_CASE("fusion: masked-out modalities cannot influence any output") {
  auto cfg = small_config();
  cfg.modality_count = 4;
  torch::manual_seed(11);
  DCSegModel model(cfg);
  model->eval();
  torch::NoGradGuard ng;

  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_batch(cfg, 2, 1000 + static_cast<uint64_t>(trial));
    // Random non-empty, non-full mask shared by both batch items.
    unsigned bits = 0;
    while (bits == 0 || bits == 15) bits = static_cast<unsigned>(rng() & 15u);
    auto mask = AvailabilityMask::from_bits(4, bits).to_tensor().unsqueeze(0).repeat({2, 1});

    auto base = model->forward_training(x, mask);

    // Replace every dropped modality's voxels with unrelated data.
    auto poisoned = x.clone();
    for (int64_t j = 0; j < 4; ++j)
      if (((bits >> j) & 1u) == 0)
        poisoned.slice(1, j, j + 1) = torch::rand({2, 1, cfg.patch_side, cfg.patch_side,
                                                   cfg.patch_side});
    auto got = model->forward_training(poisoned, mask);

    CHECK(got.fused.equal(base.fused));
    CHECK(got.fused_logits.equal(base.fused_logits));
    for (int64_t j = 0; j < 4; ++j) {
      if (((bits >> j) & 1u) == 1) {
        CHECK(got.reconstructions[static_cast<size_t>(j)].equal(
            base.reconstructions[static_cast<size_t>(j)]));
        CHECK(got.anatomical[static_cast<size_t>(j)].equal(
            base.anatomical[static_cast<size_t>(j)]));
      }
    }
  }
}

TEST_CASE("fusion: all-dropped mask rows are rejected") {
  auto cfg = small_config();
  torch::manual_seed(13);
  DCSegModel model(cfg);
  auto x = random_batch(cfg, 2, 14);
  auto mask = torch::ones({2, cfg.modality_count});
  mask[1].zero_();
  CHECK_THROWS_AS(model->forward_training(x, mask), ContractViolation);

  std::vector<torch::Tensor> anats;
  const int64_t d = cfg.rep_side();
  for (int64_t j = 0; j < cfg.modality_count; ++j)
    anats.push_back(torch::rand({cfg.anat_channels, d, d, d}));
  CHECK_THROWS_AS(model->fuse_anatomical(anats, AvailabilityMask(std::vector<bool>(static_cast<size_t>(cfg.modality_count), false))),
                  ContractViolation);
}

TEST_CASE("fusion: the unbatched overload matches the batched one") {
  auto cfg = small_config();
  torch::manual_seed(17);
  DCSegModel model(cfg);
  model->eval();
  torch::NoGradGuard ng;
  const int64_t d = cfg.rep_side();
  std::vector<torch::Tensor> anats, batched;
  for (int64_t j = 0; j < cfg.modality_count; ++j) {
    anats.push_back(torch::rand({cfg.anat_channels, d, d, d}));
    batched.push_back(anats.back().unsqueeze(0));
  }
  AvailabilityMask mask = AvailabilityMask::from_bits(cfg.modality_count, 0b101);
  auto single = model->fuse_anatomical(anats, mask);
  auto row = mask.to_tensor().unsqueeze(0);
  auto multi = model->fuse_anatomical(batched, row).squeeze(0);
  CHECK(single.equal(multi));
}

TEST_CASE("reconstruction decoder: conditioning is an exact no-op at initialization") {
  auto cfg = small_config();
  torch::manual_seed(19);
  DCSegModel model(cfg);
  model->eval();
  torch::NoGradGuard ng;
  const int64_t d = cfg.rep_side();
  auto z = torch::rand({cfg.anat_channels, d, d, d});
  auto m1 = torch::rand({cfg.modality_dim});
  auto m2 = -torch::rand({cfg.modality_dim});
  CHECK(model->decode_reconstruction(z, m1, 0).equal(model->decode_reconstruction(z, m2, 0)));
}

TEST_CASE("reconstruction decoder: trained conditioning layers react to the vector") {
  auto cfg = small_config();
  torch::manual_seed(23);
  DCSegModel model(cfg);
  model->eval();
  {
    // Knock the conditioning layers off their identity initialization.
    torch::NoGradGuard ng;
    for (auto& p : model->dec_rec[0]->as<ReconDecoderImpl>()->films->parameters())
      p.add_(torch::randn_like(p) * 0.3);
  }
  torch::NoGradGuard ng;
  const int64_t d = cfg.rep_side();
  auto z = torch::rand({cfg.anat_channels, d, d, d});
  auto m1 = torch::ones({cfg.modality_dim});
  auto m2 = -torch::ones({cfg.modality_dim});
  auto r1 = model->decode_reconstruction(z, m1, 0);
  auto r2 = model->decode_reconstruction(z, m2, 0);
  CHECK(!r1.equal(r2));
}

TEST_CASE("gradients reach every trainable submodule") {
  auto cfg = small_config();
  torch::manual_seed(29);
  DCSegModel model(cfg);
  auto x = random_batch(cfg, 2, 31);
  auto mask = torch::ones({2, cfg.modality_count});
  // Leave one modality out for one item so the masked-gate path is exercised.
  mask[0][2] = 0.0;
  auto out = model->forward_training(x, mask);

  torch::Tensor loss = out.fused_logits.pow(2).mean();
  for (int64_t j = 0; j < cfg.modality_count; ++j) {
    loss = loss + out.reconstructions[static_cast<size_t>(j)].pow(2).mean();
    loss = loss + out.separate_logits[static_cast<size_t>(j)].pow(2).mean();
    loss = loss + out.modality[static_cast<size_t>(j)].pow(2).mean();
  }
  loss.backward();

  for (const auto& item : model->named_parameters()) {
    if (item.key() == "log_t") continue;  // only the contrastive losses use it
    REQUIRE(item.value().grad().defined());
    CHECK(all_finite(item.value().grad()));
  }
  // Spot-check that the big branches actually received signal.
  for (const char* prefix : {"enc_ana.0", "enc_mod.0", "dec_rec.0", "fusion", "dec_sep",
                             "dec_fuse"}) {
    double total = 0.0;
    for (const auto& item : model->named_parameters())
      if (item.key().rfind(prefix, 0) == 0) total += item.value().grad().abs().sum().item<double>();
    INFO("submodule ", prefix);
    CHECK(total > 0.0);
  }
}

TEST_CASE("temperature: stored as log and exposed as its exponential") {
  auto cfg = small_config();
  cfg.temperature_init = 10.0;
  torch::manual_seed(37);
  DCSegModel model(cfg);
  CHECK(model->temperature().item<double>() == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(model->log_t.requires_grad());
}
