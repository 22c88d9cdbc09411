#include "dcseg/training.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dcseg/checkpoint.hpp"
#include "dcseg/losses.hpp"
#include "rng_detail.hpp"

namespace dcseg {

namespace {

namespace fs = std::filesystem;

constexpr const char* kMetricsHeader = "step,epoch,l_seg,l_reg,l_ana,l_mod,l_rec,total,t_value";

double scalar(const torch::Tensor& t) { return t.item<double>(); }

void append_metrics_row(std::ofstream& out, const StepStats& s) {
  char line[256];
  std::snprintf(line, sizeof(line),
                "%" PRId64 ",%" PRId64 ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", s.step, s.epoch,
                s.l_seg, s.l_reg, s.l_ana, s.l_mod, s.l_rec, s.total, s.t_value);
  out << line << '\n';
  out.flush();
  DCSEG_CHECK_IO(out.good(), "failed appending to metrics log");
}

// Segmentation loss pair of Eqs. 7/8: weighted cross entropy plus soft Dice.
torch::Tensor seg_term(const torch::Tensor& logits, const torch::Tensor& labels,
                       const torch::Tensor& weights) {
  return weighted_cross_entropy(logits, labels, weights) + soft_dice_loss(logits, labels);
}

}  // namespace

void TrainConfig::validate() const {
  DCSEG_CHECK_CONFIG(alpha >= 0, "train.alpha must be >= 0");
  DCSEG_CHECK_CONFIG(learning_rate > 0, "train.learning_rate must be > 0");
  DCSEG_CHECK_CONFIG(epochs >= 0, "train.epochs must be >= 0");
  DCSEG_CHECK_CONFIG(batch_size >= 1, "train.batch_size must be >= 1");
  DCSEG_CHECK_CONFIG(dropout_keep_prob > 0 && dropout_keep_prob <= 1,
                     "train.dropout_keep_prob must lie in (0, 1]");
  DCSEG_CHECK_CONFIG(patch_side >= 4, "train.patch_side must be >= 4");
  DCSEG_CHECK_CONFIG(steps_per_epoch >= 0, "train.steps_per_epoch must be >= 0");
  DCSEG_CHECK_CONFIG(checkpoint_interval_epochs >= 0,
                     "train.checkpoint_interval_epochs must be >= 0");
  DCSEG_CHECK_CONFIG(grad_clip_norm >= 0, "train.grad_clip_norm must be >= 0");
}

AvailabilityMask sample_availability(int64_t modality_count, double keep_prob,
                                     std::mt19937_64& rng) {
  DCSEG_CHECK(modality_count >= 1, "need at least one modality");
  DCSEG_CHECK(keep_prob > 0 && keep_prob <= 1, "keep probability must lie in (0, 1]");
  std::bernoulli_distribution keep(keep_prob);
  std::vector<bool> bits(static_cast<std::size_t>(modality_count));
  while (true) {
    bool any = false;
    for (auto&& bit : bits) {
      const bool b = keep(rng);
      bit = b;
      any = any || b;
    }
    if (any) return AvailabilityMask(bits);
  }
}

LossBreakdown assemble_losses(DCSegModel& model, const torch::Tensor& x, const torch::Tensor& y,
                              const torch::Tensor& mask, const TrainConfig& cfg) {
  const auto& mcfg = model->config;
  const int64_t m_count = mcfg.modality_count;
  DCSEG_CHECK(x.defined() && x.dim() == 5 && x.size(1) == m_count,
              "training batch must be (B, M, s, s, s)");
  DCSEG_CHECK(y.defined() && y.dim() == 4 && y.size(0) == x.size(0),
              "labels must be (B, s, s, s)");

  const bool need_mods = cfg.switches.mod || cfg.switches.rec;
  std::vector<torch::Tensor> anats, mods;
  anats.reserve(m_count);
  for (int64_t j = 0; j < m_count; ++j) {
    auto xj = x.slice(1, j, j + 1);
    anats.push_back(model->encode_anatomical(xj, j));
    if (need_mods) mods.push_back(model->encode_modality(xj, j));
  }
  auto z = model->fuse_anatomical(anats, mask);

  ContrastiveConfig ccfg;
  ccfg.temperature = model->temperature();
  ccfg.include_self_pairs = cfg.include_self_pairs;

  auto zero = torch::zeros({}, x.options());
  LossBreakdown out;

  auto weights = inverse_frequency_weights(y, mcfg.class_count);
  out.seg = seg_term(model->decode_fused(z), y, weights);

  if (cfg.switches.reg) {
    torch::Tensor reg;
    for (int64_t j = 0; j < m_count; ++j) {
      auto term = seg_term(model->decode_separate(anats[j]), y, weights);
      reg = reg.defined() ? reg + term : term;
    }
    out.reg = reg;
  } else {
    out.reg = zero;
  }

  out.ana = cfg.switches.ana
                ? anatomical_contrastive_loss(PairBatch::from_stacked(torch::stack(anats, 1)), ccfg)
                : zero;
  out.mod = cfg.switches.mod
                ? modality_contrastive_loss(PairBatch::from_stacked(torch::stack(mods, 1)), ccfg)
                : zero;

  if (cfg.switches.rec) {
    std::vector<torch::Tensor> recons, targets;
    recons.reserve(m_count);
    targets.reserve(m_count);
    for (int64_t j = 0; j < m_count; ++j) {
      recons.push_back(model->decode_reconstruction(z, mods[j], j));
      targets.push_back(x.slice(1, j, j + 1));
    }
    out.rec = reconstruction_loss(recons, targets);
  } else {
    out.rec = zero;
  }

  out.total = total_loss(out.seg, out.reg, disentangle_loss(out.ana, out.mod, out.rec), cfg.alpha);
  return out;
}

StepStats train_step(TrainState& state, const torch::Tensor& x, const torch::Tensor& y,
                     const TrainConfig& cfg, std::mt19937_64& rng) {
  const int64_t m_count = state.model->config.modality_count;
  std::vector<torch::Tensor> mask_rows;
  mask_rows.reserve(static_cast<std::size_t>(x.size(0)));
  for (int64_t i = 0; i < x.size(0); ++i) {
    mask_rows.push_back(sample_availability(m_count, cfg.dropout_keep_prob, rng).to_tensor());
  }
  auto mask = torch::stack(mask_rows).to(x.device());

  LossBreakdown losses;
  try {
    losses = assemble_losses(state.model, x, y, mask, cfg);
  } catch (const ContractViolation& e) {
    // Non-finite activations and collapsed embeddings surface as contract
    // violations inside the loss layer; at training time those are
    // divergences. Anything else (shape mistakes, bad labels) stays a
    // contract violation.
    const std::string what = e.what();
    if (what.find("finite") == std::string::npos &&
        what.find("zero norm") == std::string::npos) {
      throw;
    }
    throw DivergenceError(detail::format_msg("training diverged at step ", state.step + 1, ": ",
                                             e.what()));
  }

  StepStats stats;
  stats.step = state.step + 1;
  stats.epoch = state.epoch;
  stats.l_seg = scalar(losses.seg);
  stats.l_reg = scalar(losses.reg);
  stats.l_ana = scalar(losses.ana);
  stats.l_mod = scalar(losses.mod);
  stats.l_rec = scalar(losses.rec);
  stats.total = scalar(losses.total);
  stats.t_value = scalar(state.model->temperature());
  const std::pair<const char*, double> components[] = {
      {"l_seg", stats.l_seg}, {"l_reg", stats.l_reg}, {"l_ana", stats.l_ana},
      {"l_mod", stats.l_mod}, {"l_rec", stats.l_rec}, {"total", stats.total}};
  for (const auto& [name, value] : components) {
    if (!std::isfinite(value)) {
      throw DivergenceError(detail::format_msg("training diverged at step ", stats.step, ": ",
                                               name, " is non-finite"));
    }
  }

  state.optimizer->zero_grad();
  losses.total.backward();
  if (cfg.grad_clip_norm > 0) {
    torch::nn::utils::clip_grad_norm_(state.model->parameters(), cfg.grad_clip_norm);
  }
  state.optimizer->step();
  state.step += 1;
  return stats;
}

TrainResult run_training(const std::vector<MultimodalVolume>& dataset, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const AugmentationConfig& acfg,
                         const std::string& out_dir, const std::string& resume_from,
                         torch::Device device) {
  mcfg.validate();
  tcfg.validate();
  acfg.validate();
  DCSEG_CHECK(!dataset.empty(), "training dataset must be non-empty");
  for (const auto& subject : dataset) {
    subject.validate(mcfg.class_count);
    DCSEG_CHECK(subject.modality_count() == mcfg.modality_count,
                "subject '", subject.subject_id, "' modality count does not match the model");
  }

  fs::create_directories(out_dir);
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();

  TrainState state;
  if (resume_from.empty()) {
    torch::manual_seed(static_cast<int64_t>(tcfg.seed));
    state.model = DCSegModel(mcfg);
    state.model->to(device);
    state.optimizer = std::make_shared<torch::optim::Adam>(
        state.model->parameters(), torch::optim::AdamOptions(tcfg.learning_rate));
  } else {
    auto data = load_checkpoint(resume_from);
    DCSEG_CHECK_CONFIG(data.model_config == mcfg,
                       "checkpoint model_config does not match the run's model config");
    state.model = model_from_checkpoint(data);
    state.step = data.step;
    state.epoch = data.epoch;
    state.model->to(device);
    state.optimizer = std::make_shared<torch::optim::Adam>(
        state.model->parameters(), torch::optim::AdamOptions(tcfg.learning_rate));
    restore_optimizer(*state.optimizer, state.model, data);
  }

  std::ofstream metrics;
  if (resume_from.empty() || !fs::exists(metrics_path)) {
    metrics.open(metrics_path, std::ios::trunc);
    DCSEG_CHECK_IO(metrics.good(), "cannot open metrics log '", metrics_path, "'");
    metrics << kMetricsHeader << '\n';
    metrics.flush();
  } else {
    metrics.open(metrics_path, std::ios::app);
    DCSEG_CHECK_IO(metrics.good(), "cannot open metrics log '", metrics_path, "'");
  }

  const auto n = static_cast<int64_t>(dataset.size());
  const int64_t steps_per_epoch =
      tcfg.steps_per_epoch > 0 ? tcfg.steps_per_epoch
                               : (n + tcfg.batch_size - 1) / tcfg.batch_size;

  auto save = [&](const std::string& name) {
    const auto path = (fs::path(out_dir) / name).string();
    save_checkpoint(path, snapshot(state.model, state.optimizer.get(), state.step, state.epoch));
    return path;
  };

  for (int64_t epoch = state.epoch; epoch < tcfg.epochs; ++epoch) {
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      // All randomness of a step derives from its global index, so a resumed
      // run replays exactly the stream an uninterrupted run would have seen.
      std::mt19937_64 rng(detail::mix_seed(tcfg.seed, 0x73746570ull + state.step));
      std::uniform_int_distribution<int64_t> pick(0, n - 1);
      std::vector<torch::Tensor> xs, ys;
      xs.reserve(tcfg.batch_size);
      ys.reserve(tcfg.batch_size);
      for (int64_t b = 0; b < tcfg.batch_size; ++b) {
        auto item_cfg = acfg;
        const int64_t idx = pick(rng);
        item_cfg.seed = rng();
        auto sample = augment(dataset[static_cast<std::size_t>(idx)], item_cfg);
        xs.push_back(sample.stack_volumes());
        ys.push_back(sample.label);
      }
      auto stats = train_step(state, torch::stack(xs).to(device), torch::stack(ys).to(device),
                              tcfg, rng);
      stats.epoch = epoch;
      append_metrics_row(metrics, stats);
    }
    state.epoch = epoch + 1;
    if (tcfg.checkpoint_interval_epochs > 0 &&
        state.epoch % tcfg.checkpoint_interval_epochs == 0) {
      save("ckpt_epoch_" + std::to_string(state.epoch) + ".dcseg");
    }
  }

  TrainResult result;
  result.final_checkpoint = save("ckpt_final.dcseg");
  result.metrics_path = metrics_path;
  result.state = std::move(state);
  return result;
}

}  // namespace dcseg
