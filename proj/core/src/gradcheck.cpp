#include "dcseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dcseg/losses.hpp"

namespace dcseg {

namespace {

// Relative error with a floor so near-zero gradient pairs compare absolutely.
double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

PairBatch batch_from_leaves(const std::vector<torch::Tensor>& leaves, int64_t n, int64_t m) {
  PairBatch batch;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      batch.items.push_back({i, j, leaves[static_cast<std::size_t>(i * m + j)]});
    }
  }
  return batch;
}

ContrastiveConfig config_with(const torch::Tensor& temperature, double c1_offset) {
  ContrastiveConfig cfg;
  cfg.temperature = temperature;
  cfg.ssim_c1 += c1_offset;
  return cfg;
}

}  // namespace

double fd_max_rel_error(const FdCheck& check, double step) {
  // Analytic pass on requires-grad clones of the leaves.
  std::vector<torch::Tensor> grad_leaves;
  grad_leaves.reserve(check.leaves.size());
  for (const auto& leaf : check.leaves) {
    grad_leaves.push_back(leaf.detach().clone().requires_grad_(true));
  }
  auto loss = check.f_analytic(grad_leaves);
  loss.backward();

  // Finite-difference pass mutates detached copies coordinate by coordinate.
  std::vector<torch::Tensor> fd_leaves;
  fd_leaves.reserve(check.leaves.size());
  for (const auto& leaf : check.leaves) fd_leaves.push_back(leaf.detach().clone());

  double worst = 0.0;
  torch::NoGradGuard no_grad;
  for (std::size_t li = 0; li < fd_leaves.size(); ++li) {
    auto grad = grad_leaves[li].grad();
    auto grad_flat = grad.defined() ? grad.flatten() : torch::zeros_like(fd_leaves[li]).flatten();
    auto flat = fd_leaves[li].flatten();  // view into the leaf used by f_fd
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double x0 = flat[i].item<double>();
      flat[i] = x0 + step;
      const double up = check.f_fd(fd_leaves).item<double>();
      flat[i] = x0 - step;
      const double down = check.f_fd(fd_leaves).item<double>();
      flat[i] = x0;
      const double fd = (up - down) / (2.0 * step);
      worst = std::max(worst, rel_error(grad_flat[i].item<double>(), fd));
    }
  }
  return worst;
}

std::vector<GradCheckRow> run_gradient_suite(const GradCheckOptions& opts) {
  torch::manual_seed(static_cast<int64_t>(opts.seed));
  const auto dopts = torch::TensorOptions(torch::kFloat64);
  const double fd_offset = opts.ssim_c1_fd_offset;

  std::vector<FdCheck> checks;

  // Channel-wise SSIM on a pair of small maps.
  {
    FdCheck c;
    c.name = "ssim";
    c.leaves = {0.5 * torch::randn({2, 3, 3, 3}, dopts), 0.5 * torch::randn({2, 3, 3, 3}, dopts)};
    c.f_analytic = [](const std::vector<torch::Tensor>& v) {
      return ssim_channel_mean(v[0], v[1], 1e-4, 9e-4);
    };
    c.f_fd = [fd_offset](const std::vector<torch::Tensor>& v) {
      return ssim_channel_mean(v[0], v[1], 1e-4 + fd_offset, 9e-4);
    };
    checks.push_back(std::move(c));
  }

  // Anatomical contrastive loss, N=2 subjects x M=2 modalities, including the
  // temperature as a differentiated leaf.
  {
    FdCheck c;
    c.name = "ana_contrastive";
    for (int i = 0; i < 4; ++i) c.leaves.push_back(0.5 * torch::randn({2, 3, 3, 3}, dopts));
    c.leaves.push_back(torch::tensor(10.0, dopts));
    c.f_analytic = [](const std::vector<torch::Tensor>& v) {
      return anatomical_contrastive_loss(batch_from_leaves(v, 2, 2), config_with(v[4], 0.0));
    };
    c.f_fd = [fd_offset](const std::vector<torch::Tensor>& v) {
      return anatomical_contrastive_loss(batch_from_leaves(v, 2, 2),
                                         config_with(v[4], fd_offset));
    };
    checks.push_back(std::move(c));
  }

  // Modality contrastive loss over four vectors plus the temperature.
  {
    FdCheck c;
    c.name = "mod_contrastive";
    for (int i = 0; i < 4; ++i) c.leaves.push_back(0.5 * torch::randn({8}, dopts));
    c.leaves.push_back(torch::tensor(10.0, dopts));
    c.f_analytic = [](const std::vector<torch::Tensor>& v) {
      return modality_contrastive_loss(batch_from_leaves(v, 2, 2), config_with(v[4], 0.0));
    };
    c.f_fd = c.f_analytic;
    checks.push_back(std::move(c));
  }

  // L1 reconstruction of two modalities against fixed targets.
  {
    FdCheck c;
    c.name = "reconstruction";
    c.leaves = {torch::randn({1, 4, 4, 4}, dopts), torch::randn({1, 4, 4, 4}, dopts)};
    // Offset targets so no coordinate sits on the |.| kink.
    std::vector<torch::Tensor> targets = {c.leaves[0] + 0.3 + torch::rand({1, 4, 4, 4}, dopts),
                                          c.leaves[1] - 0.3 - torch::rand({1, 4, 4, 4}, dopts)};
    c.f_analytic = [targets](const std::vector<torch::Tensor>& v) {
      return reconstruction_loss({v[0], v[1]}, targets);
    };
    c.f_fd = c.f_analytic;
    checks.push_back(std::move(c));
  }

  // Weighted cross entropy and soft Dice on one small labeled volume.
  auto labels = torch::randint(0, 3, {4, 4, 4}, torch::kInt64);
  auto weights = inverse_frequency_weights(labels, 3, torch::kFloat64);
  {
    FdCheck c;
    c.name = "weighted_cross_entropy";
    c.leaves = {torch::randn({3, 4, 4, 4}, dopts)};
    c.f_analytic = [labels, weights](const std::vector<torch::Tensor>& v) {
      return weighted_cross_entropy(v[0], labels, weights);
    };
    c.f_fd = c.f_analytic;
    checks.push_back(std::move(c));
  }
  {
    FdCheck c;
    c.name = "soft_dice";
    c.leaves = {torch::randn({3, 4, 4, 4}, dopts)};
    c.f_analytic = [labels](const std::vector<torch::Tensor>& v) {
      return soft_dice_loss(v[0], labels);
    };
    c.f_fd = c.f_analytic;
    checks.push_back(std::move(c));
  }

  std::vector<GradCheckRow> rows;
  rows.reserve(checks.size());
  for (const auto& check : checks) {
    GradCheckRow row;
    row.name = check.name;
    row.max_rel_error = fd_max_rel_error(check, opts.step);
    row.passed = row.max_rel_error < opts.tolerance;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dcseg
