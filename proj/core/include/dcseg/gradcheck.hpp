#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dcseg {

/// Settings for the finite-difference gradient suite. `ssim_c1_fd_offset`
/// exists for negative-control tests: it skews the SSIM stabilizer constant
/// used on the finite-difference side only, so the SSIM-based rows must fail
/// when it is nonzero.
struct GradCheckOptions {
  double step = 1e-5;       // central-difference step
  double tolerance = 1e-4;  // max relative error accepted as a pass
  uint64_t seed = 7;
  double ssim_c1_fd_offset = 0.0;
};

struct GradCheckRow {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// One generic check: `f_analytic` is differentiated with autograd at
/// `leaves`; `f_fd` is probed with central differences coordinate by
/// coordinate. The two functions are the same object except in
/// negative-control setups.
struct FdCheck {
  std::string name;
  std::function<torch::Tensor(const std::vector<torch::Tensor>&)> f_analytic;
  std::function<torch::Tensor(const std::vector<torch::Tensor>&)> f_fd;
  std::vector<torch::Tensor> leaves;  // double precision
};

/// Largest relative disagreement between analytic and finite-difference
/// gradients over every coordinate of every leaf.
double fd_max_rel_error(const FdCheck& check, double step);

/// Runs the six-row loss suite (SSIM, both contrastive losses,
/// reconstruction, weighted cross entropy, soft Dice) on seeded random
/// double-precision inputs at small sizes.
std::vector<GradCheckRow> run_gradient_suite(const GradCheckOptions& opts);

}  // namespace dcseg
