#include "dcseg/losses.hpp"

#include <algorithm>
#include <unordered_set>

namespace dcseg {

namespace {

void check_finite(const torch::Tensor& t, const char* what) {
  DCSEG_CHECK(t.isfinite().all().item<bool>(), what, " must be finite");
}

// Stacks the batch into (n, ...) plus index tensors, after validation.
struct StackedBatch {
  torch::Tensor reps;     // (n, ...)
  torch::Tensor samples;  // (n,) int64
  torch::Tensor mods;     // (n,) int64
};

StackedBatch stack_batch(const PairBatch& batch) {
  batch.validate();
  const int64_t n = batch.size();
  std::vector<torch::Tensor> reps;
  reps.reserve(n);
  std::vector<int64_t> samples(n), mods(n);
  for (int64_t u = 0; u < n; ++u) {
    reps.push_back(batch.items[u].rep);
    samples[u] = batch.items[u].sample;
    mods[u] = batch.items[u].modality;
  }
  StackedBatch out;
  out.reps = torch::stack(reps);
  out.samples = torch::tensor(samples, torch::kInt64);
  out.mods = torch::tensor(mods, torch::kInt64);
  check_finite(out.reps, "representations");
  return out;
}

// Mean over ordered pairs of -log sigmoid(f * t * S), where f is +1 on
// same-index pairs (per `index`) and -1 otherwise. softplus(-x) is the
// numerically stable form of -log sigmoid(x).
torch::Tensor sigmoid_pair_loss(const torch::Tensor& sim, const torch::Tensor& index,
                                const ContrastiveConfig& cfg) {
  auto same = index.unsqueeze(1).eq(index.unsqueeze(0));
  auto f = torch::where(same, 1.0, -1.0).to(sim.dtype());
  auto t = cfg.temperature.to(sim.dtype());
  auto per_pair = torch::softplus(-f * t * sim);
  if (cfg.include_self_pairs) return per_pair.mean();
  const int64_t n = sim.size(0);
  DCSEG_CHECK(n > 1, "need at least two representations when self-pairs are excluded");
  auto off_diag = ~torch::eye(n, torch::kBool);
  return per_pair.masked_select(off_diag).mean();
}

// Canonicalizes segmentation inputs to (B, K, V) logits and (B, V) labels.
std::pair<torch::Tensor, torch::Tensor> flatten_seg(const torch::Tensor& logits,
                                                    const torch::Tensor& labels) {
  DCSEG_CHECK(labels.dim() == 3 || labels.dim() == 4,
              "labels must be (D, H, W) or (B, D, H, W)");
  DCSEG_CHECK(logits.dim() == labels.dim() + 1, "logits must have one class dim beyond labels");
  DCSEG_CHECK(labels.dtype() == torch::kInt64, "labels must be int64");
  auto lg = labels.dim() == 3 ? logits.unsqueeze(0) : logits;
  auto lb = labels.dim() == 3 ? labels.unsqueeze(0) : labels;
  for (int64_t d = 0; d < lb.dim(); ++d) {
    DCSEG_CHECK(lb.size(d) == (d == 0 ? lg.size(0) : lg.size(d + 1)),
                "label shape must match logits shape without the class dim");
  }
  const int64_t k = lg.size(1);
  DCSEG_CHECK(k >= 2, "need at least two classes");
  check_finite(lg, "logits");
  auto lb_flat = lb.reshape({lb.size(0), -1});
  DCSEG_CHECK(lb_flat.numel() == 0 || (lb_flat.min().item<int64_t>() >= 0 &&
                                       lb_flat.max().item<int64_t>() < k),
              "labels must lie in [0, class_count)");
  return {lg.reshape({lg.size(0), k, -1}), lb_flat};
}

}  // namespace

void PairBatch::validate() const {
  DCSEG_CHECK(!items.empty(), "pair batch must be non-empty");
  int64_t max_sample = -1;
  int64_t max_mod = -1;
  std::unordered_set<int64_t> seen;
  seen.reserve(items.size());
  for (const auto& e : items) {
    DCSEG_CHECK(e.sample >= 0 && e.modality >= 0, "sample and modality indices must be >= 0");
    DCSEG_CHECK(e.rep.defined() && e.rep.numel() > 0, "every representation must be non-empty");
    DCSEG_CHECK(e.rep.sizes() == items.front().rep.sizes(),
                "all representations must share one shape");
    const int64_t key = e.sample * (1LL << 32) + e.modality;
    DCSEG_CHECK(seen.insert(key).second, "duplicate (sample, modality) pair in batch");
    max_sample = std::max(max_sample, e.sample);
    max_mod = std::max(max_mod, e.modality);
  }
  DCSEG_CHECK(size() == (max_sample + 1) * (max_mod + 1),
              "batch must cover every (sample, modality) pair exactly once");
}

PairBatch PairBatch::from_stacked(const torch::Tensor& stacked) {
  DCSEG_CHECK(stacked.dim() >= 3, "stacked batch must be (N, M, ...)");
  PairBatch batch;
  for (int64_t i = 0; i < stacked.size(0); ++i) {
    for (int64_t j = 0; j < stacked.size(1); ++j) {
      batch.items.push_back({i, j, stacked.index({i, j})});
    }
  }
  return batch;
}

torch::Tensor ssim_channel_mean(const torch::Tensor& a, const torch::Tensor& b, double c1,
                                double c2) {
  DCSEG_CHECK(a.defined() && b.defined() && a.sizes() == b.sizes(),
              "SSIM inputs must share one shape");
  DCSEG_CHECK(a.dim() >= 2, "SSIM inputs must be (C, spatial...)");
  auto pair = torch::stack({a.flatten(1), b.flatten(1)});  // (2, C, V)
  auto matrix = pairwise_ssim(pair, c1, c2);
  return matrix.index({0, 1});
}

torch::Tensor pairwise_ssim(const torch::Tensor& stacked, double c1, double c2) {
  DCSEG_CHECK(stacked.defined() && stacked.dim() >= 3, "stacked maps must be (n, C, spatial...)");
  DCSEG_CHECK(c1 > 0 && c2 > 0, "SSIM constants must be positive");
  check_finite(stacked, "feature maps");
  auto x = stacked.flatten(2);  // (n, C, V)
  const auto v = static_cast<double>(x.size(2));
  auto mu = x.mean(2);  // (n, C)
  // Cross second moments E[x_u x_w] per channel, shape (n, n, C). The
  // diagonal of the derived covariance doubles as the per-map variance, so a
  // map compared against itself scores exactly 1.
  auto cross = torch::bmm(x.permute({1, 0, 2}), x.permute({1, 2, 0})).permute({1, 2, 0}) / v;
  auto mu_outer = mu.unsqueeze(1) * mu.unsqueeze(0);  // (n, n, C)
  auto cov = cross - mu_outer;
  auto var = cov.diagonal(0, 0, 1).transpose(0, 1);  // (n, C)
  auto mu_sq = mu * mu;
  auto num = (2.0 * mu_outer + c1) * (2.0 * cov + c2);
  auto den = (mu_sq.unsqueeze(1) + mu_sq.unsqueeze(0) + c1) *
             (var.unsqueeze(1) + var.unsqueeze(0) + c2);
  return (num / den).mean(-1);
}

torch::Tensor pairwise_cosine(const torch::Tensor& stacked) {
  DCSEG_CHECK(stacked.defined() && stacked.dim() == 2, "stacked vectors must be (n, C)");
  check_finite(stacked, "modality vectors");
  auto norms = stacked.norm(2, 1, /*keepdim=*/true);
  DCSEG_CHECK(norms.min().item<double>() > 0, "modality vectors must have nonzero norm");
  auto unit = stacked / norms;
  return unit.matmul(unit.transpose(0, 1));
}

torch::Tensor anatomical_contrastive_loss(const PairBatch& batch, const ContrastiveConfig& cfg) {
  cfg.validate();
  auto stacked = stack_batch(batch);
  DCSEG_CHECK(stacked.reps.dim() >= 3, "anatomical representations must be (C, spatial...)");
  auto sim = pairwise_ssim(stacked.reps, cfg.ssim_c1, cfg.ssim_c2);
  return sigmoid_pair_loss(sim, stacked.samples, cfg);
}

torch::Tensor modality_contrastive_loss(const PairBatch& batch, const ContrastiveConfig& cfg) {
  cfg.validate();
  auto stacked = stack_batch(batch);
  DCSEG_CHECK(stacked.reps.dim() == 2, "modality representations must be vectors");
  auto sim = pairwise_cosine(stacked.reps);
  return sigmoid_pair_loss(sim, stacked.mods, cfg);
}

torch::Tensor reconstruction_loss(const std::vector<torch::Tensor>& reconstructions,
                                  const std::vector<torch::Tensor>& targets) {
  DCSEG_CHECK(!reconstructions.empty(), "need at least one modality to reconstruct");
  DCSEG_CHECK(reconstructions.size() == targets.size(),
              "reconstruction and target counts must match");
  torch::Tensor sum;
  for (std::size_t j = 0; j < reconstructions.size(); ++j) {
    const auto& r = reconstructions[j];
    const auto& x = targets[j];
    DCSEG_CHECK(r.defined() && x.defined() && r.sizes() == x.sizes(),
                "reconstruction ", j, " must match its target shape");
    check_finite(r, "reconstruction");
    check_finite(x, "reconstruction target");
    auto term = (r - x).abs().mean();
    sum = sum.defined() ? sum + term : term;
  }
  return sum;
}

torch::Tensor weighted_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels,
                                     const torch::Tensor& weights) {
  auto [lg, lb] = flatten_seg(logits, labels);
  const int64_t k = lg.size(1);
  DCSEG_CHECK(weights.defined() && weights.dim() == 1 && weights.size(0) == k,
              "need one weight per class");
  DCSEG_CHECK(weights.min().item<double>() > 0, "class weights must be positive");
  auto w = weights.to(lg.dtype());
  auto log_p = torch::log_softmax(lg, 1);                          // (B, K, V)
  auto picked = log_p.gather(1, lb.unsqueeze(1)).squeeze(1);       // (B, V)
  auto per_voxel = -w.index_select(0, lb.flatten()).view_as(lb) * picked;
  return per_voxel.mean();
}

torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  constexpr double kEps = 1e-5;
  auto [lg, lb] = flatten_seg(logits, labels);
  const int64_t k = lg.size(1);
  auto p = torch::softmax(lg, 1);  // (B, K, V)
  auto g = torch::one_hot(lb, k).to(p.dtype()).transpose(1, 2);  // (B, K, V)
  auto inter = (p * g).sum(2);                                   // (B, K)
  auto denom = p.sum(2) + g.sum(2);
  auto dice = (2.0 * inter + kEps) / (denom + kEps);
  // Foreground classes only: background dominates volumes and would mask the
  // signal from small structures.
  return (1.0 - dice.slice(1, 1, k)).mean();
}

torch::Tensor inverse_frequency_weights(const torch::Tensor& labels, int64_t class_count,
                                        torch::Dtype dtype) {
  DCSEG_CHECK(class_count >= 2, "need at least two classes");
  DCSEG_CHECK(labels.defined() && labels.numel() > 0 && labels.dtype() == torch::kInt64,
              "labels must be a non-empty int64 tensor");
  DCSEG_CHECK(labels.min().item<int64_t>() >= 0 &&
                  labels.max().item<int64_t>() < class_count,
              "labels must lie in [0, class_count)");
  auto counts = torch::bincount(labels.flatten(), /*weights=*/{}, class_count).to(torch::kFloat64);
  const double total = static_cast<double>(labels.numel());
  auto raw = total / (static_cast<double>(class_count) * counts);  // inf where count == 0
  auto clipped = raw.clamp(1.0, 50.0);
  auto weights = clipped * (static_cast<double>(class_count) / clipped.sum());
  return weights.to(dtype);
}

torch::Tensor total_loss(const torch::Tensor& seg, const torch::Tensor& reg,
                         const torch::Tensor& disentangle, double alpha) {
  DCSEG_CHECK(alpha >= 0, "alpha must be >= 0");
  for (const auto* part : {&seg, &reg, &disentangle}) {
    DCSEG_CHECK(part->defined() && part->numel() == 1, "loss parts must be scalars");
    check_finite(*part, "loss part");
  }
  return seg + reg + alpha * disentangle;
}

}  // namespace dcseg
