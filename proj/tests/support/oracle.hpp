#pragma once

// Scalar reference implementations used to cross-check the tensor code paths.
// Everything here is plain double arithmetic over std::vector so that a bug in
// the production code cannot hide inside its own oracle. Keep this header free
// of torch includes.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace oracle {

/// log(1 + e^x) without overflow for large |x|.
inline double log1pexp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// -log sigmoid(f * t * s): the per-pair sigmoid contrastive term.
inline double pair_loss(int f, double t, double s) { return log1pexp(-f * t * s); }

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // population variance
};

inline Moments moments(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("moments of empty vector");
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size());
  return m;
}

inline double covariance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("covariance size mismatch");
  const Moments ma = moments(a), mb = moments(b);
  double c = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) c += (a[i] - ma.mean) * (b[i] - mb.mean);
  return c / static_cast<double>(a.size());
}

/// Global (single-window) SSIM of one channel.
inline double ssim_channel(const std::vector<double>& a, const std::vector<double>& b, double c1,
                           double c2) {
  const Moments ma = moments(a), mb = moments(b);
  const double cov = covariance(a, b);
  const double num = (2.0 * ma.mean * mb.mean + c1) * (2.0 * cov + c2);
  const double den = (ma.mean * ma.mean + mb.mean * mb.mean + c1) * (ma.var + mb.var + c2);
  return num / den;
}

/// Channel-mean SSIM of multi-channel maps given as per-channel voxel lists.
inline double ssim(const std::vector<std::vector<double>>& a,
                   const std::vector<std::vector<double>>& b, double c1, double c2) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("ssim channel mismatch");
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += ssim_channel(a[c], b[c], c1, c2);
  return s / static_cast<double>(a.size());
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("cosine size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine of zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Mean sigmoid contrastive loss over all ordered pairs of n items. `group`
/// assigns each item the index whose equality makes a pair positive; `sim`
/// is the full n x n similarity matrix.
inline double contrastive_mean(const std::vector<int64_t>& group,
                               const std::vector<std::vector<double>>& sim, double t,
                               bool include_self_pairs) {
  const std::size_t n = group.size();
  if (sim.size() != n) throw std::invalid_argument("similarity matrix size mismatch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!include_self_pairs && i == j) continue;
      const int f = group[i] == group[j] ? 1 : -1;
      total += pair_loss(f, t, sim[i][j]);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("no pairs to average");
  return total / static_cast<double>(count);
}

/// Per-class softmax probabilities for one voxel.
inline std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  std::vector<double> p(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) z += std::exp(logits[k] - mx);
  for (std::size_t k = 0; k < logits.size(); ++k) p[k] = std::exp(logits[k] - mx) / z;
  return p;
}

/// Weighted cross entropy: mean over voxels of w[y] * (-log p[y]).
/// `logits` is indexed [voxel][class].
inline double weighted_cross_entropy(const std::vector<std::vector<double>>& logits,
                                     const std::vector<int64_t>& labels,
                                     const std::vector<double>& weights) {
  if (logits.size() != labels.size() || logits.empty())
    throw std::invalid_argument("cross entropy size mismatch");
  double total = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    const auto& lv = logits[v];
    const int64_t y = labels[v];
    if (y < 0 || static_cast<std::size_t>(y) >= lv.size())
      throw std::invalid_argument("label out of range");
    double mx = lv[0];
    for (double x : lv) mx = std::max(mx, x);
    double z = 0.0;
    for (double x : lv) z += std::exp(x - mx);
    const double log_p = lv[static_cast<std::size_t>(y)] - mx - std::log(z);
    total += -weights[static_cast<std::size_t>(y)] * log_p;
  }
  return total / static_cast<double>(logits.size());
}

/// Soft Dice loss with the same conventions as the production code: softmax
/// probabilities, per-class dice with epsilon 1e-5, averaged over foreground
/// classes only. `logits` is indexed [voxel][class]; a batched call is the
/// concatenation of per-item calls averaged by the caller.
inline double soft_dice_loss(const std::vector<std::vector<double>>& logits,
                             const std::vector<int64_t>& labels) {
  constexpr double kEps = 1e-5;
  if (logits.size() != labels.size() || logits.empty())
    throw std::invalid_argument("dice size mismatch");
  const std::size_t k = logits[0].size();
  std::vector<double> inter(k, 0.0), psum(k, 0.0), gsum(k, 0.0);
  for (std::size_t v = 0; v < logits.size(); ++v) {
    const auto p = softmax(logits[v]);
    for (std::size_t c = 0; c < k; ++c) {
      psum[c] += p[c];
      if (static_cast<std::size_t>(labels[v]) == c) {
        inter[c] += p[c];
        gsum[c] += 1.0;
      }
    }
  }
  double loss = 0.0;
  for (std::size_t c = 1; c < k; ++c)
    loss += 1.0 - (2.0 * inter[c] + kEps) / (psum[c] + gsum[c] + kEps);
  return loss / static_cast<double>(k - 1);
}

/// Inverse class-frequency weights: total / (K * count), clipped to [1, 50]
/// (absent classes hit the ceiling), renormalized to mean 1.
inline std::vector<double> inverse_frequency_weights(const std::vector<int64_t>& labels,
                                                     int64_t class_count) {
  std::vector<double> counts(static_cast<std::size_t>(class_count), 0.0);
  for (int64_t y : labels) {
    if (y < 0 || y >= class_count) throw std::invalid_argument("label out of range");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  const double total = static_cast<double>(labels.size());
  std::vector<double> w(counts.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double raw =
        counts[c] > 0.0 ? total / (static_cast<double>(class_count) * counts[c]) : 50.0;
    w[c] = std::min(std::max(raw, 1.0), 50.0);
    sum += w[c];
  }
  for (double& x : w) x *= static_cast<double>(class_count) / sum;
  return w;
}

/// Plain binary Dice coefficient over voxel sets; both empty counts as 1.
inline double binary_dice(const std::vector<bool>& pred, const std::vector<bool>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("dice size mismatch");
  double inter = 0.0, np = 0.0, ng = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    np += pred[i] ? 1.0 : 0.0;
    ng += truth[i] ? 1.0 : 0.0;
    inter += (pred[i] && truth[i]) ? 1.0 : 0.0;
  }
  if (np + ng == 0.0) return 1.0;
  return 2.0 * inter / (np + ng);
}

/// Probability of one availability pattern under M independent Bernoulli(p)
/// draws conditioned on at least one success. `bits` uses bit j for slot j.
inline double conditioned_mask_pmf(int modality_count, double p, unsigned bits) {
  if (bits == 0) return 0.0;
  double prob = 1.0;
  for (int j = 0; j < modality_count; ++j)
    prob *= ((bits >> j) & 1u) != 0 ? p : (1.0 - p);
  const double none = std::pow(1.0 - p, modality_count);
  return prob / (1.0 - none);
}

}  // namespace oracle
