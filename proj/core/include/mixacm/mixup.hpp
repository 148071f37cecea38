#pragma once

#include <vector>

#include "mixacm/rng.hpp"
#include "mixacm/tensor.hpp"

namespace mixacm {

struct MixupConfig {
  double alpha_mixup = 1.0;  // Beta(alpha, alpha); 1.0 for small images, 0.2 for large
  bool enabled = true;
};

struct MixedBatch {
  Tensor inputs;       // [N,...]
  Tensor soft_labels;  // [N,K], rows sum to 1
  double lambda_used = 1.0;
};

/// Convex combination of the batch with a shuffled partner batch: one lambda
/// ~ Beta(alpha, alpha) per batch, partner index by uniform permutation.
MixedBatch mixup(const Tensor& batch_x, const Tensor& batch_y_one_hot,
                 const MixupConfig& cfg, Rng& rng);

/// Deterministic core used by mixup(); exposed for tests that pin lambda and
/// the permutation.
MixedBatch mixup_with(const Tensor& batch_x, const Tensor& batch_y_one_hot,
                      double lambda, const std::vector<std::size_t>& partner);

}  // namespace mixacm
