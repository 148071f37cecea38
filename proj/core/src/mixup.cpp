#include "mixacm/mixup.hpp"

#include <algorithm>

#include "mixacm/error.hpp"

namespace mixacm {

MixedBatch mixup_with(const Tensor& batch_x, const Tensor& batch_y_one_hot,
                      double lambda, const std::vector<std::size_t>& partner) {
  const std::size_t n = batch_x.dim(0);
  if (batch_y_one_hot.rank() != 2 || batch_y_one_hot.dim(0) != n)
    throw DimensionError("mixup: labels must be [N,K] one-hot matching the batch");
  if (partner.size() != n) throw DimensionError("mixup: partner permutation size mismatch");

  MixedBatch out;
  out.lambda_used = lambda;
  out.inputs = Tensor(batch_x.shape());
  out.soft_labels = Tensor(batch_y_one_hot.shape());

  // written as b + lambda*(a-b) so lambda=1 and self-pairs mix away exactly
  auto combine = [lambda](const double* a, const double* b, double* o, std::size_t len) {
    if (lambda == 1.0) {
      std::copy(a, a + len, o);
      return;
    }
    for (std::size_t j = 0; j < len; ++j) o[j] = b[j] + lambda * (a[j] - b[j]);
  };

  const std::size_t row = batch_x.numel() / n;
  auto xi = batch_x.data();
  auto xo = out.inputs.data();
  for (std::size_t i = 0; i < n; ++i)
    combine(xi.data() + i * row, xi.data() + partner[i] * row, xo.data() + i * row, row);

  const std::size_t k = batch_y_one_hot.dim(1);
  auto yi = batch_y_one_hot.data();
  auto yo = out.soft_labels.data();
  for (std::size_t i = 0; i < n; ++i)
    combine(yi.data() + i * k, yi.data() + partner[i] * k, yo.data() + i * k, k);
  return out;
}

MixedBatch mixup(const Tensor& batch_x, const Tensor& batch_y_one_hot,
                 const MixupConfig& cfg, Rng& rng) {
  if (cfg.alpha_mixup <= 0.0) throw ConfigError("mixup: alpha_mixup must be positive");
  const std::size_t n = batch_x.dim(0);
  if (n < 2) throw ConfigError("mixup: batch must hold at least 2 samples");
  if (!cfg.enabled) {
    std::vector<std::size_t> identity(n);
    for (std::size_t i = 0; i < n; ++i) identity[i] = i;
    return mixup_with(batch_x, batch_y_one_hot, 1.0, identity);
  }
  const double lambda = rng.beta(cfg.alpha_mixup, cfg.alpha_mixup);
  return mixup_with(batch_x, batch_y_one_hot, lambda, rng.permutation(n));
}

}  // namespace mixacm
