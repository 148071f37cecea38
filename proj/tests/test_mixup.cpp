#include <doctest.h>

#include <cmath>

#include "mixacm/data.hpp"
#include "mixacm/error.hpp"
#include "mixacm/mixup.hpp"
#include "support/oracles.hpp"

using namespace mixacm;
using namespace mixacm::testing;

TEST_CASE("lambda = 1 returns the batch unchanged") {
  Rng rng(1);
  Tensor x = random_tensor(Shape{4, 1, 3, 3}, rng, 0, 1);
  Tensor y = one_hot({0, 1, 2, 3}, 4);
  MixedBatch m = mixup_with(x, y, 1.0, {3, 2, 1, 0});
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(m.inputs.data()[i] == x.data()[i]);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(m.soft_labels.data()[i] == y.data()[i]);
}

TEST_CASE("identity permutation returns the batch for any lambda") {
  Rng rng(2);
  Tensor x = random_tensor(Shape{3, 2}, rng, 0, 1);
  Tensor y = one_hot({0, 1, 0}, 2);
  for (double lam : {0.0, 0.3, 0.77}) {
    MixedBatch m = mixup_with(x, y, lam, {0, 1, 2});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(m.inputs.data()[i] == x.data()[i]);
  }
}

TEST_CASE("lambda = 0.5 splits one-hot labels evenly") {
  Tensor x(Shape{2, 1, 1, 1}, std::vector<double>{0.0, 1.0});
  Tensor y = one_hot({0, 2}, 4);  // e_1 and e_3
  MixedBatch m = mixup_with(x, y, 0.5, {1, 0});
  const std::vector<double> want = {0.5, 0, 0.5, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(m.soft_labels.data()[i] == want[i]);
    CHECK(m.soft_labels.data()[4 + i] == want[i]);
  }
  CHECK(m.inputs.data()[0] == 0.5);
}

TEST_CASE("elementwise bounds and label row sums") {
  Rng rng(3);
  Tensor x = random_tensor(Shape{8, 1, 4, 4}, rng, 0, 1);
  Tensor y = one_hot({0, 1, 2, 3, 0, 1, 2, 3}, 4);
  MixupConfig cfg;
  for (int rep = 0; rep < 20; ++rep) {
    MixedBatch m = mixup(x, y, cfg, rng);
    auto md = m.inputs.data();
    auto xd = x.data();
    const std::size_t row = x.numel() / 8;
    // recover the partner through the lambda actually used is fiddly; check
    // the convex-hull bound against the global min/max per coordinate pair
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < row; ++j) {
        double lo = 1e9, hi = -1e9;
        for (std::size_t p = 0; p < 8; ++p) {
          lo = std::min(lo, xd[p * row + j]);
          hi = std::max(hi, xd[p * row + j]);
        }
        CHECK(md[i * row + j] >= lo - 1e-12);
        CHECK(md[i * row + j] <= hi + 1e-12);
      }
    auto sl = m.soft_labels.data();
    for (std::size_t i = 0; i < 8; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += sl[i * 4 + k];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("Beta(1,1) lambda is uniform: Monte Carlo mean 0.5 +- 0.01") {
  Rng rng(123);
  double sum = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) sum += rng.beta(1.0, 1.0);
  CHECK(std::abs(sum / draws - 0.5) < 0.01);
}

TEST_CASE("config errors") {
  Rng rng(4);
  Tensor x1 = random_tensor(Shape{1, 1, 2, 2}, rng, 0, 1);
  Tensor y1 = one_hot({0}, 2);
  MixupConfig cfg;
  CHECK_THROWS_AS(mixup(x1, y1, cfg, rng), ConfigError);  // N < 2

  Tensor x2 = random_tensor(Shape{2, 1, 2, 2}, rng, 0, 1);
  Tensor y2 = one_hot({0, 1}, 2);
  MixupConfig bad;
  bad.alpha_mixup = 0.0;
  CHECK_THROWS_AS(mixup(x2, y2, bad, rng), ConfigError);
}
