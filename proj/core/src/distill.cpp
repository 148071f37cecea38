#include "mixacm/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mixacm/error.hpp"
#include "mixacm/ops.hpp"
#include "mixacm/rng.hpp"

namespace mixacm {

AcmTransform acm_transform_from_string(const std::string& s) {
  if (s == "adaptive_max_pool") return AcmTransform::AdaptiveMaxPool;
  if (s == "adaptive_avg_pool") return AcmTransform::AdaptiveAvgPool;
  if (s == "affine") return AcmTransform::Affine;
  if (s == "none") return AcmTransform::None;
  throw ConfigError("unknown ACM transform: " + s);
}

std::string to_string(AcmTransform t) {
  switch (t) {
    case AcmTransform::AdaptiveMaxPool: return "adaptive_max_pool";
    case AcmTransform::AdaptiveAvgPool: return "adaptive_avg_pool";
    case AcmTransform::Affine: return "affine";
    case AcmTransform::None: return "none";
  }
  return "?";
}

TransformSide transform_side_from_string(const std::string& s) {
  if (s == "teacher") return TransformSide::Teacher;
  if (s == "student") return TransformSide::Student;
  throw ConfigError("unknown transform side: " + s);
}

std::string to_string(TransformSide s) {
  return s == TransformSide::Teacher ? "teacher" : "student";
}

void DistillConfig::validate() const {
  if (gamma <= 0.0) throw ConfigError("distill: gamma must be positive");
  if (alpha_kld < 0.0 || alpha_kld > 1.0)
    throw ConfigError("distill: alpha_kld must lie in [0,1]");
  if (alpha_acm < 0.0) throw ConfigError("distill: alpha_acm must be nonnegative");
}

Tensor channel_map(const Tensor& tap) {
  if (tap.rank() != 4)
    throw DimensionError("channel_map: expected a 4-d tap, got " + shape_str(tap.shape()));
  return spatial_max(tap);
}

Tensor& AffineAdapters::weight_for(int tap_index, std::size_t c_in, std::size_t c_out) {
  for (auto& e : entries)
    if (e.tap_index == tap_index) {
      if (e.weight.dim(0) != c_in || e.weight.dim(1) != c_out)
        throw DimensionError("affine adapter: channel counts changed between calls");
      return e.weight;
    }
  Rng rng(Rng::derive_seed(seed, 0xAFF0 + (std::uint64_t)tap_index));
  Entry e;
  e.tap_index = tap_index;
  const double stddev = std::sqrt(2.0 / (double)c_in);
  e.weight = Tensor(Shape{c_in, c_out}, 0.0, true);
  for (double& v : e.weight.data()) v = rng.normal(0.0, stddev);
  e.bias = Tensor(Shape{c_out}, 0.0, true);
  entries.push_back(std::move(e));
  return entries.back().weight;
}

Tensor AffineAdapters::bias_for(int tap_index) const {
  for (const auto& e : entries)
    if (e.tap_index == tap_index) return e.bias;
  throw ContractError("affine adapter: bias requested before weight");
}

std::vector<Tensor> AffineAdapters::parameter_tensors() const {
  std::vector<Tensor> out;
  for (const auto& e : entries) {
    out.push_back(e.weight);
    out.push_back(e.bias);
  }
  return out;
}

namespace {

Tensor apply_transform(const Tensor& map, std::size_t target_channels,
                       const DistillConfig& cfg, AffineAdapters* adapters, int tap_index) {
  const std::size_t c = map.dim(1);
  if (c == target_channels && cfg.transform != AcmTransform::Affine) return map;
  switch (cfg.transform) {
    case AcmTransform::None:
      throw DimensionError("acm_loss_block: channel mismatch (" + std::to_string(c) + " vs " +
                           std::to_string(target_channels) + ") with transform=none");
    case AcmTransform::AdaptiveMaxPool:
      return adaptive_max_pool_1d(map, target_channels);
    case AcmTransform::AdaptiveAvgPool: {
      // average over the same bins the max pool uses
      const std::size_t n = map.dim(0);
      Tensor y(Shape{n, target_channels});
      auto xd = map.data();
      auto yd = y.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < target_channels; ++o) {
          const std::size_t lo = o * c / target_channels;
          const std::size_t hi = ((o + 1) * c + target_channels - 1) / target_channels;
          double s = 0.0;
          for (std::size_t j = lo; j < hi; ++j) s += xd[i * c + j];
          yd[i * target_channels + o] = s / (double)(hi - lo);
        }
      if (Tape::active() && map.requires_grad()) {
        y.set_requires_grad(true);
        Tensor xc = map, yc = y;
        Tape::active()->record(y.id(), [xc, yc, c, target_channels]() mutable {
          auto g = yc.grad();
          auto gx = xc.grad();
          const std::size_t n2 = yc.dim(0);
          for (std::size_t i = 0; i < n2; ++i)
            for (std::size_t o = 0; o < target_channels; ++o) {
              const std::size_t lo = o * c / target_channels;
              const std::size_t hi = ((o + 1) * c + target_channels - 1) / target_channels;
              const double gi = g[i * target_channels + o] / (double)(hi - lo);
              for (std::size_t j = lo; j < hi; ++j) gx[i * c + j] += gi;
            }
        });
      }
      return y;
    }
    case AcmTransform::Affine: {
      if (!adapters)
        throw ContractError("acm_loss_block: affine transform requires adapters");
      Tensor& w = adapters->weight_for(tap_index, c, target_channels);
      return add_row_bias(matmul(map, w), adapters->bias_for(tap_index));
    }
  }
  throw ContractError("acm_loss_block: unreachable transform");
}

}  // namespace

Tensor acm_loss_block(const Tensor& teacher_map, const Tensor& student_map,
                      const DistillConfig& cfg, AffineAdapters* adapters, int tap_index) {
  if (teacher_map.rank() != 2 || student_map.rank() != 2)
    throw DimensionError("acm_loss_block: maps must be [N,C]");
  if (teacher_map.dim(0) != student_map.dim(0))
    throw DimensionError("acm_loss_block: batch sizes differ");

  Tensor t = teacher_map.detached();
  Tensor s = student_map;
  if (cfg.transform_side == TransformSide::Teacher)
    t = apply_transform(t, s.dim(1), cfg, adapters, tap_index);
  else
    s = apply_transform(s, t.dim(1), cfg, adapters, tap_index);
  if (t.dim(1) != s.dim(1))
    throw DimensionError("acm_loss_block: channel mismatch after transform");

  Tensor tn = row_l2_normalize(t);
  Tensor sn = row_l2_normalize(s);
  Tensor d = sub(tn, sn);
  const double inv_batch = 1.0 / (double)teacher_map.dim(0);
  return scalar_mul(sum(mul(d, d)), inv_batch);
}

Tensor acm_loss_total(const std::vector<Tensor>& teacher_taps,
                      const std::vector<Tensor>& student_taps, const DistillConfig& cfg,
                      AffineAdapters* adapters) {
  const std::size_t shared = std::min(teacher_taps.size(), student_taps.size());
  if (shared == 0) throw DimensionError("acm_loss_total: no taps");
  std::vector<int> taps;
  if (cfg.tap_subset.empty()) {
    for (std::size_t i = 1; i <= shared; ++i) taps.push_back((int)i);
  } else {
    for (int i : cfg.tap_subset) {
      if (i < 1 || (std::size_t)i > shared)
        throw ConfigError("acm_loss_total: tap index " + std::to_string(i) +
                          " outside shared range 1.." + std::to_string(shared));
      taps.push_back(i);
    }
  }
  if (taps.empty()) throw ConfigError("acm_loss_total: empty tap subset");

  Tensor total = Tensor::scalar(0.0);
  for (int i : taps) {
    Tensor t_map = channel_map(teacher_taps[(std::size_t)i - 1]);
    Tensor s_map = channel_map(student_taps[(std::size_t)i - 1]);
    total = add(total, acm_loss_block(t_map, s_map, cfg, adapters, i));
  }
  return total;
}

Tensor kld_loss(const Tensor& teacher_logits, const Tensor& student_logits, double gamma) {
  if (gamma <= 0.0) throw ConfigError("kld_loss: gamma must be positive");
  if (teacher_logits.shape() != student_logits.shape())
    throw DimensionError("kld_loss: logit shapes differ");
  const std::size_t n = teacher_logits.dim(0), k = teacher_logits.dim(1);

  // teacher side is constant: p = softmax(t/gamma), H(p) term computed outside
  // the tape
  Tensor t = teacher_logits.detached();
  Tensor p;
  double p_logp = 0.0;
  {
    NoGradScope ng;
    p = softmax(scalar_mul(t, 1.0 / gamma));
    auto pd = p.data();
    for (std::size_t i = 0; i < pd.size(); ++i)
      if (pd[i] > 0.0) p_logp += pd[i] * std::log(pd[i]);
  }
  Tensor ls = log_softmax(scalar_mul(student_logits, 1.0 / gamma));
  Tensor cross = sum(mul(p, ls));  // sum_n sum_k p * log q
  const double scale = gamma * gamma / (double)n;
  // gamma^2 * mean_n KL = gamma^2/n * (sum p log p - sum p log q)
  return add(Tensor::scalar(scale * p_logp), scalar_mul(cross, -scale));
}

Tensor soft_cross_entropy(const Tensor& logits, const Tensor& soft_labels) {
  if (logits.shape() != soft_labels.shape())
    throw DimensionError("soft_cross_entropy: shapes differ");
  const double inv_batch = 1.0 / (double)logits.dim(0);
  Tensor lp = log_softmax(logits);
  return scalar_mul(sum(mul(soft_labels.detached(), lp)), -inv_batch);
}

Tensor mixacm_objective(const BlockCnn& student, const BlockCnn& teacher,
                        const MixedBatch& mixed, const DistillConfig& cfg,
                        AffineAdapters* adapters) {
  cfg.validate();
  if (!teacher.frozen())
    throw ContractError("mixacm_objective: teacher must be frozen");

  ForwardResult s = student.forward(mixed.inputs);
  ForwardResult t;
  {
    NoGradScope ng;
    t = teacher.forward(mixed.inputs);
  }

  Tensor ce = soft_cross_entropy(s.logits, mixed.soft_labels);
  Tensor loss;
  if (cfg.cross_dataset) {
    loss = ce;  // the KLD term is omitted when transferring across datasets
  } else {
    loss = scalar_mul(ce, 1.0 - cfg.alpha_kld);
    if (cfg.alpha_kld > 0.0)
      loss = add(loss, scalar_mul(kld_loss(t.logits, s.logits, cfg.gamma), cfg.alpha_kld));
  }
  if (cfg.alpha_acm > 0.0)
    loss = add(loss, scalar_mul(acm_loss_total(t.taps, s.taps, cfg, adapters), cfg.alpha_acm));
  return loss;
}

std::vector<AcmDumpRow> acm_profile(const BlockCnn& model, const Tensor& images,
                                    std::size_t batch_size) {
  NoGradScope ng;
  const std::size_t n = images.dim(0);
  if (n == 0) throw ConfigError("acm_profile: empty dataset");
  const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);

  std::vector<std::vector<double>> sums;  // per tap, per channel
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    Tensor batch(Shape{count, c, h, w});
    std::copy_n(images.data().data() + start * c * h * w, count * c * h * w,
                batch.data().data());
    ForwardResult r = model.forward(batch);
    if (sums.empty()) sums.resize(r.taps.size());
    for (std::size_t ti = 0; ti < r.taps.size(); ++ti) {
      Tensor m = row_l2_normalize(channel_map(r.taps[ti]));
      const std::size_t ch = m.dim(1);
      if (sums[ti].empty()) sums[ti].assign(ch, 0.0);
      auto md = m.data();
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < ch; ++j) sums[ti][j] += md[i * ch + j];
    }
  }

  std::vector<AcmDumpRow> rows;
  for (std::size_t ti = 0; ti < sums.size(); ++ti) {
    std::vector<double> mean = sums[ti];
    for (double& v : mean) v /= (double)n;
    std::sort(mean.begin(), mean.end());
    for (std::size_t j = 0; j < mean.size(); ++j)
      rows.push_back({(int)(ti + 1), (int)(j + 1), mean[j]});
  }
  return rows;
}

void write_acm_csv(const std::string& path, const std::vector<AcmDumpRow>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("write_acm_csv: cannot open " + path);
  f << "tap_index,channel_rank,mean_value\n";
  f.precision(17);
  for (const auto& r : rows)
    f << r.tap_index << "," << r.channel_rank << "," << r.mean_value << "\n";
}

}  // namespace mixacm
