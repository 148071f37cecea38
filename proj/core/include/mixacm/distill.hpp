#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mixacm/mixup.hpp"
#include "mixacm/model.hpp"
#include "mixacm/tensor.hpp"

namespace mixacm {

enum class AcmTransform { AdaptiveMaxPool, AdaptiveAvgPool, Affine, None };
enum class TransformSide { Teacher, Student };

AcmTransform acm_transform_from_string(const std::string& s);
std::string to_string(AcmTransform t);
TransformSide transform_side_from_string(const std::string& s);
std::string to_string(TransformSide s);

struct DistillConfig {
  double alpha_acm = 5000.0;
  double alpha_kld = 0.95;
  double gamma = 10.0;
  AcmTransform transform = AcmTransform::AdaptiveMaxPool;
  TransformSide transform_side = TransformSide::Teacher;
  std::set<int> tap_subset;      // 1-based tap indices; empty set = all shared taps
  bool cross_dataset = false;    // drops the KLD term entirely
  MixupConfig mixup;

  void validate() const;
};

/// Per-sample, per-channel activation magnitude of one tap: [N,C,H,W] -> [N,C]
/// via the spatial max. Differentiable (gradient to the first argmax).
Tensor channel_map(const Tensor& tap);

/// Trainable per-tap affine adapters used when transform == Affine. Created
/// lazily on first use for each (tap, C_in -> C_out) pair; their parameters
/// belong to the distillation run's optimizer.
struct AffineAdapters {
  struct Entry {
    int tap_index;  // 1-based
    Tensor weight;  // [C_in, C_out]
    Tensor bias;    // [C_out]
  };
  std::vector<Entry> entries;
  std::uint64_t seed = 0;

  Tensor& weight_for(int tap_index, std::size_t c_in, std::size_t c_out);
  Tensor bias_for(int tap_index) const;
  std::vector<Tensor> parameter_tensors() const;
};

/// Mean over the batch of ||t_hat - s_hat||^2 between row-normalized maps,
/// after resolving any channel-count mismatch via the configured transform.
/// The teacher map is detached; gradient reaches the student side only.
Tensor acm_loss_block(const Tensor& teacher_map, const Tensor& student_map,
                      const DistillConfig& cfg, AffineAdapters* adapters = nullptr,
                      int tap_index = 1);

/// Sum of acm_loss_block over the configured tap subset; taps pair by index
/// from the input side, unmatched deeper teacher taps are dropped.
Tensor acm_loss_total(const std::vector<Tensor>& teacher_taps,
                      const std::vector<Tensor>& student_taps, const DistillConfig& cfg,
                      AffineAdapters* adapters = nullptr);

/// gamma^2 * mean-over-batch KL(softmax(t/gamma) || softmax(s/gamma));
/// teacher logits are detached.
Tensor kld_loss(const Tensor& teacher_logits, const Tensor& student_logits, double gamma);

/// Cross entropy of logits against soft labels, mean over the batch.
Tensor soft_cross_entropy(const Tensor& logits, const Tensor& soft_labels);

/// The combined objective on one mixed batch:
///   (1 - alpha_kld) * L_mix + alpha_kld * L_kld + alpha_acm * L_acm,
/// with the KLD term omitted (and the L_mix weight forced to 1) in
/// cross-dataset mode. The teacher must be frozen; both models are forwarded
/// on the same mixed inputs.
Tensor mixacm_objective(const BlockCnn& student, const BlockCnn& teacher,
                        const MixedBatch& mixed, const DistillConfig& cfg,
                        AffineAdapters* adapters = nullptr);

/// Per-tap mean of row-normalized maps over a dataset (channels sorted
/// ascending), written as CSV rows (tap_index, channel_rank, mean_value).
struct AcmDumpRow {
  int tap_index;
  int channel_rank;
  double mean_value;
};
std::vector<AcmDumpRow> acm_profile(const BlockCnn& model, const Tensor& images,
                                    std::size_t batch_size = 256);
void write_acm_csv(const std::string& path, const std::vector<AcmDumpRow>& rows);

}  // namespace mixacm
