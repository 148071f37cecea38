#pragma once

#include <string>
#include <vector>

#include "mixacm/model.hpp"
#include "mixacm/rng.hpp"
#include "mixacm/tensor.hpp"

namespace mixacm {

struct AttackConfig {
  double epsilon = 8.0 / 255.0;   // l_inf radius in input units
  double step_size = 2.0 / 255.0;
  int iterations = 7;
  bool random_start = true;
  double range_lo = 0.0;
  double range_hi = 1.0;

  void validate() const;
};

/// Mean cross entropy of logits against integer labels.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

/// Single-step sign-gradient attack:
/// x_adv = clamp(x + eps * sign(grad_x CE), range). Never mutates the model.
Tensor fgsm(const BlockCnn& model, const Tensor& x, const std::vector<int>& labels,
            const AttackConfig& cfg);

/// k-step projected sign-gradient ascent within the l_inf ball; optional
/// uniform random start; the final iterate is clamped into the input range.
Tensor pgd(const BlockCnn& model, const Tensor& x, const std::vector<int>& labels,
           const AttackConfig& cfg, Rng& rng);

enum class AttackKind { None, Fgsm, Pgd };
AttackKind attack_kind_from_string(const std::string& s);
std::string to_string(AttackKind k);

struct Dataset;  // data.hpp

/// Fraction of samples still classified correctly after the attack.
double robust_accuracy(const BlockCnn& model, const Dataset& data, const AttackConfig& cfg,
                       AttackKind kind, Rng& rng, std::size_t batch_size = 128);

double clean_accuracy(const BlockCnn& model, const Dataset& data,
                      std::size_t batch_size = 256);

struct EvalRow {
  std::string attack;
  double epsilon;
  int iterations;
  double step_size;
  double clean_acc;
  double robust_acc;
  std::size_t n_samples;
  std::uint64_t seed;
};
void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows);

}  // namespace mixacm
