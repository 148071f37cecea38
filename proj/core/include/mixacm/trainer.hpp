#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mixacm/attacks.hpp"
#include "mixacm/checkpoint.hpp"
#include "mixacm/data.hpp"
#include "mixacm/distill.hpp"
#include "mixacm/model.hpp"

namespace mixacm {

enum class TrainMode { Natural, AdvTrain, MixACM };
enum class LrSchedule { Cosine, Constant };

TrainMode train_mode_from_string(const std::string& s);
std::string to_string(TrainMode m);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LrSchedule schedule = LrSchedule::Cosine;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Natural;
  bool nesterov = true;  // supplementary recipe: SGD with Nesterov momentum
  bool augment = false;  // random crop (4-pixel pad) + horizontal flip
  bool log_wall_seconds = true;
  bool eval_robust = false;  // per-epoch PGD-20 column in the metrics CSV
  /// Stop after this epoch while keeping the full `epochs` schedule horizon
  /// (checkpoint-resume support); 0 runs the whole schedule.
  int stop_after_epoch = 0;
  /// Global gradient-norm clip applied before the update; 0 disables.
  double clip_grad_norm = 0.0;
};

/// Scales all gradients so their joint l2 norm is at most max_norm.
void clip_gradients(std::vector<Tensor>& params, double max_norm);

/// lr0 * 0.5 * (1 + cos(pi * t / T)), per optimizer step, no restarts.
double cosine_lr(std::size_t t, std::size_t total_steps, double lr0);

struct SgdState {
  std::vector<Tensor> velocity;
};

/// Classic coupled-weight-decay SGD: g' = g + wd*p; v = mu*v + g';
/// Nesterov position update p -= lr*(g' + mu*v), plain update p -= lr*v.
/// Throws NumericError on NaN gradients.
void sgd_step(std::vector<Tensor>& params, SgdState& state, double lr, double momentum,
              double weight_decay, bool nesterov);

struct MetricsRow {
  int epoch;
  double lr;
  double train_loss;
  double clean_acc;
  std::optional<double> robust_acc_pgd20;
  double wall_seconds;
};
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

struct RunResult {
  std::vector<MetricsRow> metrics;
  Checkpoint final_checkpoint;
};

/// Drives natural training, PGD adversarial training, or MixACM distillation.
/// teacher is required (and must be frozen) iff mode == MixACM. When out_dir
/// is nonempty, metrics.csv and checkpoints/final.ckpt are written there.
/// Identical configs and seeds reproduce bit-identical checkpoints under
/// single-threaded execution.
RunResult run(BlockCnn& model, const BlockCnn* teacher, const Dataset& train_data,
              const Dataset& eval_data, const TrainConfig& train_cfg,
              const DistillConfig& distill_cfg, const AttackConfig& attack_cfg,
              const std::string& out_dir = "",
              const std::optional<Checkpoint>& resume_from = std::nullopt);

}  // namespace mixacm
