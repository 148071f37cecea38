#include "mixacm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "mixacm/error.hpp"
#include "mixacm/ops.hpp"

namespace mixacm {

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "natural") return TrainMode::Natural;
  if (s == "advtrain") return TrainMode::AdvTrain;
  if (s == "mixacm") return TrainMode::MixACM;
  throw ConfigError("unknown train mode: " + s);
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Natural: return "natural";
    case TrainMode::AdvTrain: return "advtrain";
    case TrainMode::MixACM: return "mixacm";
  }
  return "?";
}

double cosine_lr(std::size_t t, std::size_t total_steps, double lr0) {
  if (total_steps == 0) throw ConfigError("cosine_lr: total step count must be positive");
  if (t > total_steps) throw ConfigError("cosine_lr: step index beyond schedule");
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * (double)t / (double)total_steps));
}

void sgd_step(std::vector<Tensor>& params, SgdState& state, double lr, double momentum,
              double weight_decay, bool nesterov) {
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Tensor& p : params) state.velocity.emplace_back(p.shape());
  }
  if (state.velocity.size() != params.size())
    throw ContractError("sgd_step: velocity/parameter count mismatch");

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    if (!p.has_grad()) continue;  // parameter unused by this loss
    auto g = p.grad();
    auto v = state.velocity[pi].data();
    auto pd = p.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      if (std::isnan(g[i]))
        throw NumericError("sgd_step: NaN gradient, training aborted");
      const double eff = g[i] + weight_decay * pd[i];
      v[i] = momentum * v[i] + eff;
      pd[i] -= nesterov ? lr * (eff + momentum * v[i]) : lr * v[i];
    }
  }
}

void clip_gradients(std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double total = 0.0;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) total += g * g;
  }
  total = std::sqrt(total);
  if (total <= max_norm) return;
  const double scale = max_norm / total;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double& g : p.grad()) g *= scale;
  }
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("write_metrics_csv: cannot open " + path);
  f << "epoch,lr,train_loss,clean_acc,robust_acc_pgd20,wall_seconds\n";
  f.precision(17);
  for (const auto& r : rows) {
    f << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.clean_acc << ",";
    if (r.robust_acc_pgd20) f << *r.robust_acc_pgd20;
    f << "," << r.wall_seconds << "\n";
  }
}

namespace {

struct Streams {
  Rng train;  // shuffling, augmentation, mixup, in-training attacks
  Rng eval;   // per-epoch robustness evaluation
};

}  // namespace

RunResult run(BlockCnn& model, const BlockCnn* teacher, const Dataset& train_data,
              const Dataset& eval_data, const TrainConfig& train_cfg,
              const DistillConfig& distill_cfg, const AttackConfig& attack_cfg,
              const std::string& out_dir, const std::optional<Checkpoint>& resume_from) {
  if (train_cfg.epochs < 1) throw ConfigError("run: epochs must be >= 1");
  if (train_cfg.batch_size < 1) throw ConfigError("run: batch_size must be >= 1");
  if (train_cfg.lr0 <= 0.0) throw ConfigError("run: lr0 must be positive");
  if (train_cfg.mode == TrainMode::MixACM) {
    if (!teacher) throw ConfigError("run: MixACM mode requires a teacher");
    if (!teacher->frozen()) throw ContractError("run: teacher must be frozen");
    if (distill_cfg.mixup.enabled && train_cfg.batch_size < 2)
      throw ConfigError("run: batch_size must be >= 2 when mixup is enabled");
    distill_cfg.validate();
  }
  if (train_cfg.mode == TrainMode::AdvTrain) attack_cfg.validate();
  train_data.validate();

  Streams streams{Rng(Rng::derive_seed(train_cfg.seed, 1)),
                  Rng(Rng::derive_seed(train_cfg.seed, 2))};

  std::vector<Tensor> params = model.parameter_tensors();
  AffineAdapters adapters;
  adapters.seed = Rng::derive_seed(train_cfg.seed, 4);
  SgdState sgd;
  int start_epoch = 0;

  if (resume_from) {
    model.load_parameters(resume_from->parameters);
    if (resume_from->velocities) {
      sgd.velocity.clear();
      for (const Tensor& v : *resume_from->velocities) sgd.velocity.push_back(v.clone());
    }
    if (resume_from->rng_states.size() >= 3) {
      streams.train.set_state(resume_from->rng_states[0]);
      streams.eval.set_state(resume_from->rng_states[1]);
      // third state carries the batcher; re-seeded via a fresh Rng below
    }
    start_epoch = (int)resume_from->epoch;
  }

  // Materializing the batcher stream separately keeps shuffles resumable.
  Rng shuffle_rng(Rng::derive_seed(train_cfg.seed, 3));
  if (resume_from && resume_from->rng_states.size() >= 3)
    shuffle_rng.set_state(resume_from->rng_states[2]);

  const std::size_t steps_per_epoch =
      (train_data.size() + (std::size_t)train_cfg.batch_size - 1) /
      (std::size_t)train_cfg.batch_size;
  const std::size_t total_steps = (std::size_t)train_cfg.epochs * steps_per_epoch;
  std::size_t step = (std::size_t)start_epoch * steps_per_epoch;

  const int end_epoch = train_cfg.stop_after_epoch > 0
                            ? std::min(train_cfg.stop_after_epoch, train_cfg.epochs)
                            : train_cfg.epochs;

  Tensor train_y = one_hot(train_data.labels, train_data.classes);
  RunResult result;

  // MixACM with the affine transform trains the adapters jointly; their
  // parameters join the optimizer list on first use, so prime them now.
  if (train_cfg.mode == TrainMode::MixACM &&
      distill_cfg.transform == AcmTransform::Affine) {
    auto [x0, y0] = train_data.slice(0, std::min<std::size_t>(2, train_data.size()));
    NoGradScope ng;
    ForwardResult ts = teacher->forward(x0);
    ForwardResult ss = model.forward(x0);
    const std::size_t shared = std::min(ts.taps.size(), ss.taps.size());
    for (std::size_t i = 1; i <= shared; ++i) {
      if (!distill_cfg.tap_subset.empty() && !distill_cfg.tap_subset.contains((int)i)) continue;
      const std::size_t tc = ts.taps[i - 1].dim(1), sc = ss.taps[i - 1].dim(1);
      if (tc == sc) continue;
      if (distill_cfg.transform_side == TransformSide::Teacher)
        adapters.weight_for((int)i, tc, sc);
      else
        adapters.weight_for((int)i, sc, tc);
    }
    for (const Tensor& t : adapters.parameter_tensors()) params.push_back(t);
  }

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::size_t batch_count = 0;
    double last_lr = train_cfg.lr0;

    const std::vector<std::size_t> perm = shuffle_rng.permutation(train_data.size());
    for (std::size_t start = 0; start < perm.size();
         start += (std::size_t)train_cfg.batch_size) {
      const std::size_t count =
          std::min((std::size_t)train_cfg.batch_size, perm.size() - start);
      const std::vector<std::size_t> idx(perm.begin() + (long)start,
                                         perm.begin() + (long)(start + count));
      auto [bx, by_int] = train_data.gather(idx);
      Tensor by(Shape{idx.size(), (std::size_t)train_data.classes});
      {
        auto dst = by.data();
        auto src = train_y.data();
        const std::size_t k = (std::size_t)train_data.classes;
        for (std::size_t i = 0; i < idx.size(); ++i)
          std::copy_n(src.data() + idx[i] * k, k, dst.data() + i * k);
      }
      if (train_cfg.augment) bx = random_crop_flip(bx, 4, true, streams.train);

      const double lr = train_cfg.schedule == LrSchedule::Cosine
                            ? cosine_lr(step, total_steps, train_cfg.lr0)
                            : train_cfg.lr0;
      last_lr = lr;
      ++step;

      double batch_loss = 0.0;
      {
        Tape tape;
        Tensor loss;
        switch (train_cfg.mode) {
          case TrainMode::Natural: {
            ForwardResult r = model.forward(bx);
            loss = cross_entropy_loss(r.logits, by_int);
            break;
          }
          case TrainMode::AdvTrain: {
            Tensor adv = pgd(model, bx, by_int, attack_cfg, streams.train);
            ForwardResult r = model.forward(adv);
            loss = cross_entropy_loss(r.logits, by_int);
            break;
          }
          case TrainMode::MixACM: {
            MixedBatch mixed = distill_cfg.mixup.enabled
                                   ? mixup(bx, by, distill_cfg.mixup, streams.train)
                                   : MixedBatch{bx, by, 1.0};
            loss = mixacm_objective(model, *teacher, mixed, distill_cfg, &adapters);
            break;
          }
        }
        batch_loss = loss.value();
        tape.backward(loss);
      }
      clip_gradients(params, train_cfg.clip_grad_norm);
      sgd_step(params, sgd, lr, train_cfg.momentum, train_cfg.weight_decay,
               train_cfg.nesterov);
      for (Tensor& p : params) p.zero_grad();

      loss_sum += batch_loss;
      ++batch_count;
    }

    MetricsRow row;
    row.epoch = epoch + 1;
    row.lr = last_lr;
    row.train_loss = loss_sum / (double)batch_count;
    row.clean_acc = clean_accuracy(model, eval_data);
    if (train_cfg.eval_robust) {
      AttackConfig eval_cfg = attack_cfg;
      eval_cfg.iterations = 20;
      eval_cfg.random_start = true;
      row.robust_acc_pgd20 =
          robust_accuracy(model, eval_data, eval_cfg, AttackKind::Pgd, streams.eval);
    }
    const auto t1 = std::chrono::steady_clock::now();
    row.wall_seconds =
        train_cfg.log_wall_seconds
            ? std::chrono::duration_cast<std::chrono::duration<double>>(t1 - t0).count()
            : 0.0;
    result.metrics.push_back(row);
  }

  result.final_checkpoint = checkpoint_from_model(model);
  std::vector<Tensor> vel;
  for (const Tensor& v : sgd.velocity) vel.push_back(v.detached());
  result.final_checkpoint.velocities = std::move(vel);
  result.final_checkpoint.rng_states = {streams.train.state(), streams.eval.state(),
                                        shuffle_rng.state()};
  result.final_checkpoint.epoch = (std::uint64_t)end_epoch;

  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), result.metrics);
    save_checkpoint((fs::path(out_dir) / "checkpoints" / "final.ckpt").string(),
                    result.final_checkpoint);
  }
  return result;
}

}  // namespace mixacm
