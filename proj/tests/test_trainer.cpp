#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mixacm/data.hpp"
#include "mixacm/error.hpp"
#include "mixacm/ops.hpp"
#include "mixacm/trainer.hpp"
#include "support/oracles.hpp"

using namespace mixacm;
using namespace mixacm::testing;
namespace fs = std::filesystem;

namespace {

ModelSpec tiny_spec(int classes = 2) {
  return ModelSpec{1, classes, {{1, 4, 3, 1, false, false}, {1, 6, 3, 2, false, false}}};
}

TrainConfig quick_train(int epochs, TrainMode mode, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.lr0 = 0.2;
  cfg.seed = seed;
  cfg.mode = mode;
  cfg.log_wall_seconds = false;
  return cfg;
}

bool files_identical(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return !sa.empty() && sa == sb;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(cosine_lr(100, 100, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 0.1) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.1), ConfigError);
}

TEST_CASE("sgd_step pinned arithmetic") {
  SUBCASE("vanilla step") {
    std::vector<Tensor> params = {Tensor(Shape{1}, std::vector<double>{1.0}, true)};
    params[0].grad()[0] = 0.5;
    SgdState st;
    sgd_step(params, st, 1.0, 0.0, 0.0, true);
    CHECK(params[0].data()[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> params = {Tensor(Shape{3}, std::vector<double>{1, 2, 3}, true)};
    (void)params[0].grad();  // allocated zeros
    SgdState st;
    sgd_step(params, st, 0.1, 0.9, 0.0, true);
    CHECK(params[0].data()[0] == 1.0);
    CHECK(params[0].data()[1] == 2.0);
    CHECK(params[0].data()[2] == 3.0);
  }
  SUBCASE("two Nesterov steps on constant unit gradient") {
    // hand iteration of the update rule (v <- mu v + g; p -= lr (g + mu v)):
    // v1 = 1, p1 = -0.1*(1 + 0.9)    = -0.19
    // v2 = 1.9, p2 = p1 - 0.1*(1 + 1.71) = -0.461
    std::vector<Tensor> params = {Tensor(Shape{1}, std::vector<double>{0.0}, true)};
    SgdState st;
    params[0].grad()[0] = 1.0;
    sgd_step(params, st, 0.1, 0.9, 0.0, true);
    CHECK(params[0].data()[0] == doctest::Approx(-0.19).epsilon(1e-15));
    params[0].zero_grad();
    params[0].grad()[0] = 1.0;
    sgd_step(params, st, 0.1, 0.9, 0.0, true);
    CHECK(params[0].data()[0] == doctest::Approx(-0.461).epsilon(1e-12));
  }
  SUBCASE("NaN gradient aborts") {
    std::vector<Tensor> params = {Tensor(Shape{1}, std::vector<double>{1.0}, true)};
    params[0].grad()[0] = std::nan("");
    SgdState st;
    CHECK_THROWS_AS(sgd_step(params, st, 0.1, 0.9, 0.0, true), NumericError);
  }
}

TEST_CASE("run rejects bad configurations") {
  Dataset data = synth_blobs(2, 10, 8, 0.1, 1);
  BlockCnn model(tiny_spec(), 1);
  DistillConfig dcfg;
  AttackConfig acfg;

  TrainConfig bad = quick_train(0, TrainMode::Natural);
  CHECK_THROWS_AS(run(model, nullptr, data, data, bad, dcfg, acfg), ConfigError);

  TrainConfig mix = quick_train(1, TrainMode::MixACM);
  CHECK_THROWS_AS(run(model, nullptr, data, data, mix, dcfg, acfg), ConfigError);

  BlockCnn teacher(tiny_spec(), 2);
  CHECK_THROWS_AS(run(model, &teacher, data, data, mix, dcfg, acfg), ContractError);
}

TEST_CASE("natural training fits separable blobs and loss decreases") {
  Dataset train = synth_blobs(2, 40, 8, 0.05, 3);
  Dataset test = synth_blobs(2, 20, 8, 0.05, 4);

  SUBCASE("loss at step 10 is below step 0 for 5 seeds") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
      BlockCnn model(tiny_spec(), seed);
      std::vector<Tensor> params = model.parameter_tensors();
      SgdState sgd;
      auto [bx, by] = train.slice(0, 32);
      double loss0 = 0.0, loss10 = 0.0;
      for (int step = 0; step <= 10; ++step) {
        Tape tape;
        ForwardResult r = model.forward(bx);
        Tensor loss = cross_entropy_loss(r.logits, by);
        if (step == 0) loss0 = loss.value();
        if (step == 10) loss10 = loss.value();
        tape.backward(loss);
        sgd_step(params, sgd, 0.2, 0.9, 0.0, true);
        for (Tensor& p : params) p.zero_grad();
      }
      CHECK(loss10 < loss0);
    }
  }

  SUBCASE("training accuracy reaches 100% within 20 epochs") {
    BlockCnn model(tiny_spec(), 1);
    RunResult res = run(model, nullptr, train, train, quick_train(20, TrainMode::Natural),
                        DistillConfig{}, AttackConfig{});
    CHECK(res.metrics.size() == 20);
    CHECK(res.metrics.back().clean_acc == doctest::Approx(1.0).epsilon(1e-9));
    (void)test;
  }
}

TEST_CASE("metrics CSV has one row per epoch and fixed columns") {
  Dataset data = synth_blobs(2, 10, 8, 0.1, 5);
  BlockCnn model(tiny_spec(), 3);
  fs::path dir = fs::temp_directory_path() / "mixacm_trainer_metrics";
  fs::remove_all(dir);
  run(model, nullptr, data, data, quick_train(3, TrainMode::Natural), DistillConfig{},
      AttackConfig{}, dir.string());
  std::ifstream f(dir / "metrics.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,lr,train_loss,clean_acc,robust_acc_pgd20,wall_seconds");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip and resumed training match exactly") {
  Dataset train = synth_blobs(2, 24, 8, 0.1, 6);
  fs::path dir_a = fs::temp_directory_path() / "mixacm_ck_a";
  fs::path dir_b = fs::temp_directory_path() / "mixacm_ck_b";
  fs::path dir_c = fs::temp_directory_path() / "mixacm_ck_c";
  for (const auto& d : {dir_a, dir_b, dir_c}) fs::remove_all(d);

  // uninterrupted 4 epochs
  BlockCnn m1(tiny_spec(), 9);
  run(m1, nullptr, train, train, quick_train(4, TrainMode::Natural, 9), DistillConfig{},
      AttackConfig{}, dir_a.string());

  // first 2 epochs of the same 4-epoch schedule, save, reload, finish
  BlockCnn m2(tiny_spec(), 9);
  TrainConfig first_leg = quick_train(4, TrainMode::Natural, 9);
  first_leg.stop_after_epoch = 2;
  run(m2, nullptr, train, train, first_leg, DistillConfig{}, AttackConfig{}, dir_b.string());
  Checkpoint mid = load_checkpoint((dir_b / "checkpoints" / "final.ckpt").string());
  BlockCnn m3 = model_from_checkpoint(mid);
  run(m3, nullptr, train, train, quick_train(4, TrainMode::Natural, 9), DistillConfig{},
      AttackConfig{}, dir_c.string(), mid);

  CHECK(files_identical((dir_a / "checkpoints" / "final.ckpt").string(),
                        (dir_c / "checkpoints" / "final.ckpt").string()));

  // plain save -> load reproduces parameters bit-exactly
  Checkpoint ck = load_checkpoint((dir_a / "checkpoints" / "final.ckpt").string());
  BlockCnn restored = model_from_checkpoint(ck);
  const auto& pa = m1.parameters();
  const auto& pb = restored.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    auto da = pa[i].second.data();
    auto db = pb[i].second.data();
    for (std::size_t j = 0; j < da.size(); ++j) CHECK(da[j] == db[j]);
  }
  for (const auto& d : {dir_a, dir_b, dir_c}) fs::remove_all(d);
}

TEST_CASE("two identical runs produce bit-identical checkpoints and metrics") {
  Dataset train = synth_blobs(2, 20, 8, 0.1, 8);
  fs::path dir_a = fs::temp_directory_path() / "mixacm_rep_a";
  fs::path dir_b = fs::temp_directory_path() / "mixacm_rep_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  BlockCnn a(tiny_spec(), 4);
  run(a, nullptr, train, train, quick_train(3, TrainMode::AdvTrain, 4), DistillConfig{},
      AttackConfig{}, dir_a.string());
  BlockCnn b(tiny_spec(), 4);
  run(b, nullptr, train, train, quick_train(3, TrainMode::AdvTrain, 4), DistillConfig{},
      AttackConfig{}, dir_b.string());

  CHECK(files_identical((dir_a / "checkpoints" / "final.ckpt").string(),
                        (dir_b / "checkpoints" / "final.ckpt").string()));
  CHECK(files_identical((dir_a / "metrics.csv").string(), (dir_b / "metrics.csv").string()));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("adversarial training at epsilon=0 matches natural training") {
  Dataset train = synth_blobs(2, 16, 8, 0.1, 10);
  // epsilon=0 is modeled by a degenerate PGD ball: delta stays 0 so the
  // training batches coincide with natural ones
  AttackConfig acfg;
  acfg.epsilon = 1e-300;  // positive (validated) but numerically zero
  acfg.step_size = 1e-300;
  acfg.iterations = 1;
  acfg.random_start = false;

  BlockCnn nat(tiny_spec(), 11);
  RunResult r_nat = run(nat, nullptr, train, train, quick_train(2, TrainMode::Natural, 11),
                        DistillConfig{}, AttackConfig{});
  BlockCnn adv(tiny_spec(), 11);
  RunResult r_adv = run(adv, nullptr, train, train, quick_train(2, TrainMode::AdvTrain, 11),
                        DistillConfig{}, acfg);
  for (std::size_t i = 0; i < r_nat.metrics.size(); ++i)
    CHECK(r_nat.metrics[i].train_loss ==
          doctest::Approx(r_adv.metrics[i].train_loss).epsilon(1e-12));
}

TEST_CASE("mixacm mode trains end to end with paper-recipe weights") {
  Dataset train = synth_blobs(2, 16, 8, 0.1, 13);
  BlockCnn teacher(tiny_spec(), 14);
  teacher.freeze();
  BlockCnn student(ModelSpec{1, 2, {{1, 3, 3, 1, false, false}, {1, 4, 3, 2, false, false}}},
                   15);
  DistillConfig dcfg;
  dcfg.alpha_acm = 5000.0;
  dcfg.alpha_kld = 0.95;
  dcfg.gamma = 10.0;
  dcfg.mixup.alpha_mixup = 1.0;
  TrainConfig tcfg = quick_train(2, TrainMode::MixACM, 16);
  RunResult res = run(student, &teacher, train, train, tcfg, dcfg, AttackConfig{});
  CHECK(res.metrics.size() == 2);
  for (const auto& row : res.metrics) CHECK(std::isfinite(row.train_loss));
}
