#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mixacm/checkpoint.hpp"
#include "mixacm/data.hpp"

using namespace mixacm;
namespace fs = std::filesystem;

namespace {

const std::string kCli = MIXACM_CLI_PATH;

int run_cli(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

struct CliDir {
  fs::path root;
  CliDir() {
    root = fs::temp_directory_path() / ("mixacm_cli_" + std::to_string(counter()++));
    fs::create_directories(root);
  }
  ~CliDir() { fs::remove_all(root); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string sub(const std::string& name) const { return (root / name).string(); }
  std::string write_config(const std::string& name, const std::string& text) const {
    const std::string p = (root / name).string();
    std::ofstream f(p);
    f << text;
    return p;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string tiny_train(const std::string& channels = "4,6") {
  return
      "train.epochs = 2\n"
      "train.batch_size = 16\n"
      "train.lr0 = 0.2\n"
      "train.seed = 1\n"
      "train.log_wall_seconds = false\n"
      "data.kind = synth\n"
      "data.classes = 2\n"
      "data.per_class = 12\n"
      "data.test_per_class = 6\n"
      "data.image_size = 8\n"
      "data.noise_sigma = 0.1\n"
      "model.channels = " + channels + "\n"
      "model.convs_per_block = 1\n"
      "attack.iterations = 2\n";
}

}  // namespace

TEST_CASE("config error exit code and unknown keys") {
  CliDir dir;
  const std::string cfg = dir.write_config("bad.cfg", "train.lr0 = 0.1\nbogus.key = 1\n");
  CHECK(run_cli("train-natural --config " + cfg + " --out " + dir.sub("out")) == 2);

  const std::string missing = dir.sub("nope.cfg");
  CHECK(run_cli("train-natural --config " + missing + " --out " + dir.sub("out2")) == 2);
}

TEST_CASE("data error exit code") {
  CliDir dir;
  const std::string cfg = dir.write_config(
      "idx.cfg", "data.kind = idx\ndata.train_images = /nope.idx\ndata.train_labels = /no.idx\n");
  CHECK(run_cli("train-natural --config " + cfg + " --out " + dir.sub("out")) == 3);
}

TEST_CASE("train-natural writes manifest, metrics, checkpoint; --force policy") {
  CliDir dir;
  const std::string cfg = dir.write_config("t.cfg", tiny_train());
  const std::string out = dir.sub("run");
  REQUIRE(run_cli("train-natural --config " + cfg + " --out " + out) == 0);
  CHECK(fs::exists(fs::path(out) / "manifest.txt"));
  CHECK(fs::exists(fs::path(out) / "metrics.csv"));
  CHECK(fs::exists(fs::path(out) / "checkpoints" / "final.ckpt"));
  CHECK(fs::exists(fs::path(out) / "dataset_manifest.txt"));

  const std::string manifest = read_file((fs::path(out) / "manifest.txt").string());
  CHECK(manifest.find("version=mixacm 0.1.0") != std::string::npos);
  CHECK(manifest.find("train.epochs=2") != std::string::npos);

  // existing directory without --force aborts
  CHECK(run_cli("train-natural --config " + cfg + " --out " + out) == 2);
  CHECK(run_cli("train-natural --config " + cfg + " --out " + out + " --force") == 0);
}

TEST_CASE("full pipeline: teacher -> distill -> evaluate -> acm-dump, byte idempotence") {
  CliDir dir;
  const std::string cfg = dir.write_config("t.cfg", tiny_train());
  const std::string teacher_out = dir.sub("teacher");
  REQUIRE(run_cli("train-teacher --config " + cfg + " --out " + teacher_out) == 0);
  const std::string teacher_ckpt = teacher_out + "/checkpoints/final.ckpt";
  REQUIRE(fs::exists(teacher_ckpt));

  // distill from the teacher checkpoint (student half width via CLI config)
  const std::string dcfg = dir.write_config(
      "d.cfg", tiny_train("2,3") +
                   "distill.teacher_checkpoint = " + teacher_ckpt + "\n"
                   "distill.alpha_acm = 2\n");
  const std::string stu_out = dir.sub("student");
  REQUIRE(run_cli("distill --config " + dcfg + " --out " + stu_out) == 0);
  REQUIRE(fs::exists(stu_out + "/checkpoints/final.ckpt"));

  // ablation flags parse and run
  CHECK(run_cli("distill --config " + dcfg + " --out " + dir.sub("s2") + " --no-mixup") == 0);
  CHECK(run_cli("distill --config " + dcfg + " --out " + dir.sub("s3") + " --acm-only") == 0);
  CHECK(run_cli("distill --config " + dcfg + " --out " + dir.sub("s4") + " --taps 1,2") == 0);

  // evaluate: clean only, fgsm, pgd rows
  const std::string eval_out = dir.sub("eval");
  REQUIRE(run_cli("evaluate --config " + cfg + " --checkpoint " + teacher_ckpt +
                  " --attack pgd --k 3 --eps 8/255 --out " + eval_out) == 0);
  const std::string eval_csv = read_file(eval_out + "/eval.csv");
  CHECK(eval_csv.find("attack,epsilon,iterations,step_size,clean_acc,robust_acc,"
                      "n_samples,seed") != std::string::npos);
  CHECK(run_cli("evaluate --config " + cfg + " --checkpoint " + teacher_ckpt +
                " --attack none --out " + dir.sub("eval2")) == 0);

  // acm-dump
  const std::string acm_out = dir.sub("acm");
  REQUIRE(run_cli("acm-dump --config " + cfg + " --checkpoint " + teacher_ckpt + " --out " +
                  acm_out) == 0);
  const std::string acm_csv = read_file(acm_out + "/acm/acm.csv");
  CHECK(acm_csv.find("tap_index,channel_rank,mean_value") != std::string::npos);

  // idempotence: rerunning with --force reproduces bytes exactly
  const std::string before_ck = read_file(teacher_ckpt);
  const std::string before_metrics = read_file(teacher_out + "/metrics.csv");
  const std::string before_manifest = read_file(teacher_out + "/manifest.txt");
  REQUIRE(run_cli("train-teacher --config " + cfg + " --out " + teacher_out + " --force") == 0);
  CHECK(read_file(teacher_ckpt) == before_ck);
  CHECK(read_file(teacher_out + "/metrics.csv") == before_metrics);
  CHECK(read_file(teacher_out + "/manifest.txt") == before_manifest);
}

TEST_CASE("distill without a teacher checkpoint is a config error") {
  CliDir dir;
  const std::string cfg = dir.write_config("t.cfg", tiny_train());
  CHECK(run_cli("distill --config " + cfg + " --out " + dir.sub("out")) == 2);
}

TEST_CASE("theory-check writes the per-instance report") {
  CliDir dir;
  const std::string out = dir.sub("theory");
  REQUIRE(run_cli("theory-check --instances 5 --d-max 4 --n-max 15 --theory-seed 3 --out " +
                  out) == 0);
  const std::string csv = read_file(out + "/theory.csv");
  CHECK(csv.find("d,n,a,b,alpha,k,c_x,R,epsilon,lhs,rhs,margin,holds") != std::string::npos);
  int lines = -1;  // header
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 5);
}

TEST_CASE("sweep runs each grid point and aggregates") {
  CliDir dir;
  const std::string cfg0 = dir.write_config("t.cfg", tiny_train());
  const std::string teacher_out = dir.sub("teacher");
  REQUIRE(run_cli("train-teacher --config " + cfg0 + " --out " + teacher_out) == 0);
  const std::string dcfg = dir.write_config(
      "d.cfg", tiny_train("2,3") + "distill.teacher_checkpoint = " + teacher_out +
                   "/checkpoints/final.ckpt\n");
  const std::string out = dir.sub("sweep");
  REQUIRE(run_cli("sweep --config " + dcfg + " --param alpha_acm --grid 1,10 --out " + out) ==
          0);
  const std::string csv = read_file(out + "/sweep.csv");
  int lines = -1;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 2);  // rows = grid size
  CHECK(fs::exists(out + "/point_0/checkpoints/final.ckpt"));
  CHECK(fs::exists(out + "/point_1/checkpoints/final.ckpt"));

  // empty grid is a config error
  CHECK(run_cli("sweep --config " + dcfg + " --param alpha_acm --grid , --out " +
                dir.sub("sweep2")) == 2);
}
