#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "mixacm/attacks.hpp"
#include "mixacm/checkpoint.hpp"
#include "mixacm/config.hpp"
#include "mixacm/data.hpp"
#include "mixacm/distill.hpp"
#include "mixacm/error.hpp"
#include "mixacm/model.hpp"
#include "mixacm/theory.hpp"
#include "mixacm/trainer.hpp"

namespace fs = std::filesystem;
using namespace mixacm;

namespace {

constexpr const char* kVersion = "mixacm 0.1.0";

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_out = true) {
  cmd->add_option("--config", args.config_path, "flat key=value config file");
  auto* out = cmd->add_option("--out", args.out_dir, "output directory for this run");
  if (needs_out) out->required();
  cmd->add_option("--seed", args.seed_override, "override train.seed");
  cmd->add_flag("--force", args.force, "overwrite an existing output directory");
}

KeyValueConfig load_config(const CommonArgs& args) {
  KeyValueConfig cfg = args.config_path.empty() ? KeyValueConfig()
                                                : KeyValueConfig::from_file(args.config_path);
  if (args.seed_override) cfg.set("train.seed", std::to_string(*args.seed_override));
  return cfg;
}

void prepare_out_dir(const CommonArgs& args) {
  if (fs::exists(args.out_dir)) {
    if (!args.force)
      throw ConfigError("output directory '" + args.out_dir +
                        "' already exists; pass --force to overwrite");
    fs::remove_all(args.out_dir);
  }
  fs::create_directories(args.out_dir);
}

struct Resolved {
  TrainConfig train;
  DistillConfig distill;
  AttackConfig attack;
  // data
  std::string data_kind;
  int classes = 4, per_class = 300, test_per_class = 150, image_size = 14;
  double noise_sigma = 0.1;
  std::uint64_t data_seed = 0;
  double fraction = 1.0;
  std::uint64_t fraction_seed = 0;
  std::string train_images, train_labels, test_images, test_labels;
  // model
  std::vector<int> channels = {32, 64, 128};
  std::vector<int> strides;
  int convs_per_block = 2, kernel = 3;
  bool bias = false, residual = false;
  std::string teacher_checkpoint;
};

Resolved resolve(KeyValueConfig& cfg) {
  Resolved r;
  r.train.epochs = (int)cfg.get_int("train.epochs", 30);
  r.train.batch_size = (int)cfg.get_int("train.batch_size", 64);
  r.train.lr0 = cfg.get_double("train.lr0", 0.1);
  r.train.momentum = cfg.get_double("train.momentum", 0.9);
  r.train.weight_decay = cfg.get_double("train.weight_decay", 5e-4);
  const std::string sched = cfg.get_string("train.schedule", "cosine");
  if (sched == "cosine") r.train.schedule = LrSchedule::Cosine;
  else if (sched == "constant") r.train.schedule = LrSchedule::Constant;
  else throw ConfigError("train.schedule must be cosine or constant");
  r.train.seed = cfg.get_uint("train.seed", 0);
  r.train.nesterov = cfg.get_bool("train.nesterov", true);
  r.train.augment = cfg.get_bool("train.augment", false);
  r.train.log_wall_seconds = cfg.get_bool("train.log_wall_seconds", true);
  r.train.eval_robust = cfg.get_bool("train.eval_robust", false);

  r.distill.alpha_acm = cfg.get_double("distill.alpha_acm", 5000.0);
  r.distill.alpha_kld = cfg.get_double("distill.alpha_kld", 0.95);
  r.distill.gamma = cfg.get_double("distill.gamma", 10.0);
  r.distill.transform =
      acm_transform_from_string(cfg.get_string("distill.transform", "adaptive_max_pool"));
  r.distill.transform_side =
      transform_side_from_string(cfg.get_string("distill.transform_side", "teacher"));
  for (int t : cfg.get_int_list("distill.taps", {})) r.distill.tap_subset.insert(t);
  r.distill.cross_dataset = cfg.get_bool("distill.cross_dataset", false);
  r.distill.mixup.alpha_mixup = cfg.get_double("distill.mixup_alpha", 1.0);
  r.distill.mixup.enabled = cfg.get_bool("distill.mixup_enabled", true);
  r.teacher_checkpoint = cfg.get_string("distill.teacher_checkpoint", "");

  r.attack.epsilon = cfg.get_double("attack.epsilon", 8.0 / 255.0);
  r.attack.step_size = cfg.get_double("attack.step_size", 2.0 / 255.0);
  r.attack.iterations = (int)cfg.get_int("attack.iterations", 7);
  r.attack.random_start = cfg.get_bool("attack.random_start", true);

  r.data_kind = cfg.get_string("data.kind", "synth");
  r.classes = (int)cfg.get_int("data.classes", 4);
  r.per_class = (int)cfg.get_int("data.per_class", 300);
  r.test_per_class = (int)cfg.get_int("data.test_per_class", 150);
  r.image_size = (int)cfg.get_int("data.image_size", 14);
  r.noise_sigma = cfg.get_double("data.noise_sigma", 0.1);
  r.data_seed = cfg.get_uint("data.seed", 0);
  r.fraction = cfg.get_double("data.fraction", 1.0);
  r.fraction_seed = cfg.get_uint("data.fraction_seed", 0);
  r.train_images = cfg.get_string("data.train_images", "");
  r.train_labels = cfg.get_string("data.train_labels", "");
  r.test_images = cfg.get_string("data.test_images", "");
  r.test_labels = cfg.get_string("data.test_labels", "");

  r.channels = cfg.get_int_list("model.channels", {32, 64, 128});
  r.strides = cfg.get_int_list("model.strides", {});
  r.convs_per_block = (int)cfg.get_int("model.convs_per_block", 2);
  r.kernel = (int)cfg.get_int("model.kernel", 3);
  r.bias = cfg.get_bool("model.bias", false);
  r.residual = cfg.get_bool("model.residual", false);

  cfg.reject_unknown_keys();
  return r;
}

std::map<std::string, std::string> manifest_entries(const Resolved& r) {
  std::map<std::string, std::string> m;
  auto put = [&](const std::string& k, auto v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    m[k] = os.str();
  };
  put("train.epochs", r.train.epochs);
  put("train.batch_size", r.train.batch_size);
  put("train.lr0", r.train.lr0);
  put("train.momentum", r.train.momentum);
  put("train.weight_decay", r.train.weight_decay);
  m["train.schedule"] = r.train.schedule == LrSchedule::Cosine ? "cosine" : "constant";
  put("train.seed", r.train.seed);
  put("train.nesterov", r.train.nesterov);
  put("train.augment", r.train.augment);
  put("train.log_wall_seconds", r.train.log_wall_seconds);
  put("train.eval_robust", r.train.eval_robust);
  put("distill.alpha_acm", r.distill.alpha_acm);
  put("distill.alpha_kld", r.distill.alpha_kld);
  put("distill.gamma", r.distill.gamma);
  m["distill.transform"] = to_string(r.distill.transform);
  m["distill.transform_side"] = to_string(r.distill.transform_side);
  {
    std::ostringstream os;
    bool first = true;
    for (int t : r.distill.tap_subset) {
      if (!first) os << ",";
      os << t;
      first = false;
    }
    m["distill.taps"] = os.str().empty() ? "all" : os.str();
  }
  put("distill.cross_dataset", r.distill.cross_dataset);
  put("distill.mixup_alpha", r.distill.mixup.alpha_mixup);
  put("distill.mixup_enabled", r.distill.mixup.enabled);
  m["distill.teacher_checkpoint"] = r.teacher_checkpoint;
  put("attack.epsilon", r.attack.epsilon);
  put("attack.step_size", r.attack.step_size);
  put("attack.iterations", r.attack.iterations);
  put("attack.random_start", r.attack.random_start);
  m["data.kind"] = r.data_kind;
  put("data.classes", r.classes);
  put("data.per_class", r.per_class);
  put("data.test_per_class", r.test_per_class);
  put("data.image_size", r.image_size);
  put("data.noise_sigma", r.noise_sigma);
  put("data.seed", r.data_seed);
  put("data.fraction", r.fraction);
  put("data.fraction_seed", r.fraction_seed);
  m["data.train_images"] = r.train_images;
  m["data.train_labels"] = r.train_labels;
  m["data.test_images"] = r.test_images;
  m["data.test_labels"] = r.test_labels;
  {
    std::ostringstream os;
    for (std::size_t i = 0; i < r.channels.size(); ++i)
      os << (i ? "," : "") << r.channels[i];
    m["model.channels"] = os.str();
  }
  {
    std::ostringstream os;
    for (std::size_t i = 0; i < r.strides.size(); ++i) os << (i ? "," : "") << r.strides[i];
    m["model.strides"] = os.str();
  }
  put("model.convs_per_block", r.convs_per_block);
  put("model.kernel", r.kernel);
  put("model.bias", r.bias);
  put("model.residual", r.residual);
  return m;
}

/// The manifest is written before any computation so every artifact in the
/// run directory traces back to an exact resolved config.
void write_manifest(const std::string& dir, const Resolved& r, const std::string& command) {
  std::ofstream f(fs::path(dir) / "manifest.txt");
  if (!f) throw DataError("cannot write manifest in " + dir);
  f << "version=" << kVersion << "\n";
  f << "command=" << command << "\n";
  for (const auto& [k, v] : manifest_entries(r)) f << k << "=" << v << "\n";
}

std::pair<Dataset, Dataset> load_data(const Resolved& r, const std::string& out_dir) {
  Dataset train, test;
  if (r.data_kind == "synth") {
    train = synth_blobs(r.classes, r.per_class, r.image_size, r.noise_sigma, r.data_seed);
    test = synth_blobs(r.classes, r.test_per_class, r.image_size, r.noise_sigma,
                       r.data_seed + 1);
    if (!out_dir.empty())
      write_synth_manifest((fs::path(out_dir) / "dataset_manifest.txt").string(), r.classes,
                           r.per_class, r.image_size, r.noise_sigma, r.data_seed);
  } else if (r.data_kind == "idx") {
    if (r.train_images.empty() || r.train_labels.empty())
      throw ConfigError("data.kind=idx requires data.train_images and data.train_labels");
    train = load_idx(r.train_images, r.train_labels);
    if (!r.test_images.empty()) test = load_idx(r.test_images, r.test_labels);
    else test = train;
  } else {
    throw ConfigError("data.kind must be synth or idx");
  }
  train.split = "train";
  test.split = "test";
  if (r.fraction < 1.0) train = subsample(train, r.fraction, r.fraction_seed);
  return {std::move(train), std::move(test)};
}

ModelSpec model_spec_from(const Resolved& r, int classes, int in_channels) {
  ModelSpec spec;
  spec.classes = classes;
  spec.in_channels = in_channels;
  for (std::size_t i = 0; i < r.channels.size(); ++i) {
    BlockSpec b;
    b.conv_layers = r.convs_per_block;
    b.channels = r.channels[i];
    b.kernel_size = r.kernel;
    b.stride = i < r.strides.size() ? r.strides[i] : (i == 0 ? 1 : 2);
    b.use_bias = r.bias;
    b.use_residual = r.residual;
    spec.blocks.push_back(b);
  }
  return spec;
}

int run_training(const CommonArgs& args, TrainMode mode, KeyValueConfig cfg,
                 const std::string& command) {
  Resolved r = resolve(cfg);
  r.train.mode = mode;
  prepare_out_dir(args);
  write_manifest(args.out_dir, r, command);
  auto [train_data, test_data] = load_data(r, args.out_dir);

  std::optional<BlockCnn> teacher;
  if (mode == TrainMode::MixACM) {
    if (r.teacher_checkpoint.empty())
      throw ConfigError("distill requires distill.teacher_checkpoint");
    teacher = model_from_checkpoint(load_checkpoint(r.teacher_checkpoint));
    teacher->freeze();
  }

  BlockCnn model(model_spec_from(r, train_data.classes, (int)train_data.images.dim(1)),
                 r.train.seed);
  RunResult result = run(model, teacher ? &*teacher : nullptr, train_data, test_data,
                         r.train, r.distill, r.attack, args.out_dir);
  std::cout << command << ": " << result.metrics.size() << " epochs, final clean_acc="
            << result.metrics.back().clean_acc << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint_path,
                 const std::string& attack_name, KeyValueConfig cfg) {
  Resolved r = resolve(cfg);
  prepare_out_dir(args);
  write_manifest(args.out_dir, r, "evaluate");
  auto [train_data, test_data] = load_data(r, "");
  (void)train_data;

  BlockCnn model = model_from_checkpoint(load_checkpoint(checkpoint_path));
  model.freeze();

  const AttackKind kind = attack_kind_from_string(attack_name);
  Rng rng(Rng::derive_seed(r.train.seed, 99));
  EvalRow row;
  row.attack = attack_name;
  row.epsilon = kind == AttackKind::None ? 0.0 : r.attack.epsilon;
  row.iterations = kind == AttackKind::Pgd ? r.attack.iterations : 1;
  row.step_size = kind == AttackKind::Fgsm ? r.attack.epsilon : r.attack.step_size;
  row.clean_acc = clean_accuracy(model, test_data);
  AttackConfig eval_cfg = r.attack;
  if (kind == AttackKind::Fgsm) {
    eval_cfg.iterations = 1;
    eval_cfg.random_start = false;
  }
  row.robust_acc = kind == AttackKind::None
                       ? row.clean_acc
                       : robust_accuracy(model, test_data, eval_cfg, kind, rng);
  row.n_samples = test_data.size();
  row.seed = r.train.seed;
  write_eval_csv((fs::path(args.out_dir) / "eval.csv").string(), {row});
  std::cout << "evaluate: clean=" << row.clean_acc << " robust(" << attack_name
            << ")=" << row.robust_acc << "\n";
  return 0;
}

int cmd_acm_dump(const CommonArgs& args, const std::string& checkpoint_path,
                 KeyValueConfig cfg) {
  Resolved r = resolve(cfg);
  prepare_out_dir(args);
  write_manifest(args.out_dir, r, "acm-dump");
  auto [train_data, test_data] = load_data(r, "");
  (void)train_data;
  BlockCnn model = model_from_checkpoint(load_checkpoint(checkpoint_path));
  model.freeze();
  fs::create_directories(fs::path(args.out_dir) / "acm");
  const auto rows = acm_profile(model, test_data.images);
  write_acm_csv((fs::path(args.out_dir) / "acm" / "acm.csv").string(), rows);
  std::cout << "acm-dump: " << rows.size() << " rows\n";
  return 0;
}

int cmd_theory_check(const CommonArgs& args, int instances, int d_max, int n_max,
                     double beta_a, double beta_b, std::uint64_t seed, int quad_nodes) {
  if (instances < 1) throw ConfigError("theory-check: need at least one instance");
  prepare_out_dir(args);
  {
    std::ofstream f(fs::path(args.out_dir) / "manifest.txt");
    f << "version=" << kVersion << "\ncommand=theory-check\ninstances=" << instances
      << "\nd_max=" << d_max << "\nn_max=" << n_max << "\nbeta_a=" << beta_a
      << "\nbeta_b=" << beta_b << "\nseed=" << seed << "\nquad_nodes=" << quad_nodes << "\n";
  }
  Rng rng(seed);
  std::vector<TheoryReportRow> rows;
  int holds_count = 0;
  for (int t = 0; t < instances; ++t) {
    const int d = 2 + (int)rng.uniform_int((std::uint64_t)(d_max - 1));
    const int n = 10 + (int)rng.uniform_int((std::uint64_t)(n_max - 9));
    TheoryInstance inst = generate_instance(rng, d, n, beta_a, beta_b);
    TheoremReport rep = verify_theorem_4_2(inst, quad_nodes);
    rows.push_back({d, n, beta_a, beta_b, inst.weight_alpha, inst.closeness_k, inst.c_x,
                    inst.big_r, inst.epsilon, rep.lhs, rep.rhs, rep.margin, rep.holds});
    holds_count += rep.holds ? 1 : 0;
  }
  write_theory_csv((fs::path(args.out_dir) / "theory.csv").string(), rows);
  std::cout << "theory-check: " << holds_count << "/" << instances << " instances hold\n";
  return holds_count == instances ? 0 : 4;
}

int cmd_sweep(const CommonArgs& args, const std::string& param, const std::string& grid_csv,
              KeyValueConfig cfg) {
  if (param != "alpha_acm" && param != "alpha_kld" && param != "gamma")
    throw ConfigError("sweep: --param must be alpha_acm, alpha_kld or gamma");
  std::vector<double> grid;
  {
    std::istringstream ss(grid_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) grid.push_back(parse_fraction(item));
  }
  if (grid.empty()) throw ConfigError("sweep: empty grid");

  Resolved r = resolve(cfg);
  prepare_out_dir(args);
  write_manifest(args.out_dir, r, "sweep:" + param + "=" + grid_csv);
  auto [train_data, test_data] = load_data(r, args.out_dir);
  if (r.teacher_checkpoint.empty())
    throw ConfigError("sweep requires distill.teacher_checkpoint");
  BlockCnn teacher = model_from_checkpoint(load_checkpoint(r.teacher_checkpoint));
  teacher.freeze();

  std::ofstream agg(fs::path(args.out_dir) / "sweep.csv");
  agg << "param,value,clean_acc,robust_acc_pgd20\n";
  agg.precision(17);
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    Resolved point = r;
    point.train.mode = TrainMode::MixACM;
    if (param == "alpha_acm") point.distill.alpha_acm = grid[gi];
    else if (param == "alpha_kld") point.distill.alpha_kld = grid[gi];
    else point.distill.gamma = grid[gi];
    const std::string sub = (fs::path(args.out_dir) / ("point_" + std::to_string(gi))).string();
    fs::create_directories(sub);
    BlockCnn student(model_spec_from(point, train_data.classes,
                                     (int)train_data.images.dim(1)), point.train.seed);
    run(student, &teacher, train_data, test_data, point.train, point.distill, point.attack,
        sub);
    AttackConfig eval_cfg = point.attack;
    eval_cfg.iterations = 20;
    eval_cfg.random_start = true;
    Rng rng(Rng::derive_seed(point.train.seed, 99));
    const double clean = clean_accuracy(student, test_data);
    const double rob = robust_accuracy(student, test_data, eval_cfg, AttackKind::Pgd, rng);
    agg << param << "," << grid[gi] << "," << clean << "," << rob << "\n";
  }
  std::cout << "sweep: " << grid.size() << " points\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MixACM robustness distillation toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonArgs a_teacher, a_natural, a_distill, a_eval, a_acm, a_theory, a_sweep;

  auto* c_teacher = app.add_subcommand("train-teacher", "PGD adversarial training");
  add_common(c_teacher, a_teacher);

  auto* c_natural = app.add_subcommand("train-natural", "natural (clean) training");
  add_common(c_natural, a_natural);

  auto* c_distill = app.add_subcommand("distill", "MixACM distillation from a robust teacher");
  add_common(c_distill, a_distill);
  bool no_mixup = false, no_kld = false, acm_only = false;
  std::string taps_csv;
  c_distill->add_flag("--no-mixup", no_mixup, "disable mixup (w/o Mixup arm)");
  c_distill->add_flag("--no-kld", no_kld, "drop the soft-label term (w/o KD arm)");
  c_distill->add_flag("--acm-only", acm_only, "CE + ACM only (Only ACM arm)");
  c_distill->add_option("--taps", taps_csv, "tap subset, e.g. 3,4");

  auto* c_eval = app.add_subcommand("evaluate", "clean / FGSM / PGD accuracy");
  add_common(c_eval, a_eval);
  std::string eval_ckpt, eval_attack = "pgd", eval_eps, eval_step;
  int eval_k = -1;
  double eval_fraction = 1.0;
  c_eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  c_eval->add_option("--attack", eval_attack, "none | fgsm | pgd");
  c_eval->add_option("--k", eval_k, "PGD iterations");
  c_eval->add_option("--eps", eval_eps, "epsilon, e.g. 8/255");
  c_eval->add_option("--step", eval_step, "step size, e.g. 2/255");
  c_eval->add_option("--data-fraction", eval_fraction, "stratified train fraction");

  auto* c_acm = app.add_subcommand("acm-dump", "write per-tap mean ACM profile CSV");
  add_common(c_acm, a_acm);
  std::string acm_ckpt;
  c_acm->add_option("--checkpoint", acm_ckpt, "model checkpoint")->required();

  auto* c_theory = app.add_subcommand("theory-check", "verify the logistic mixup bound");
  add_common(c_theory, a_theory);
  int th_instances = 100, th_dmax = 10, th_nmax = 50, th_nodes = 64;
  double th_a = 1.0, th_b = 1.0;
  std::uint64_t th_seed = 0;
  c_theory->add_option("--instances", th_instances);
  c_theory->add_option("--d-max", th_dmax);
  c_theory->add_option("--n-max", th_nmax);
  c_theory->add_option("--beta-a", th_a);
  c_theory->add_option("--beta-b", th_b);
  c_theory->add_option("--theory-seed", th_seed);
  c_theory->add_option("--quad-nodes", th_nodes);

  auto* c_sweep = app.add_subcommand("sweep", "grid over alpha_acm / alpha_kld / gamma");
  add_common(c_sweep, a_sweep);
  std::string sweep_param = "alpha_acm", sweep_grid;
  c_sweep->add_option("--param", sweep_param);
  c_sweep->add_option("--grid", sweep_grid, "comma-separated values")->required();

  try {
    app.parse(argc, argv);

    if (*c_teacher) {
      KeyValueConfig cfg = load_config(a_teacher);
      return run_training(a_teacher, TrainMode::AdvTrain, std::move(cfg), "train-teacher");
    }
    if (*c_natural) {
      KeyValueConfig cfg = load_config(a_natural);
      return run_training(a_natural, TrainMode::Natural, std::move(cfg), "train-natural");
    }
    if (*c_distill) {
      KeyValueConfig cfg = load_config(a_distill);
      if (no_mixup || acm_only) cfg.set("distill.mixup_enabled", "false");
      if (no_kld || acm_only) cfg.set("distill.alpha_kld", "0");
      if (!taps_csv.empty()) cfg.set("distill.taps", taps_csv);
      return run_training(a_distill, TrainMode::MixACM, std::move(cfg), "distill");
    }
    if (*c_eval) {
      KeyValueConfig cfg = load_config(a_eval);
      if (!eval_eps.empty()) cfg.set("attack.epsilon", eval_eps);
      if (!eval_step.empty()) cfg.set("attack.step_size", eval_step);
      if (eval_k > 0) cfg.set("attack.iterations", std::to_string(eval_k));
      if (eval_fraction != 1.0) cfg.set("data.fraction", std::to_string(eval_fraction));
      return cmd_evaluate(a_eval, eval_ckpt, eval_attack, std::move(cfg));
    }
    if (*c_acm) {
      KeyValueConfig cfg = load_config(a_acm);
      return cmd_acm_dump(a_acm, acm_ckpt, std::move(cfg));
    }
    if (*c_theory)
      return cmd_theory_check(a_theory, th_instances, th_dmax, th_nmax, th_a, th_b, th_seed,
                              th_nodes);
    if (*c_sweep) {
      KeyValueConfig cfg = load_config(a_sweep);
      return cmd_sweep(a_sweep, sweep_param, sweep_grid, std::move(cfg));
    }
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
