#include "mixacm/attacks.hpp"

#include <algorithm>
#include <fstream>

#include "mixacm/data.hpp"
#include "mixacm/error.hpp"
#include "mixacm/ops.hpp"

namespace mixacm {

void AttackConfig::validate() const {
  if (epsilon <= 0.0) throw ConfigError("attack: epsilon must be positive");
  if (step_size <= 0.0) throw ConfigError("attack: step_size must be positive");
  if (iterations < 1) throw ConfigError("attack: iterations must be >= 1");
  if (range_lo >= range_hi) throw ConfigError("attack: invalid input range");
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw DimensionError("cross_entropy_loss: label count mismatch");
  Tensor mask(logits.shape());
  auto md = mask.data();
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || (std::size_t)y >= k) throw DimensionError("cross_entropy_loss: label out of range");
    md[i * k + (std::size_t)y] = 1.0;
  }
  Tensor lp = log_softmax(logits);
  return scalar_mul(sum(mul(mask, lp)), -1.0 / (double)n);
}

namespace {

/// Parks parameter gradients for the duration of an attack so the tape only
/// differentiates w.r.t. the inputs; restores the previous flags on exit.
class ParamGradPause {
 public:
  explicit ParamGradPause(const BlockCnn& model) {
    for (const auto& [name, t] : model.parameters()) {
      Tensor h = t;
      saved_.emplace_back(h, h.requires_grad());
      h.set_requires_grad(false);
    }
  }
  ~ParamGradPause() {
    for (auto& [t, flag] : saved_) t.set_requires_grad(flag);
  }

 private:
  std::vector<std::pair<Tensor, bool>> saved_;
};

/// Gradient of the batch CE w.r.t. the inputs; the model is left untouched.
Tensor input_gradient(const BlockCnn& model, const Tensor& x, const std::vector<int>& labels) {
  ParamGradPause pause(model);
  Tensor xg = x.detached();
  xg.set_requires_grad(true);
  {
    Tape tape;
    ForwardResult r = model.forward(xg);
    Tensor loss = cross_entropy_loss(r.logits, labels);
    tape.backward(loss);
  }
  Tensor g(x.shape());
  auto gd = g.data();
  auto xgg = xg.grad();
  std::copy(xgg.begin(), xgg.end(), gd.begin());
  return g;
}

}  // namespace

Tensor fgsm(const BlockCnn& model, const Tensor& x, const std::vector<int>& labels,
            const AttackConfig& cfg) {
  cfg.validate();
  Tensor g = input_gradient(model, x, labels);
  Tensor adv = x.detached();
  auto ad = adv.data();
  auto gd = g.data();
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double s = gd[i] > 0.0 ? 1.0 : (gd[i] < 0.0 ? -1.0 : 0.0);
    ad[i] = std::clamp(ad[i] + cfg.epsilon * s, cfg.range_lo, cfg.range_hi);
  }
  return adv;
}

Tensor pgd(const BlockCnn& model, const Tensor& x, const std::vector<int>& labels,
           const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = x.numel();
  std::vector<double> delta(n, 0.0);
  if (cfg.random_start)
    for (double& d : delta) d = rng.uniform(-cfg.epsilon, cfg.epsilon);

  Tensor xd = x.detached();
  auto base = xd.data();
  for (int it = 0; it < cfg.iterations; ++it) {
    Tensor cur(x.shape());
    auto cd = cur.data();
    for (std::size_t i = 0; i < n; ++i) cd[i] = base[i] + delta[i];
    Tensor g = input_gradient(model, cur, labels);
    auto gd = g.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double s = gd[i] > 0.0 ? 1.0 : (gd[i] < 0.0 ? -1.0 : 0.0);
      delta[i] = std::clamp(delta[i] + cfg.step_size * s, -cfg.epsilon, cfg.epsilon);
    }
  }
  Tensor adv(x.shape());
  auto ad = adv.data();
  for (std::size_t i = 0; i < n; ++i)
    ad[i] = std::clamp(base[i] + delta[i], cfg.range_lo, cfg.range_hi);
  return adv;
}

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "none") return AttackKind::None;
  if (s == "fgsm") return AttackKind::Fgsm;
  if (s == "pgd") return AttackKind::Pgd;
  throw ConfigError("unknown attack: " + s);
}

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
  }
  return "?";
}

namespace {

std::size_t count_correct(const BlockCnn& model, const Tensor& batch,
                          const std::vector<int>& labels) {
  NoGradScope ng;
  ForwardResult r = model.forward(batch);
  const std::size_t n = r.logits.dim(0), k = r.logits.dim(1);
  auto ld = r.logits.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = ld.data() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    if ((int)best == labels[i]) ++correct;
  }
  return correct;
}

}  // namespace

double clean_accuracy(const BlockCnn& model, const Dataset& data, std::size_t batch_size) {
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("clean_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    auto [x, y] = data.slice(start, count);
    correct += count_correct(model, x, y);
  }
  return (double)correct / (double)n;
}

double robust_accuracy(const BlockCnn& model, const Dataset& data, const AttackConfig& cfg,
                       AttackKind kind, Rng& rng, std::size_t batch_size) {
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("robust_accuracy: empty dataset");
  if (kind == AttackKind::None || cfg.epsilon == 0.0) return clean_accuracy(model, data, batch_size);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    auto [x, y] = data.slice(start, count);
    Tensor adv = kind == AttackKind::Fgsm ? fgsm(model, x, y, cfg) : pgd(model, x, y, cfg, rng);
    correct += count_correct(model, adv, y);
  }
  return (double)correct / (double)n;
}

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("write_eval_csv: cannot open " + path);
  f << "attack,epsilon,iterations,step_size,clean_acc,robust_acc,n_samples,seed\n";
  f.precision(17);
  for (const auto& r : rows)
    f << r.attack << "," << r.epsilon << "," << r.iterations << "," << r.step_size << ","
      << r.clean_acc << "," << r.robust_acc << "," << r.n_samples << "," << r.seed << "\n";
}

}  // namespace mixacm
