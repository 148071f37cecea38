#include "mixacm/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "mixacm/error.hpp"
#include "mixacm/ops.hpp"
#include "mixacm/tensor.hpp"

namespace mixacm {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double norm2(const double* a, std::size_t n) { return std::sqrt(dot(a, a, n)); }

}  // namespace

double beta_pdf(double lambda, double a, double b) {
  if (lambda <= 0.0 || lambda >= 1.0) {
    // endpoint values: finite only for exponents >= 1
    if (lambda == 0.0 && a == 1.0) return b;  // density b*(1-x)^(b-1) at 0
    if (lambda == 1.0 && b == 1.0) return a;
    return 0.0;
  }
  const double log_b = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  return std::exp((a - 1.0) * std::log(lambda) + (b - 1.0) * std::log1p(-lambda) - log_b);
}

double MixtureLambda::pdf(double lambda) const {
  const double w1 = a / (a + b);
  return w1 * beta_pdf(lambda, a + 1.0, b) + (1.0 - w1) * beta_pdf(lambda, b + 1.0, a);
}

double MixtureLambda::mean_one_minus_lambda() const {
  return 2.0 * a * b / ((a + b) * (a + b + 1.0));
}

double MixtureLambda::total_mass(int nodes) const {
  // substitution lambda = (1 - cos(pi u)) / 2 absorbs the integrable
  // endpoint singularities of Beta densities with exponents in (0,1)
  std::vector<double> t, w;
  gauss_legendre_01(nodes, t, w);
  double s = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double u = t[i];
    const double lambda = 0.5 * (1.0 - std::cos(std::numbers::pi * u));
    const double jac = 0.5 * std::numbers::pi * std::sin(std::numbers::pi * u);
    s += w[i] * pdf(lambda) * jac;
  }
  return s;
}

void gauss_legendre_01(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw ConfigError("gauss_legendre_01: need at least one node");
  nodes.resize(n);
  weights.resize(n);
  // Newton iteration on P_n over [-1,1], then affine map to [0,1]
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = 0.5 * (1.0 - x);  // descending roots -> ascending points
    weights[i] = 1.0 / ((1.0 - x * x) * pp * pp);
  }
}

double logistic_loss(double logit, double label) {
  // log(1+e^f) - y*f, stable for large |f|
  const double softplus = logit > 0.0 ? logit + std::log1p(std::exp(-logit))
                                      : std::log1p(std::exp(logit));
  return softplus - label * logit;
}

double adv_logistic_loss(const std::vector<double>& theta, const std::vector<double>& x,
                         const std::vector<double>& labels, double radius) {
  const std::size_t d = theta.size();
  const std::size_t n = labels.size();
  if (x.size() != n * d) throw DimensionError("adv_logistic_loss: data size mismatch");
  const double tn = norm2(theta.data(), d);
  if (tn == 0.0) throw ConfigError("adv_logistic_loss: theta is the zero vector (degenerate direction)");
  const double shift = radius * tn;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = dot(theta.data(), x.data() + i * d, d);
    total += std::max(logistic_loss(f - shift, labels[i]), logistic_loss(f + shift, labels[i]));
  }
  return total / (double)n;
}

double adv_logistic_loss_random_search(const std::vector<double>& theta,
                                       const std::vector<double>& x,
                                       const std::vector<double>& labels, double radius,
                                       int draws, Rng& rng) {
  const std::size_t d = theta.size();
  const std::size_t n = labels.size();
  double total = 0.0;
  std::vector<double> dir(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = dot(theta.data(), x.data() + i * d, d);
    double best = logistic_loss(f, labels[i]);
    for (int t = 0; t < draws; ++t) {
      double nn = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dir[j] = rng.normal();
        nn += dir[j] * dir[j];
      }
      nn = std::sqrt(nn);
      if (nn == 0.0) continue;
      const double shift = radius / nn * dot(theta.data(), dir.data(), d);
      best = std::max(best, logistic_loss(f + shift, labels[i]));
    }
    total += best;
  }
  return total / (double)n;
}

MixupLossResult mixup_logistic_loss(const std::vector<double>& theta,
                                    const std::vector<double>& x,
                                    const std::vector<double>& labels, double a, double b,
                                    MixupPairMode mode, int quad_nodes, int mc_samples,
                                    Rng* rng) {
  if (a <= 0.0 || b <= 0.0) throw ConfigError("mixup_logistic_loss: Beta parameters must be positive");
  const std::size_t d = theta.size();
  const std::size_t n = labels.size();
  if (x.size() != n * d) throw DimensionError("mixup_logistic_loss: data size mismatch");

  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = dot(theta.data(), x.data() + i * d, d);

  MixupLossResult out;
  if (mode == MixupPairMode::FullDoubleSum) {
    if (n > 200) throw ConfigError("mixup_logistic_loss: full double sum limited to n <= 200");
    if (quad_nodes < 64) quad_nodes = 64;
    std::vector<double> t, w;
    gauss_legendre_01(quad_nodes, t, w);
    double total = 0.0;
    for (int q = 0; q < quad_nodes; ++q) {
      const double lam = t[q];
      const double wq = w[q] * beta_pdf(lam, a, b);
      if (wq == 0.0) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double fm = lam * f[i] + (1.0 - lam) * f[j];
          const double ym = lam * labels[i] + (1.0 - lam) * labels[j];
          s += logistic_loss(fm, ym);
        }
      total += wq * s / (double)(n * n);
    }
    out.value = total;
    return out;
  }

  if (!rng) throw ContractError("mixup_logistic_loss: sampled mode needs an Rng");
  double sum = 0.0, sum_sq = 0.0;
  for (int t = 0; t < mc_samples; ++t) {
    const std::size_t i = (std::size_t)rng->uniform_int(n);
    const std::size_t j = (std::size_t)rng->uniform_int(n);
    const double lam = rng->beta(a, b);
    const double fm = lam * f[i] + (1.0 - lam) * f[j];
    const double ym = lam * labels[i] + (1.0 - lam) * labels[j];
    const double v = logistic_loss(fm, ym);
    sum += v;
    sum_sq += v * v;
  }
  out.value = sum / mc_samples;
  const double var = std::max(0.0, sum_sq / mc_samples - out.value * out.value);
  out.ci_halfwidth = 2.5758 * std::sqrt(var / mc_samples);  // 99% normal quantile
  return out;
}

std::optional<std::string> theta_membership_violation(const TheoryInstance& inst) {
  const std::size_t d = inst.d(), n = inst.n();
  for (std::size_t i = 0; i < n; ++i) {
    const double f = dot(inst.theta.data(), inst.x.data() + i * d, d);
    // y*f + (y-1)*f >= 0, i.e. the signed margin of a zero-training-error fit
    if (inst.y[i] * f + (inst.y[i] - 1.0) * f < 0.0) return "zero-training-error";
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double f = dot(inst.theta.data(), inst.x.data() + i * d, d);
    const double g = 1.0 / (1.0 + std::exp(-f));
    if (std::abs(inst.y_star[i] - g) > inst.closeness_k * std::abs(inst.y[i] - g) + 1e-12)
      return "teacher-closeness";
  }
  const double tn = norm2(inst.theta.data(), d);
  for (std::size_t i = 0; i < n; ++i) {
    const double xn = norm2(inst.x.data() + i * d, d);
    if (xn <= inst.c_x * std::sqrt((double)d)) return "c_x-norm-floor";
    const double c = std::abs(dot(inst.theta.data(), inst.x.data() + i * d, d)) / (tn * xn);
    if (c + 1e-12 < inst.big_r) return "R-cosine-floor";
  }
  return std::nullopt;
}

TheoremReport verify_theorem_4_2(const TheoryInstance& inst, int quad_nodes) {
  TheoremReport rep;
  const auto violation = theta_membership_violation(inst);

  const double radius = inst.epsilon * std::sqrt((double)inst.d());
  const double lhs_d = adv_logistic_loss(inst.theta, inst.x, inst.y, radius);
  const double lhs_dis = adv_logistic_loss(inst.theta, inst.x, inst.y_star, radius);
  rep.lhs = lhs_d + inst.weight_alpha * lhs_dis;

  const auto rhs_d = mixup_logistic_loss(inst.theta, inst.x, inst.y, inst.beta_a,
                                         inst.beta_b, MixupPairMode::FullDoubleSum, quad_nodes);
  const auto rhs_dis = mixup_logistic_loss(inst.theta, inst.x, inst.y_star, inst.beta_a,
                                           inst.beta_b, MixupPairMode::FullDoubleSum, quad_nodes);
  rep.rhs = rhs_d.value + inst.weight_alpha * rhs_dis.value;

  // quadrature error bound from node doubling
  const auto rhs_d2 = mixup_logistic_loss(inst.theta, inst.x, inst.y, inst.beta_a,
                                          inst.beta_b, MixupPairMode::FullDoubleSum,
                                          2 * quad_nodes);
  const auto rhs_dis2 = mixup_logistic_loss(inst.theta, inst.x, inst.y_star, inst.beta_a,
                                            inst.beta_b, MixupPairMode::FullDoubleSum,
                                            2 * quad_nodes);
  const double rhs_refined = rhs_d2.value + inst.weight_alpha * rhs_dis2.value;
  rep.tolerance = std::abs(rep.rhs - rhs_refined) + 1e-8;

  rep.margin = rep.rhs - rep.lhs;
  if (violation) {
    rep.rejected = true;
    rep.violation = *violation;
    rep.holds = false;  // raw inequality reported without a verdict
    return rep;
  }
  rep.holds = rep.lhs <= rep.rhs + rep.tolerance;
  return rep;
}

TheoryInstance generate_instance(Rng& rng, int d, int n, double beta_a, double beta_b) {
  if (d < 1 || n < 2) throw ConfigError("generate_instance: need d >= 1 and n >= 2");
  TheoryInstance inst;
  inst.beta_a = beta_a;
  inst.beta_b = beta_b;
  inst.theta.resize((std::size_t)d);
  double tn = 0.0;
  for (double& v : inst.theta) {
    v = rng.normal();
    tn += v * v;
  }
  tn = std::sqrt(tn);
  const double scale = rng.uniform(0.5, 3.0);
  for (double& v : inst.theta) v = v / tn * scale;

  const double cos_floor = rng.uniform(0.15, 0.4);
  const std::size_t n_pos = (std::size_t)n / 2;  // both classes present
  inst.x.resize((std::size_t)n * d);
  inst.y.resize((std::size_t)n);
  std::vector<double> cand((std::size_t)d);
  const double theta_norm = norm2(inst.theta.data(), (std::size_t)d);
  for (std::size_t i = 0; i < (std::size_t)n; ++i) {
    for (;;) {
      double cn = 0.0;
      for (auto& v : cand) {
        v = rng.normal();
        cn += v * v;
      }
      cn = std::sqrt(cn);
      if (cn < 1e-6) continue;
      const double proj = dot(inst.theta.data(), cand.data(), (std::size_t)d);
      if (std::abs(proj) / (cn * theta_norm) < cos_floor) continue;
      const bool want_pos = i < n_pos;
      const bool is_pos = proj > 0.0;
      if (want_pos != is_pos)
        for (auto& v : cand) v = -v;
      std::copy(cand.begin(), cand.end(), inst.x.begin() + (long)(i * (std::size_t)d));
      inst.y[i] = want_pos ? 1.0 : 0.0;
      break;
    }
  }

  inst.closeness_k = rng.uniform(0.05, 0.9);
  inst.weight_alpha = rng.uniform(0.0, 1.0);
  inst.y_star.resize((std::size_t)n);
  for (std::size_t i = 0; i < (std::size_t)n; ++i) {
    const double f = dot(inst.theta.data(), inst.x.data() + i * (std::size_t)d, (std::size_t)d);
    const double g = 1.0 / (1.0 + std::exp(-f));
    const double band = inst.closeness_k * std::abs(inst.y[i] - g);
    const double y_star = g + rng.uniform(-1.0, 1.0) * band;
    inst.y_star[i] = std::clamp(y_star, 1e-9, 1.0 - 1e-9);
    if (std::abs(inst.y_star[i] - g) > band) inst.y_star[i] = g;
  }

  double min_norm = 1e300, min_cos = 1.0;
  for (std::size_t i = 0; i < (std::size_t)n; ++i) {
    const double xn = norm2(inst.x.data() + i * (std::size_t)d, (std::size_t)d);
    min_norm = std::min(min_norm, xn);
    const double f = dot(inst.theta.data(), inst.x.data() + i * (std::size_t)d, (std::size_t)d);
    min_cos = std::min(min_cos, std::abs(f) / (xn * theta_norm));
  }
  inst.c_x = 0.999 * min_norm / std::sqrt((double)d);
  inst.big_r = min_cos;
  MixtureLambda tilde{beta_a, beta_b};
  inst.epsilon = (1.0 - inst.weight_alpha * inst.closeness_k) / (1.0 + inst.closeness_k) *
                 inst.c_x * inst.big_r * tilde.mean_one_minus_lambda();
  return inst;
}

LinearizationReport check_relu_linearization(const BlockCnn& model, const Tensor& input) {
  if (!model.spec().bias_free())
    throw ContractError("check_relu_linearization: model has biases");

  LinearizationReport rep;
  const int classes = model.classes();
  const std::size_t n = input.dim(0);

  for (int k = 0; k < classes; ++k) {
    Tensor x = input.detached();
    x.set_requires_grad(true);
    double fk_sum = 0.0;
    {
      Tape tape;
      ForwardResult r = model.forward(x);
      // sum of logit k over the batch; gradients stay per-sample separable
      Tensor mask(r.logits.shape());
      auto md = mask.data();
      for (std::size_t i = 0; i < n; ++i) md[i * (std::size_t)classes + (std::size_t)k] = 1.0;
      Tensor fk = sum(mul(mask, r.logits));
      fk_sum = fk.value();
      tape.backward(fk);
      auto logits = r.logits.data();
      auto gx = x.grad();
      auto xd = x.data();
      const std::size_t row = input.numel() / n;
      for (std::size_t i = 0; i < n; ++i) {
        const double f = logits[i * (std::size_t)classes + (std::size_t)k];
        const double inner = dot(gx.data() + i * row, xd.data() + i * row, row);
        const double rel = std::abs(f - inner) / (std::abs(f) + 1e-12);
        rep.max_rel_discrepancy = std::max(rep.max_rel_discrepancy, rel);
      }
    }
    model.zero_grads();
    (void)fk_sum;
  }

  // positive homogeneity: f(2x) = 2 f(x)
  {
    NoGradScope ng;
    ForwardResult r1 = model.forward(input);
    Tensor x2(input.shape());
    auto a = input.data();
    auto b = x2.data();
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = 2.0 * a[i];
    ForwardResult r2 = model.forward(x2);
    auto l1 = r1.logits.data();
    auto l2 = r2.logits.data();
    for (std::size_t i = 0; i < l1.size(); ++i) {
      const double rel = std::abs(l2[i] - 2.0 * l1[i]) / (std::abs(2.0 * l1[i]) + 1e-12);
      rep.max_homogeneity_error = std::max(rep.max_homogeneity_error, rel);
    }
  }
  return rep;
}

void write_theory_csv(const std::string& path, const std::vector<TheoryReportRow>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("write_theory_csv: cannot open " + path);
  f << "d,n,a,b,alpha,k,c_x,R,epsilon,lhs,rhs,margin,holds\n";
  f.precision(17);
  for (const auto& r : rows)
    f << r.d << "," << r.n << "," << r.a << "," << r.b << "," << r.alpha << "," << r.k << ","
      << r.c_x << "," << r.big_r << "," << r.epsilon << "," << r.lhs << "," << r.rhs << ","
      << r.margin << "," << (r.holds ? 1 : 0) << "\n";
}

}  // namespace mixacm
