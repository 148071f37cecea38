#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mixacm/model.hpp"
#include "mixacm/rng.hpp"

namespace mixacm {

/// Binary logistic-regression instance for the mixup robustness bound. Data
/// rows are x_i in R^d with hard labels y in {0,1} and teacher soft labels
/// y* in (0,1). Membership constraints (zero training error, teacher
/// closeness) define the parameter set the bound quantifies over.
struct TheoryInstance {
  std::vector<double> theta;     // d
  std::vector<double> x;         // n*d row-major
  std::vector<double> y;         // n, in {0,1}
  std::vector<double> y_star;    // n, teacher soft labels in (0,1)
  double weight_alpha = 0.0;     // distillation weight
  double closeness_k = 0.5;      // teacher-closeness constant
  double beta_a = 1.0;           // mixup Beta(a,b)
  double beta_b = 1.0;
  double c_x = 0.0;              // ||x_i||_2 > c_x * sqrt(d) for all i
  double big_r = 0.0;            // min_i |cos(theta, x_i)|
  double epsilon = 0.0;          // ((1-alpha*k)/(1+k)) * c_x * R * E~[1-lambda]

  std::size_t n() const { return y.size(); }
  std::size_t d() const { return theta.size(); }
};

/// Beta mixture arising in the bound's epsilon:
/// (a/(a+b)) Beta(a+1,b) + (b/(a+b)) Beta(b+1,a).
struct MixtureLambda {
  double a = 1.0, b = 1.0;

  double pdf(double lambda) const;
  /// Analytic E[1-lambda] = 2ab / ((a+b)(a+b+1)).
  double mean_one_minus_lambda() const;
  /// Quadrature integral of the density over [0,1] (should be 1).
  double total_mass(int nodes = 256) const;
};

double beta_pdf(double lambda, double a, double b);

/// Gauss-Legendre nodes/weights on [0,1].
void gauss_legendre_01(int n, std::vector<double>& nodes, std::vector<double>& weights);

double logistic_loss(double logit, double label);

/// (1/n) sum_i max_{||delta||_2 <= radius} L(theta.(x_i+delta), y_i) in closed
/// form: logistic loss is convex in the logit, so the inner max sits at one of
/// the shifted logits f_i -+ radius*||theta||_2.
double adv_logistic_loss(const std::vector<double>& theta, const std::vector<double>& x,
                         const std::vector<double>& labels, double radius);

/// Random-search lower oracle for the closed form.
double adv_logistic_loss_random_search(const std::vector<double>& theta,
                                       const std::vector<double>& x,
                                       const std::vector<double>& labels, double radius,
                                       int draws, Rng& rng);

enum class MixupPairMode { FullDoubleSum, Sampled };

struct MixupLossResult {
  double value = 0.0;
  double ci_halfwidth = 0.0;  // 99% confidence half-width in sampled mode
};

/// Full mode: exact (1/n^2) double sum with Gauss-Legendre quadrature over
/// lambda ~ Beta(a,b). Sampled mode: Monte Carlo over (i, j, lambda).
MixupLossResult mixup_logistic_loss(const std::vector<double>& theta,
                                    const std::vector<double>& x,
                                    const std::vector<double>& labels, double a, double b,
                                    MixupPairMode mode, int quad_nodes = 64,
                                    int mc_samples = 100000, Rng* rng = nullptr);

struct TheoremReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;  // rhs - lhs
  double tolerance = 0.0;
  bool holds = false;
  bool rejected = false;
  std::string violation;  // which membership inequality failed
};

/// Returns the violated constraint name, or nullopt for members.
std::optional<std::string> theta_membership_violation(const TheoryInstance& inst);

/// lhs = adv loss on D plus alpha times adv loss on D_dis at l2 radius
/// epsilon*sqrt(d); rhs = the matching mixup losses under Beta(a,b).
/// Instances outside the membership set are reported without a verdict.
TheoremReport verify_theorem_4_2(const TheoryInstance& inst, int quad_nodes = 64);

/// Random member of the constraint set: theta on a scaled sphere, two-class
/// data with a minimum |cos(theta, x)| enforced by rejection, soft labels
/// within the closeness band.
TheoryInstance generate_instance(Rng& rng, int d, int n, double beta_a, double beta_b);

struct LinearizationReport {
  double max_rel_discrepancy = 0.0;  // |f_k - <grad f_k, x>| / (|f_k| + 1e-12)
  double max_homogeneity_error = 0.0;  // relative error of f(2x) = 2 f(x)
};

/// Checks f(x) = <grad_x f(x), x> per class and positive homogeneity for a
/// bias-free ReLU network.
LinearizationReport check_relu_linearization(const BlockCnn& model, const Tensor& input);

struct TheoryReportRow {
  int d, n;
  double a, b, alpha, k, c_x, big_r, epsilon, lhs, rhs, margin;
  bool holds;
};
void write_theory_csv(const std::string& path, const std::vector<TheoryReportRow>& rows);

}  // namespace mixacm
