#pragma once

// Marginal effect contrasts r(psi1, psi0) of the two counterfactual means.

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace glmprog {

enum class EffectKind { difference, ratio, odds_ratio, custom };

struct EffectGradient {
  double r1 = 0.0;  // d r / d psi1
  double r0 = 0.0;  // d r / d psi0
};

class EffectMeasure {
 public:
  using EvalFn = std::function<double(double psi1, double psi0)>;
  using GradFn = std::function<EffectGradient(double psi1, double psi0)>;
  using DomainFn = std::function<bool(double psi1, double psi0)>;

  static EffectMeasure difference();
  static EffectMeasure ratio();
  static EffectMeasure odds_ratio();

  // Registers a user contrast. The analytic gradient is compared with
  // central differences and r(psi, psi) with the null value on a default
  // grid restricted to `domain`; disagreement throws DomainError.
  // Monotonicity is deliberately not required here (see check_monotonicity).
  static EffectMeasure custom(std::string name, EvalFn evaluate, GradFn gradient,
                              double null_value, DomainFn domain);

  // "difference", "ratio" or "odds-ratio".
  static EffectMeasure from_name(std::string_view name);

  EffectKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double null_value() const { return null_value_; }

  bool in_domain(double psi1, double psi0) const;
  double evaluate(double psi1, double psi0) const;
  EffectGradient gradient(double psi1, double psi0) const;

 private:
  EffectMeasure(EffectKind kind, std::string name, EvalFn eval, GradFn grad, double null_value,
                DomainFn domain);
  void require_domain(double psi1, double psi0) const;

  EffectKind kind_;
  std::string name_;
  EvalFn eval_;
  GradFn grad_;
  double null_value_;
  DomainFn domain_;
};

// Counterfactual treated mean that attains `target` given psi0. Closed form
// for the built-ins, bisection (1e-10 on the effect scale, at most 200
// iterations) for custom measures. Throws NoSolutionError.
double solve_psi1(const EffectMeasure& effect, double psi0, double target);

struct MonotonicityViolation {
  double psi1;
  double psi0;
  EffectGradient gradient;
};

struct MonotonicityReport {
  std::vector<MonotonicityViolation> violations;
  bool monotone() const { return violations.empty(); }
};

// Flags every grid point where r1' < 0 or r0' > 0. Points outside the
// domain are skipped.
MonotonicityReport check_monotonicity(const EffectMeasure& effect,
                                      std::span<const std::pair<double, double>> grid);

// Square grid of (psi1, psi0) pairs over [lo, hi]^2 with `steps` points per axis.
std::vector<std::pair<double, double>> square_grid(double lo, double hi, int steps);

}  // namespace glmprog
