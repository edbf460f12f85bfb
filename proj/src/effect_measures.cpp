#include "glmprog/effect_measures.hpp"

#include <algorithm>
#include <cmath>

#include "glmprog/errors.hpp"

namespace glmprog {

EffectMeasure::EffectMeasure(EffectKind kind, std::string name, EvalFn eval, GradFn grad,
                             double null_value, DomainFn domain)
    : kind_(kind),
      name_(std::move(name)),
      eval_(std::move(eval)),
      grad_(std::move(grad)),
      null_value_(null_value),
      domain_(std::move(domain)) {}

EffectMeasure EffectMeasure::difference() {
  return EffectMeasure(
      EffectKind::difference, "difference", [](double p1, double p0) { return p1 - p0; },
      [](double, double) { return EffectGradient{1.0, -1.0}; }, 0.0,
      [](double p1, double p0) { return std::isfinite(p1) && std::isfinite(p0); });
}

EffectMeasure EffectMeasure::ratio() {
  return EffectMeasure(
      EffectKind::ratio, "ratio", [](double p1, double p0) { return p1 / p0; },
      [](double p1, double p0) { return EffectGradient{1.0 / p0, -p1 / (p0 * p0)}; }, 1.0,
      [](double p1, double p0) { return std::isfinite(p1) && std::isfinite(p0) && p0 > 0.0; });
}

EffectMeasure EffectMeasure::odds_ratio() {
  return EffectMeasure(
      EffectKind::odds_ratio, "odds-ratio",
      [](double p1, double p0) { return (p1 / (1.0 - p1)) / (p0 / (1.0 - p0)); },
      [](double p1, double p0) {
        const double odds0 = p0 / (1.0 - p0);
        const double odds1 = p1 / (1.0 - p1);
        return EffectGradient{1.0 / ((1.0 - p1) * (1.0 - p1) * odds0), -odds1 / (p0 * p0)};
      },
      1.0, [](double p1, double p0) { return p1 > 0.0 && p1 < 1.0 && p0 > 0.0 && p0 < 1.0; });
}

EffectMeasure EffectMeasure::custom(std::string name, EvalFn evaluate, GradFn gradient,
                                    double null_value, DomainFn domain) {
  EffectMeasure m(EffectKind::custom, std::move(name), std::move(evaluate), std::move(gradient),
                  null_value, std::move(domain));
  int checked = 0;
  for (const auto& [p1, p0] : square_grid(0.05, 0.95, 10)) {
    if (!m.domain_(p1, p0)) continue;
    const double h = 1e-5;
    if (!m.domain_(p1 + h, p0) || !m.domain_(p1 - h, p0) || !m.domain_(p1, p0 + h) ||
        !m.domain_(p1, p0 - h)) {
      continue;
    }
    const auto g = m.grad_(p1, p0);
    const double fd1 = (m.eval_(p1 + h, p0) - m.eval_(p1 - h, p0)) / (2 * h);
    const double fd0 = (m.eval_(p1, p0 + h) - m.eval_(p1, p0 - h)) / (2 * h);
    const auto close = [](double a, double b) {
      return std::abs(a - b) <= 1e-5 * std::max(1.0, std::abs(b));
    };
    if (!close(g.r1, fd1) || !close(g.r0, fd0)) {
      throw DomainError("custom effect '" + m.name_ +
                        "': analytic gradient disagrees with finite differences");
    }
    if (m.domain_(p1, p1) && std::abs(m.eval_(p1, p1) - null_value) > 1e-9) {
      throw DomainError("custom effect '" + m.name_ + "': r(psi, psi) differs from null value");
    }
    ++checked;
  }
  if (checked == 0) {
    throw DomainError("custom effect '" + m.name_ + "': no default grid point in its domain");
  }
  return m;
}

EffectMeasure EffectMeasure::from_name(std::string_view name) {
  if (name == "difference") return difference();
  if (name == "ratio") return ratio();
  if (name == "odds-ratio") return odds_ratio();
  throw DomainError("unknown effect measure '" + std::string(name) + "'");
}

bool EffectMeasure::in_domain(double psi1, double psi0) const { return domain_(psi1, psi0); }

void EffectMeasure::require_domain(double psi1, double psi0) const {
  if (!domain_(psi1, psi0)) {
    throw DomainError("(psi1=" + std::to_string(psi1) + ", psi0=" + std::to_string(psi0) +
                      ") is outside the domain of the " + name_ + " effect");
  }
}

double EffectMeasure::evaluate(double psi1, double psi0) const {
  require_domain(psi1, psi0);
  return eval_(psi1, psi0);
}

EffectGradient EffectMeasure::gradient(double psi1, double psi0) const {
  require_domain(psi1, psi0);
  return grad_(psi1, psi0);
}

double solve_psi1(const EffectMeasure& effect, double psi0, double target) {
  const auto fail = [&](const std::string& why) {
    return NoSolutionError("no psi1 attains " + effect.name() + " = " + std::to_string(target) +
                           " at psi0 = " + std::to_string(psi0) + ": " + why);
  };
  switch (effect.kind()) {
    case EffectKind::difference:
      return psi0 + target;
    case EffectKind::ratio:
      if (!(psi0 > 0.0)) throw fail("ratio requires psi0 > 0");
      return target * psi0;
    case EffectKind::odds_ratio: {
      if (!(psi0 > 0.0 && psi0 < 1.0)) throw fail("odds ratio requires 0 < psi0 < 1");
      if (!(target > 0.0) || !std::isfinite(target)) throw fail("odds ratio must be positive");
      const double odds1 = target * psi0 / (1.0 - psi0);
      return odds1 / (1.0 + odds1);
    }
    case EffectKind::custom:
      break;
  }

  // Bisection on psi1. The bracket comes from a geometric ladder of probe
  // points on both sides of psi0, restricted to the domain.
  const auto f = [&](double p1) { return effect.evaluate(p1, psi0) - target; };
  std::vector<double> probes;
  const double base = std::max(1e-3, 0.1 * std::abs(psi0));
  if (effect.in_domain(psi0, psi0)) probes.push_back(psi0);
  for (int k = 0; k < 64; ++k) {
    const double step = base * std::ldexp(1.0, k) * 1e-3;
    for (double p : {psi0 - step, psi0 + step}) {
      if (std::isfinite(p) && effect.in_domain(p, psi0)) probes.push_back(p);
    }
  }
  std::sort(probes.begin(), probes.end());
  double lo = 0.0, hi = 0.0, flo = 0.0, fhi = 0.0;
  bool bracketed = false;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const double v = f(probes[i]);
    if (v == 0.0) return probes[i];
    if (i > 0 && std::signbit(v) != std::signbit(fhi)) {
      lo = probes[i - 1], flo = fhi, hi = probes[i], fhi = v;
      bracketed = true;
      break;
    }
    hi = probes[i], fhi = v;
  }
  if (!bracketed) throw fail("target not bracketed inside the domain");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (std::abs(fm) <= 1e-10) return mid;
    if (std::signbit(fm) == std::signbit(flo)) {
      lo = mid, flo = fm;
    } else {
      hi = mid, fhi = fm;
    }
  }
  const double best = std::abs(flo) < std::abs(fhi) ? lo : hi;
  if (std::abs(f(best)) <= 1e-10) return best;
  throw fail("bisection did not reach 1e-10 within 200 iterations");
}

MonotonicityReport check_monotonicity(const EffectMeasure& effect,
                                      std::span<const std::pair<double, double>> grid) {
  MonotonicityReport report;
  for (const auto& [p1, p0] : grid) {
    if (!effect.in_domain(p1, p0)) continue;
    const auto g = effect.gradient(p1, p0);
    if (g.r1 < 0.0 || g.r0 > 0.0) report.violations.push_back({p1, p0, g});
  }
  return report;
}

std::vector<std::pair<double, double>> square_grid(double lo, double hi, int steps) {
  std::vector<std::pair<double, double>> out;
  for (int i = 0; i < steps; ++i) {
    for (int j = 0; j < steps; ++j) {
      const double a = lo + (hi - lo) * i / std::max(1, steps - 1);
      const double b = lo + (hi - lo) * j / std::max(1, steps - 1);
      out.emplace_back(a, b);
    }
  }
  return out;
}

}  // namespace glmprog
