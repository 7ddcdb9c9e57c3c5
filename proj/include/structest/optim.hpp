#pragma once

#include <algorithm>
#include <functional>
#include <sstream>
#include <utility>
#include <vector>

#include "structest/common.hpp"
#include "structest/rng.hpp"

namespace structest {

// A function to maximize. eval must be deterministic given the vector and
// return a finite value or -inf as an explicit rejection sentinel.
struct Objective {
  std::function<double(const Vector&)> eval;
  int dim = 0;
};

// Per-coordinate reparameterization onto the unconstrained real line, so the
// global optimizers can search freely while market sizes stay positive and
// shares stay inside (0,1).
struct ParamTransform {
  enum class Kind { identity, log_positive, logit_unit_interval };

  struct Coord {
    Kind kind = Kind::identity;
    double lo = 0.0;  // log_positive: lower bound; logit: interval [lo, hi]
    double hi = 1.0;
  };

  std::vector<Coord> coords;

  static ParamTransform identity(int dim) {
    ParamTransform t;
    t.coords.assign(dim, Coord{});
    return t;
  }

  int dim() const { return static_cast<int>(coords.size()); }

  // constrained -> unconstrained
  Vector forward(const Vector& x) const {
    require(x.size() == dim(), "transform: dim mismatch");
    Vector u(x.size());
    for (int i = 0; i < x.size(); ++i) {
      const auto& c = coords[i];
      switch (c.kind) {
        case Kind::identity: u(i) = x(i); break;
        case Kind::log_positive: u(i) = std::log(x(i) - c.lo); break;
        case Kind::logit_unit_interval:
          u(i) = std::log((x(i) - c.lo) / (c.hi - x(i)));
          break;
      }
    }
    return u;
  }

  // unconstrained -> constrained
  Vector inverse(const Vector& u) const {
    require(u.size() == dim(), "transform: dim mismatch");
    Vector x(u.size());
    for (int i = 0; i < u.size(); ++i) {
      const auto& c = coords[i];
      switch (c.kind) {
        case Kind::identity: x(i) = u(i); break;
        case Kind::log_positive: x(i) = c.lo + std::exp(u(i)); break;
        case Kind::logit_unit_interval:
          x(i) = c.lo + (c.hi - c.lo) / (1.0 + std::exp(-u(i)));
          break;
      }
    }
    return x;
  }

  // Objective over the unconstrained space.
  Objective wrap(const Objective& obj) const {
    require(obj.dim == dim(), "transform: objective dim mismatch");
    auto self = *this;
    return Objective{[self, obj](const Vector& u) { return obj.eval(self.inverse(u)); },
                     obj.dim};
  }
};

struct SAConfig {
  double initial_temperature = 1.0;
  double cooling_factor = 0.95;   // in (0,1)
  int steps_per_temperature = 50;
  double proposal_scale = 1.0;    // step sd = proposal_scale * current T
  long max_evals = 10000;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct GAConfig {
  int population = 60;
  int generations = 300;
  double crossover_rate = 0.7;
  double mutation_scale = 0.1;
  int elitism = 1;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct MCEMConfig {
  double tolerance = 1e-8;
  int max_iterations = 2000;
  int monte_carlo_draws = 100;
};

struct OptimResult {
  Vector x;
  double value = kNegInf;
  std::vector<double> trace;  // best-so-far per block/generation
  bool warning = false;       // SA: all proposals non-finite; GA: collapse
  long evals = 0;
};

// Simulated annealing with geometric cooling and explicit best tracking:
// intermediate moves may worsen, the returned point never does.
inline OptimResult simulated_annealing(const Objective& obj, const Vector& x0,
                                       const SAConfig& cfg) {
  require(cfg.cooling_factor > 0.0 && cfg.cooling_factor < 1.0,
          "sa: cooling_factor must lie in (0,1)");
  require(cfg.steps_per_temperature >= 1 && cfg.max_evals >= 1, "sa: counts >= 1");
  require(cfg.initial_temperature > 0.0, "sa: initial temperature > 0");
  require(x0.size() == obj.dim, "sa: x0 dim mismatch");
  double f0 = obj.eval(x0);
  require(std::isfinite(f0), "sa: objective must be finite at x0");

  Rng rng(cfg.seed);
  OptimResult res;
  res.x = x0;
  res.value = f0;
  Vector current = x0;
  double f_current = f0;
  double temp = cfg.initial_temperature;
  long evals = 0;
  bool any_finite = false;

  while (evals < cfg.max_evals) {
    for (int s = 0; s < cfg.steps_per_temperature && evals < cfg.max_evals; ++s) {
      Vector prop = current;
      double sd = cfg.proposal_scale * temp;
      for (int i = 0; i < prop.size(); ++i) prop(i) += rng.normal(0.0, sd);
      double f_prop = obj.eval(prop);
      ++evals;
      if (!std::isfinite(f_prop)) continue;
      any_finite = true;
      double delta = f_prop - f_current;
      if (delta > 0.0 || rng.uniform() < std::exp(delta / temp)) {
        current = prop;
        f_current = f_prop;
        if (f_current > res.value) {
          res.value = f_current;
          res.x = current;
        }
      }
    }
    res.trace.push_back(res.value);
    temp *= cfg.cooling_factor;
  }
  res.evals = evals;
  res.warning = !any_finite;
  return res;
}

// Genetic search: tournament selection of size 2, uniform crossover, Gaussian
// mutation. Elitism >= 1 makes the best-fitness trace monotone.
inline OptimResult genetic_optimize(const Objective& obj,
                                    const std::vector<Vector>& init_population,
                                    const GAConfig& cfg) {
  require(!init_population.empty(), "ga: init population must be nonempty");
  require(cfg.population >= 2, "ga: population >= 2");
  require(cfg.elitism >= 0 && cfg.elitism < cfg.population,
          "ga: elitism must be below population size");
  require(cfg.crossover_rate >= 0.0 && cfg.crossover_rate <= 1.0,
          "ga: crossover_rate in [0,1]");
  for (const auto& x : init_population)
    require(x.size() == obj.dim, "ga: member dim mismatch");

  Rng master(cfg.seed);
  const int dim = obj.dim;
  const int pop_n = cfg.population;

  std::vector<Vector> pop(pop_n);
  for (int i = 0; i < pop_n; ++i)
    pop[i] = init_population[i % init_population.size()];

  std::vector<double> fit(pop_n);
  auto evaluate = [&](const std::vector<Vector>& members, std::vector<double>& out) {
    parallel_for(members.size(), cfg.threads,
                 [&](std::size_t i) { out[i] = obj.eval(members[i]); });
  };
  evaluate(pop, fit);
  for (double f : fit) require(std::isfinite(f), "ga: init member not finite");

  OptimResult res;
  res.evals = pop_n;
  auto record_best = [&]() {
    auto it = std::max_element(fit.begin(), fit.end());
    int idx = static_cast<int>(it - fit.begin());
    if (*it > res.value) {
      res.value = *it;
      res.x = pop[idx];
    }
    res.trace.push_back(res.value);
  };
  record_best();

  for (int gen = 0; gen < cfg.generations; ++gen) {
    // Collapse check: identical population with no mutation cannot move.
    if (cfg.mutation_scale == 0.0) {
      bool all_same = true;
      for (int i = 1; i < pop_n && all_same; ++i) all_same = (pop[i] == pop[0]);
      if (all_same) {
        res.warning = true;
        break;
      }
    }

    std::vector<int> order(pop_n);
    for (int i = 0; i < pop_n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fit[a] > fit[b]; });

    std::vector<Vector> next(pop_n);
    int filled = 0;
    for (; filled < cfg.elitism; ++filled) next[filled] = pop[order[filled]];

    // Selection/crossover decisions come from the master stream; mutation noise
    // from per-child substreams so parallel evaluation stays deterministic.
    std::vector<Vector> children(pop_n - filled);
    for (std::size_t c = 0; c < children.size(); ++c) {
      auto tournament = [&]() {
        int a = master.uniform_int(pop_n);
        int b = master.uniform_int(pop_n);
        return fit[a] >= fit[b] ? a : b;
      };
      const Vector& pa = pop[tournament()];
      const Vector& pb = pop[tournament()];
      Vector child = pa;
      if (master.uniform() < cfg.crossover_rate) {
        for (int d = 0; d < dim; ++d)
          if (master.uniform() < 0.5) child(d) = pb(d);
      }
      Rng mut = Rng::stream(cfg.seed + 0x6d757461u, (static_cast<std::uint64_t>(gen) << 20) + c);
      for (int d = 0; d < dim; ++d) child(d) += mut.normal(0.0, cfg.mutation_scale);
      children[c] = child;
    }

    std::vector<double> child_fit(children.size());
    evaluate(children, child_fit);
    res.evals += static_cast<long>(children.size());
    for (std::size_t c = 0; c < children.size(); ++c) {
      double f = child_fit[c];
      next[filled + static_cast<int>(c)] = children[c];
      fit[filled + static_cast<int>(c)] = std::isfinite(f) ? f : kNegInf;
    }
    for (int e = 0; e < cfg.elitism; ++e) fit[e] = obj.eval(next[e]);
    pop = std::move(next);
    record_best();
  }
  return res;
}

// Bracketed 1-D maximizer: coarse scan to isolate the best bucket, then
// golden-section refinement; endpoints compete with the interior solution.
inline double numeric_argmax_1d(const std::function<double(double)>& f, double lo,
                                double hi, double tol = 1e-8) {
  require(lo < hi, "argmax1d: lo < hi required");
  double flo = f(lo), fhi = f(hi);
  require(std::isfinite(flo) && std::isfinite(fhi),
          "argmax1d: f must be finite at the bracket endpoints");

  const int kScan = 64;
  double best_x = flo >= fhi ? lo : hi;
  double best_f = std::max(flo, fhi);
  int best_idx = -1;
  for (int attempt = 0; attempt < 4; ++attempt) {
    bool saw_nonfinite = false;
    for (int i = 1; i < kScan; ++i) {
      double x = lo + (hi - lo) * i / kScan;
      double fx = f(x);
      if (!std::isfinite(fx)) {
        saw_nonfinite = true;
        continue;
      }
      if (fx > best_f) {
        best_f = fx;
        best_x = x;
        best_idx = i;
      }
    }
    if (!saw_nonfinite || best_idx >= 0) break;
    // Shrink toward the better endpoint and retry.
    double mid = 0.5 * (lo + hi);
    if (flo >= fhi) hi = mid; else lo = mid;
    if (attempt == 3)
      throw std::runtime_error("argmax1d: f non-finite across the bracket");
  }

  double a = best_idx >= 1 ? lo + (hi - lo) * (best_idx - 1) / kScan
                           : std::max(lo, best_x - (hi - lo) / kScan);
  double b = best_idx >= 0 ? std::min(hi, lo + (hi - lo) * (best_idx + 1) / kScan)
                           : std::min(hi, best_x + (hi - lo) / kScan);

  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol * (1.0 + std::abs(a) + std::abs(b))) {
    if (!std::isfinite(f1)) f1 = kNegInf;
    if (!std::isfinite(f2)) f2 = kNegInf;
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = f(x1);
    }
  }
  double xm = 0.5 * (a + b);
  double fm = f(xm);
  if (std::isfinite(fm) && fm >= best_f) return xm;
  return best_x;
}

struct McemResult {
  Vector params;
  std::vector<double> objective_trace;  // expected objective after each M-step
  int iterations = 0;
  bool converged = false;
};

// Monte Carlo (Generalized) EM driver. The E-step builds the expected
// objective at the current parameters (using common random numbers so the
// GEM improvement property is testable); the M-step improves it.
inline McemResult mcem_drive(
    const std::function<Objective(const Vector&)>& e_step,
    const std::function<std::pair<Vector, double>(const Objective&, const Vector&)>&
        m_step_optimizer,
    const MCEMConfig& cfg, const Vector& params0) {
  require(cfg.tolerance > 0.0, "mcem: tolerance > 0");
  require(cfg.max_iterations >= 1, "mcem: max_iterations >= 1");

  McemResult res;
  res.params = params0;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    Objective expected;
    try {
      expected = e_step(res.params);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "mcem: E-step failed at iteration " << it << " with params ["
          << res.params.transpose() << "]: " << e.what();
      throw std::runtime_error(msg.str());
    }
    double f_current = expected.eval(res.params);
    auto [candidate, f_candidate] = m_step_optimizer(expected, res.params);
    // Generalized EM: keep the move only if it improves the expected objective.
    Vector next = f_candidate >= f_current ? candidate : res.params;
    double f_next = std::max(f_candidate, f_current);
    res.objective_trace.push_back(f_next);
    double step = (next - res.params).norm();
    res.params = next;
    res.iterations = it + 1;
    if (step < cfg.tolerance) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace structest
