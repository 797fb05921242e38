#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "shadowtree/utility.hpp"

namespace shadowtree {

// Shared concave-programming engine: projected gradient ascent over x >= 0
// with backtracking line search, warm-started through a log-barrier
// continuation in mu. Objectives provide a feasibility retraction that
// truncates a trial point back into their polytope (state-dependent trade
// budgets), and report -infinity outside the hard feasible set.
struct SolverOptions {
  double mu0 = 1.0;
  double mu_shrink = 0.2;
  double mu_min = 1e-10;
  double inner_tol = 1e-10;   // scaled by (1 + |value|), per barrier stage
  double final_tol = 1e-12;   // scaled, mu = 0 polish
  int max_inner_iterations = 300;
  int max_final_iterations = 8000;
};

struct EngineReport {
  double value = kMinusInf;
  int iterations = 0;
  double stationarity = std::numeric_limits<double>::infinity();
  bool stalled = false;
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Feasible movement available from x along g (unit step, retracted).
template <class Obj>
double feasible_step_norm(const Obj& obj, const std::vector<double>& x,
                          const std::vector<double>& g,
                          std::vector<double>& scratch) {
  scratch.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    scratch[i] = std::max(x[i] + g[i], 0.0);
  obj.retract(scratch);
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    m = std::max(m, std::abs(scratch[i] - x[i]));
  return m;
}

// One projected-ascent phase at fixed barrier weight mu.
template <class Obj>
EngineReport ascend(const Obj& obj, std::vector<double>& x, double mu,
                    double tol, int max_iterations, int& total_iterations) {
  const std::size_t n = x.size();
  EngineReport rep;
  std::vector<double> g(n), g_prev(n), x_prev(n), trial(n), scratch(n);

  double f = obj.value_and_gradient(x, mu, g);
  if (!std::isfinite(f)) {
    rep.value = f;
    rep.stalled = true;
    return rep;
  }

  double alpha = 1.0;
  bool have_history = false;

  for (int it = 0; it < max_iterations; ++it) {
    rep.stationarity = feasible_step_norm(obj, x, g, scratch);
    if (rep.stationarity <= tol * (1.0 + std::abs(f))) break;

    if (have_history) {
      // Spectral (Barzilai-Borwein) step for the ascent direction.
      double sy = 0.0, ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double s = x[i] - x_prev[i];
        ss += s * s;
        sy += s * (g[i] - g_prev[i]);
      }
      if (sy < 0.0 && ss > 0.0)
        alpha = std::clamp(ss / (-sy), 1e-14, 1e14);
      else
        alpha = std::min(alpha * 4.0, 1e14);
    }

    bool accepted = false;
    for (int ls = 0; ls < 90; ++ls) {
      double moved = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        trial[i] = std::max(x[i] + alpha * g[i], 0.0);
      obj.retract(trial);
      for (std::size_t i = 0; i < n; ++i)
        moved = std::max(moved, std::abs(trial[i] - x[i]));
      if (moved == 0.0) break;
      double gain = 0.0;
      for (std::size_t i = 0; i < n; ++i) gain += g[i] * (trial[i] - x[i]);
      double f_trial = obj.value(trial, mu);
      if (std::isfinite(f_trial) &&
          (gain > 0.0 ? f_trial >= f + 1e-4 * gain : f_trial > f)) {
        accepted = true;
        break;
      }
      alpha *= 0.25;
      if (alpha < 1e-18) break;
    }
    if (!accepted) {
      rep.stalled = true;
      break;
    }

    x_prev = x;
    g_prev = g;
    x = trial;
    f = obj.value_and_gradient(x, mu, g);
    have_history = true;
    ++total_iterations;
  }

  rep.value = f;
  rep.stationarity = feasible_step_norm(obj, x, g, scratch);
  rep.iterations = total_iterations;
  return rep;
}

// Dense least squares min ||M z - d|| restricted to the columns in `cols`,
// by ridge-stabilized normal equations with partial pivoting.
inline std::vector<double> restricted_lsq(
    const std::vector<std::vector<double>>& columns,
    const std::vector<int>& cols, const std::vector<double>& d) {
  const int p = static_cast<int>(cols.size());
  std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
  double trace = 0.0;
  for (int r = 0; r < p; ++r) {
    for (int c = 0; c < p; ++c)
      a[r][c] = dot(columns[cols[r]], columns[cols[c]]);
    a[r][p] = dot(columns[cols[r]], d);
    trace += a[r][r];
  }
  double ridge = 1e-14 * (trace / std::max(p, 1) + 1.0);
  for (int r = 0; r < p; ++r) a[r][r] += ridge;
  for (int k = 0; k < p; ++k) {
    int piv = k;
    for (int r = k + 1; r < p; ++r)
      if (std::abs(a[r][k]) > std::abs(a[piv][k])) piv = r;
    std::swap(a[k], a[piv]);
    for (int r = k + 1; r < p; ++r) {
      double m = a[r][k] / a[k][k];
      for (int c = k; c <= p; ++c) a[r][c] -= m * a[k][c];
    }
  }
  std::vector<double> z(p, 0.0);
  for (int k = p - 1; k >= 0; --k) {
    double s = a[k][p];
    for (int c = k + 1; c < p; ++c) s -= a[k][c] * z[c];
    z[k] = s / a[k][k];
  }
  return z;
}

}  // namespace detail

template <class Obj>
EngineReport maximize_with_barrier(const Obj& obj, std::vector<double>& x,
                                   const SolverOptions& opt = {}) {
  int total = 0;
  for (double mu = opt.mu0; mu > opt.mu_min; mu *= opt.mu_shrink)
    detail::ascend(obj, x, mu, opt.inner_tol, opt.max_inner_iterations, total);
  EngineReport rep = detail::ascend(obj, x, 0.0, opt.final_tol,
                                    opt.max_final_iterations, total);
  rep.iterations = total;
  return rep;
}

// Distance of a gradient from the cone spanned by the active constraint
// normals: min over nu >= 0 of ||g + A^T nu||_2, solved exactly by
// Lawson-Hanson active-set nonnegative least squares (instances are small).
inline double stationarity_residual(const std::vector<std::vector<double>>& rows,
                                    const std::vector<double>& g) {
  const std::size_t n = g.size();
  const int m = static_cast<int>(rows.size());
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
  if (m == 0) return std::sqrt(detail::dot(g, g));

  std::vector<double> nu(m, 0.0), r = d;
  std::vector<int> passive;
  std::vector<bool> in_passive(m, false);
  double row_norm = 0.0;
  for (const auto& row : rows)
    row_norm = std::max(row_norm, std::sqrt(detail::dot(row, row)));
  const double tol_w =
      1e-13 * row_norm * (1.0 + std::sqrt(detail::dot(d, d)));

  auto refresh_residual = [&] {
    r = d;
    for (int j : passive)
      for (std::size_t i = 0; i < n; ++i) r[i] -= nu[j] * rows[j][i];
  };

  for (int outer = 0; outer < 2 * m + 20; ++outer) {
    int best = -1;
    double best_w = tol_w;
    for (int j = 0; j < m; ++j) {
      if (in_passive[j]) continue;
      double w = detail::dot(rows[j], r);
      if (w > best_w) {
        best_w = w;
        best = j;
      }
    }
    if (best < 0) break;
    passive.push_back(best);
    in_passive[best] = true;

    for (int inner = 0; inner <= m + 5; ++inner) {
      std::vector<double> z = detail::restricted_lsq(rows, passive, d);
      bool all_positive = true;
      for (double v : z)
        if (v <= 0.0) all_positive = false;
      if (all_positive) {
        for (std::size_t k = 0; k < passive.size(); ++k) nu[passive[k]] = z[k];
        break;
      }
      double alpha = 1.0;
      for (std::size_t k = 0; k < passive.size(); ++k)
        if (z[k] <= 0.0) {
          double nj = nu[passive[k]];
          if (nj - z[k] > 0.0) alpha = std::min(alpha, nj / (nj - z[k]));
        }
      for (std::size_t k = 0; k < passive.size(); ++k) {
        int j = passive[k];
        nu[j] += alpha * (z[k] - nu[j]);
      }
      std::vector<int> kept;
      for (int j : passive) {
        if (nu[j] <= 1e-300) {
          nu[j] = 0.0;
          in_passive[j] = false;
        } else {
          kept.push_back(j);
        }
      }
      passive = std::move(kept);
      if (passive.empty()) break;
    }
    refresh_residual();
  }
  return std::sqrt(detail::dot(r, r));
}

}  // namespace shadowtree
