#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "shadowtree/market.hpp"
#include "shadowtree/parallel.hpp"
#include "shadowtree/rng.hpp"
#include "shadowtree/utility.hpp"

// Black-Scholes market frozen after T/2 with terminal endowment
// e_T = -beta (1-lambda) S_{T/2}: buy-hold-sell optimality, the explicit
// shadow price, and a sample-level maximality probe.
namespace shadowtree::bs {

inline constexpr std::uint64_t kGaussTag = rng::stream_tag("gauss");
inline constexpr std::uint64_t kBetaTag = rng::stream_tag("beta");

struct BsParams {
  double horizon = 2.0;  // T in time units; the stock freezes at T/2
  double lambda = 0.1;
  int grid_points = 64;  // grid over [0, T/2] including both endpoints
  int n_paths = 100000;
  std::uint64_t seed = 42;
};

inline void validate(const BsParams& p) {
  if (!(p.horizon > 0.0)) throw ValidationError("horizon must be positive");
  if (!(p.lambda > 0.0 && p.lambda < 1.0))
    throw ValidationError("lambda must lie in (0,1)");
  if (p.grid_points < 2) throw ValidationError("grid needs at least 2 points");
  if (p.n_paths < 1) throw ValidationError("need at least one path");
}

struct PathEnsemble {
  int n_paths = 0;
  int grid_points = 0;
  double horizon = 0.0;
  std::vector<double> times;  // shared grid on [0, T/2]
  std::vector<double> s;      // n_paths x grid_points, row-major
  std::vector<double> beta;   // independent stream, one draw per path
  std::uint64_t seed = 0;

  double at(int path, int k) const { return s[path * grid_points + k]; }
  double terminal(int path) const { return at(path, grid_points - 1); }
};

// Exact lognormal transitions of S_t = exp(B_t + t/2); no discretization
// error enters the sampled marginals.
inline PathEnsemble simulate_paths(const BsParams& p) {
  validate(p);
  PathEnsemble ens;
  ens.n_paths = p.n_paths;
  ens.grid_points = p.grid_points;
  ens.horizon = p.horizon;
  ens.seed = p.seed;
  const double half = 0.5 * p.horizon;
  const double dt = half / (p.grid_points - 1);
  ens.times.resize(p.grid_points);
  for (int k = 0; k < p.grid_points; ++k)
    ens.times[k] = k == p.grid_points - 1 ? half : dt * k;
  ens.s.resize(static_cast<std::size_t>(p.n_paths) * p.grid_points);
  ens.beta.resize(p.n_paths);

  const double sqrt_dt = std::sqrt(dt);
  parallel_for(p.n_paths, [&](int i) {
    double* row = ens.s.data() + static_cast<std::size_t>(i) * p.grid_points;
    row[0] = 1.0;
    for (int k = 1; k < p.grid_points; ++k) {
      double z = rng::normal(rng::key(p.seed, kGaussTag, i, k - 1));
      row[k] = row[k - 1] * std::exp(z * sqrt_dt + 0.5 * dt);
    }
    ens.beta[i] = rng::uniform(rng::key(p.seed, kBetaTag, i, 0));
  });
  return ens;
}

// Bid value of the held share at the freeze time; this exact expression is
// reused everywhere the endowment or terminal wealth is formed so that the
// frictional and shadow-market accounts agree bit for bit.
inline double terminal_bid(const PathEnsemble& ens, double lambda, int path) {
  return (1.0 - lambda) * ens.terminal(path);
}

// Terminal bond wealth of the buy-hold-sell strategy: all cash into one
// share at time 0 (S_0 = 1, x = 1), liquidated at the bid at T/2.
inline std::vector<double> buy_hold_sell_wealth(const PathEnsemble& ens,
                                                double lambda) {
  std::vector<double> w(ens.n_paths);
  for (int i = 0; i < ens.n_paths; ++i) w[i] = terminal_bid(ens, lambda, i);
  return w;
}

// Explicit shadow price on the grid: S at t = 0, the drift-adjusted
// exponential on (0, T/2), and the bid pin (1-lambda) S_{T/2} from the
// freeze onward. Computed as S_t * exp(2 ln(1-lambda)/T * t), which is the
// same process written through B_t = ln S_t - t/2.
inline std::vector<double> explicit_shadow(const PathEnsemble& ens,
                                           const BsParams& p) {
  validate(p);
  std::vector<double> shadow(ens.s.size());
  const double slope = 2.0 * std::log1p(-p.lambda) / p.horizon;
  parallel_for(ens.n_paths, [&](int i) {
    double* out = shadow.data() + static_cast<std::size_t>(i) * ens.grid_points;
    out[0] = ens.at(i, 0);
    for (int k = 1; k < ens.grid_points - 1; ++k)
      out[k] = ens.at(i, k) * std::exp(slope * ens.times[k]);
    out[ens.grid_points - 1] = terminal_bid(ens, p.lambda, i);
  });
  return shadow;
}

struct SandwichReport {
  bool ok = false;
  double min_log_ratio = 0.0;  // min over paths/times of ln(shadow/S)
  double max_log_ratio = 0.0;
  long long checked = 0;
};

// Deterministic per-path spread membership of the shadow price; the log
// ratio is linear in t and bounded by its endpoint values ln(1-lambda) and 0.
inline SandwichReport sandwich_check(const PathEnsemble& ens,
                                     const BsParams& p) {
  std::vector<double> shadow = explicit_shadow(ens, p);
  SandwichReport rep;
  rep.ok = true;
  rep.min_log_ratio = std::numeric_limits<double>::infinity();
  rep.max_log_ratio = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < ens.n_paths; ++i) {
    for (int k = 0; k < ens.grid_points; ++k) {
      double s = ens.at(i, k);
      double sh = shadow[static_cast<std::size_t>(i) * ens.grid_points + k];
      if (sh < (1.0 - p.lambda) * s || sh > s) rep.ok = false;
      double r = std::log(sh / s);
      rep.min_log_ratio = std::min(rep.min_log_ratio, r);
      rep.max_log_ratio = std::max(rep.max_log_ratio, r);
      ++rep.checked;
    }
  }
  return rep;
}

struct UtilityEstimates {
  int n = 0;
  double frictional_mean = 0.0;
  double frictional_se = 0.0;
  double frictionless_mean = 0.0;
  double frictionless_se = 0.0;
  double max_abs_path_diff = 0.0;  // must be exactly 0
  bool minus_infinity = false;
};

// Monte Carlo estimate of the buy-hold-sell value under (a) the frictional
// account and (b) the shadow market, where the wealth process of the same
// strategy is the shadow price itself. Path by path both terminal positions
// are the same expression, so their difference is exactly zero.
inline UtilityEstimates estimate_utilities(const PathEnsemble& ens,
                                           const BsParams& p,
                                           const UtilitySpec& u) {
  if (u.family != UtilityFamily::kLog)
    throw ValidationError(
        "the frozen Black-Scholes example is stated for log utility");
  UtilityEstimates est;
  est.n = ens.n_paths;
  std::vector<double> frictional(ens.n_paths), frictionless(ens.n_paths);
  for (int i = 0; i < ens.n_paths; ++i) {
    double bid = terminal_bid(ens, p.lambda, i);
    double endow = -ens.beta[i] * bid;
    double wealth_frictional = bid + endow;
    double shadow_terminal = terminal_bid(ens, p.lambda, i);
    double wealth_frictionless = shadow_terminal + endow;
    est.max_abs_path_diff =
        std::max(est.max_abs_path_diff,
                 std::abs(wealth_frictional - wealth_frictionless));
    if (!(wealth_frictional > 0.0) || !(wealth_frictionless > 0.0))
      est.minus_infinity = true;
    else {
      frictional[i] = std::log(wealth_frictional);
      frictionless[i] = std::log(wealth_frictionless);
    }
  }
  if (est.minus_infinity) {
    est.frictional_mean = kMinusInf;
    est.frictionless_mean = kMinusInf;
    return est;
  }
  auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
    double sum = 0.0;
    for (double x : v) sum += x;
    mean = sum / v.size();
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    se = std::sqrt(ss / (v.size() - 1)) / std::sqrt((double)v.size());
  };
  mean_se(frictional, est.frictional_mean, est.frictional_se);
  mean_se(frictionless, est.frictionless_mean, est.frictionless_se);
  return est;
}

// Closed-form reference for the estimate above:
// E[ln((1-beta)(1-lambda) S_{T/2})] = -1 + ln(1-lambda) + T/4.
inline double closed_form_value(const BsParams& p) {
  return -1.0 + std::log1p(-p.lambda) + 0.25 * p.horizon;
}

struct ProbeSpec {
  std::string name;   // scaled-buy, delayed-buy, early-sell,
                      // partial-liquidation, hold-cash, buy-hold-sell
  double parameter = 0.0;
};

struct ProbeReport {
  std::string name;
  double parameter = 0.0;
  long long witness_count = 0;
  std::vector<int> witness_examples;  // first few path indices
  double p_estimate = 0.0;
  bool utility_minus_infinity = false;
  double expected_utility = 0.0;  // meaningful only when finite
};

// Terminal wealth of a catalog alternative on one path.
inline double alternative_wealth(const PathEnsemble& ens, const BsParams& p,
                                 const ProbeSpec& probe, int path) {
  const double bid = terminal_bid(ens, p.lambda, path);
  auto grid_at_or_after = [&](double t) {
    for (int k = 0; k < ens.grid_points; ++k)
      if (ens.times[k] >= t - 1e-15) return k;
    return ens.grid_points - 1;
  };
  if (probe.name == "buy-hold-sell") return bid;
  if (probe.name == "hold-cash") return 1.0;
  if (probe.name == "scaled-buy") {
    double theta = probe.parameter;
    return (1.0 - theta) + theta * bid;
  }
  if (probe.name == "delayed-buy") {
    int k = grid_at_or_after(probe.parameter);
    return bid / ens.at(path, k);
  }
  if (probe.name == "early-sell") {
    int k = grid_at_or_after(probe.parameter);
    return (1.0 - p.lambda) * ens.at(path, k);
  }
  if (probe.name == "partial-liquidation") {
    double rho = probe.parameter;
    int k = grid_at_or_after(0.25 * p.horizon);  // T/4, inside (0, T/2)
    return rho * (1.0 - p.lambda) * ens.at(path, k) + (1.0 - rho) * bid;
  }
  throw ValidationError("unknown alternative strategy: " + probe.name);
}

inline std::vector<ProbeSpec> default_probe_catalog(const BsParams& p) {
  return {{"scaled-buy", 0.9},
          {"delayed-buy", 0.25 * p.horizon},
          {"early-sell", 0.25 * p.horizon},
          {"partial-liquidation", 0.5}};
}

// Counts paths where the alternative's terminal wealth plus the endowment
// goes negative; one witness already forces expected utility to -infinity,
// which is how buy-hold-sell dominates every catalog alternative.
inline ProbeReport maximality_probe(const PathEnsemble& ens, const BsParams& p,
                                    const ProbeSpec& probe) {
  ProbeReport rep;
  rep.name = probe.name;
  rep.parameter = probe.parameter;
  double sum = 0.0;
  for (int i = 0; i < ens.n_paths; ++i) {
    double wealth = alternative_wealth(ens, p, probe, i);
    double total = wealth - ens.beta[i] * terminal_bid(ens, p.lambda, i);
    if (total < 0.0) {
      ++rep.witness_count;
      if (rep.witness_examples.size() < 10) rep.witness_examples.push_back(i);
    }
    if (total <= 0.0)
      rep.utility_minus_infinity = true;
    else
      sum += std::log(total);
  }
  rep.p_estimate = static_cast<double>(rep.witness_count) / ens.n_paths;
  rep.expected_utility =
      rep.utility_minus_infinity ? kMinusInf : sum / ens.n_paths;
  return rep;
}

}  // namespace shadowtree::bs
