#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "shadowtree/friction.hpp"
#include "shadowtree/frictionless.hpp"
#include "shadowtree/market.hpp"
#include "shadowtree/parallel.hpp"
#include "shadowtree/plan.hpp"
#include "shadowtree/rng.hpp"
#include "shadowtree/utility.hpp"

namespace shadowtree {

class CpsError : public std::runtime_error {
 public:
  explicit CpsError(const std::string& what) : std::runtime_error(what) {}
};

enum class CpsMethod { kFiniteDifference, kKktMultiplier };

inline const char* to_string(CpsMethod m) {
  return m == CpsMethod::kFiniteDifference ? "finite_difference"
                                           : "kkt_multiplier";
}

// Candidate supermartingale consistent price system: positive pair
// (Z0, Z1) per node whose implied price Z1/Z0 sits inside the bid-ask
// spread and whose components are nodewise supermartingales.
struct CpsPair {
  std::vector<double> z0, z1;  // by node index
  double epsilon_used = 0.0;
  CpsMethod method = CpsMethod::kFiniteDifference;
};

inline nlohmann::json serialize_cps(const ScenarioTree& tree,
                                    const CpsPair& cps) {
  nlohmann::json z0 = nlohmann::json::object(), z1 = nlohmann::json::object();
  for (int i = 0; i < tree.size(); ++i) {
    z0[tree.node(i).id] = cps.z0[i];
    z1[tree.node(i).id] = cps.z1[i];
  }
  return nlohmann::json{{"z0", std::move(z0)},
                        {"z1", std::move(z1)},
                        {"epsilon_used", cps.epsilon_used},
                        {"method", to_string(cps.method)}};
}

inline CpsPair load_cps(const ScenarioTree& tree, const nlohmann::json& doc) {
  CpsPair cps;
  cps.z0.assign(tree.size(), 0.0);
  cps.z1.assign(tree.size(), 0.0);
  for (const auto& [id, v] : doc.at("z0").items())
    cps.z0[tree.index_of(id)] = v.get<double>();
  for (const auto& [id, v] : doc.at("z1").items())
    cps.z1[tree.index_of(id)] = v.get<double>();
  cps.epsilon_used = doc.value("epsilon_used", 0.0);
  cps.method = doc.value("method", std::string("finite_difference")) ==
                       std::string("kkt_multiplier")
                   ? CpsMethod::kKktMultiplier
                   : CpsMethod::kFiniteDifference;
  return cps;
}

inline PriceAssignment prices_from_cps(const ScenarioTree& tree,
                                       const CpsPair& cps) {
  PriceAssignment p;
  p.s_z.resize(tree.size());
  for (int i = 0; i < tree.size(); ++i) p.s_z[i] = cps.z1[i] / cps.z0[i];
  return p;
}

// ---------------------------------------------------------------------------
// Independent invariant walker, re-asserted on every constructed pair.

struct CpsCheck {
  bool ok = false;
  // Sandwich slack relative to the ask, minimum over nodes for each side.
  double sandwich_low_margin = 0.0;
  double sandwich_high_margin = 0.0;
  // Max over nodes/components of E[next] - current (positive = violation).
  double supermartingale_residual = 0.0;
  std::vector<std::string> violations;
};

inline CpsCheck check_cps_invariants(const ScenarioTree& tree,
                                     const CpsPair& cps,
                                     double tol_sandwich = 1e-8,
                                     double tol_super = 1e-9) {
  CpsCheck out;
  out.sandwich_low_margin = std::numeric_limits<double>::infinity();
  out.sandwich_high_margin = std::numeric_limits<double>::infinity();
  out.supermartingale_residual = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < tree.size(); ++i) {
    const NodeId& id = tree.node(i).id;
    if (!(cps.z0[i] > 0.0) || !(cps.z1[i] > 0.0)) {
      out.violations.push_back("non-positive component at node " + id);
      continue;
    }
    double ratio = cps.z1[i] / cps.z0[i];
    double low = (ratio - tree.bid(i)) / tree.ask(i);
    double high = (tree.ask(i) - ratio) / tree.ask(i);
    out.sandwich_low_margin = std::min(out.sandwich_low_margin, low);
    out.sandwich_high_margin = std::min(out.sandwich_high_margin, high);
    if (low < -tol_sandwich)
      out.violations.push_back("implied price below bid at node " + id);
    if (high < -tol_sandwich)
      out.violations.push_back("implied price above ask at node " + id);
    if (!tree.is_leaf(i)) {
      double m0 = 0.0, m1 = 0.0;
      for (int c : tree.children(i)) {
        m0 += tree.node(c).prob * cps.z0[c];
        m1 += tree.node(c).prob * cps.z1[c];
      }
      double r = std::max(m0 - cps.z0[i], m1 - cps.z1[i]);
      out.supermartingale_residual = std::max(out.supermartingale_residual, r);
      if (r > tol_super)
        out.violations.push_back("supermartingale violated at node " + id);
    }
  }
  out.ok = out.violations.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Construction from one-sided marginal value differences at the optimum.
// Interior nodes difference the conditional value function in the bond and
// stock directions (forward quotients at eps and eps/2, Richardson
// extrapolated); terminal values are assigned exactly from U'. In discrete
// time the cadlag regularization is the identity, so the extrapolated pair
// is returned as-is after the invariant walk.

struct CpsOptions {
  SolverOptions solver;
  int threads = 0;  // 0 = worker_count()
  double quotient_agreement = 1e-3;  // raw vs extrapolated guard
};

inline CpsPair marginal_cps(const ScenarioTree& tree, const UtilitySpec& u,
                            const EndowmentSpec& endow,
                            const SolveReport& report, double eps = 1e-5,
                            const CpsOptions& options = {}) {
  if (!report.converged)
    throw CpsError("marginal construction needs a converged primal report");
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw CpsError("eps outside [1e-7, 1e-3]");

  CpsPair cps;
  cps.epsilon_used = eps;
  cps.method = CpsMethod::kFiniteDifference;
  cps.z0.assign(tree.size(), 0.0);
  cps.z1.assign(tree.size(), 0.0);

  auto e = endowment_by_node(tree, endow, /*allow_negative=*/true);
  std::vector<std::string> errors(tree.size());

  parallel_for(
      tree.size(),
      [&](int i) {
        if (tree.is_leaf(i)) {
          double w = report.plan.phi0[i] + e[i];
          if (!(w > 0.0)) {
            errors[i] = "non-positive terminal wealth at leaf";
            return;
          }
          cps.z0[i] = marginal(u, w);
          cps.z1[i] = cps.z0[i] * tree.bid(i);
          return;
        }
        const double a = report.plan.phi0[i];
        const double b = report.plan.phi1[i];
        auto solve_at = [&](double da, double db) {
          SolveReport r = conditional_solve(tree, u, endow, i, a + da, b + db,
                                            options.solver);
          if (!r.converged)
            throw CpsError("conditional re-solve failed to converge at node " +
                           tree.node(i).id);
          return r.value;
        };
        try {
          double base = solve_at(0.0, 0.0);
          auto quotient = [&](bool bond_dir) {
            double h = eps * (1.0 + std::abs(bond_dir ? a : b));
            double f1 = bond_dir ? solve_at(h, 0.0) : solve_at(0.0, h);
            double f2 =
                bond_dir ? solve_at(0.5 * h, 0.0) : solve_at(0.0, 0.5 * h);
            double d1 = (f1 - base) / h;
            double d2 = (f2 - base) / (0.5 * h);
            double extrapolated = 2.0 * d2 - d1;
            if (std::abs(extrapolated - d2) >
                options.quotient_agreement *
                    std::max(std::abs(extrapolated), 1e-12))
              throw CpsError(
                  "ill-conditioned difference quotient at node " +
                  tree.node(i).id);
            return extrapolated;
          };
          cps.z0[i] = quotient(true);
          cps.z1[i] = quotient(false);
        } catch (const CpsError& err) {
          errors[i] = err.what();
        }
      },
      options.threads);

  for (int i = 0; i < tree.size(); ++i)
    if (!errors[i].empty()) throw CpsError(errors[i]);

  // Project measurement noise back onto the exact sandwich; anything larger
  // than noise is a construction failure, not something to repair.
  for (int i = 0; i < tree.size(); ++i) {
    if (!(cps.z0[i] > 0.0))
      throw CpsError("non-positive bond marginal at node " + tree.node(i).id);
    double lo = tree.bid(i) * cps.z0[i];
    double hi = tree.ask(i) * cps.z0[i];
    double clipped = std::clamp(cps.z1[i], lo, hi);
    if (std::abs(clipped - cps.z1[i]) > 1e-6 * std::max(cps.z1[i], 1e-12))
      throw CpsError("stock marginal far outside the spread at node " +
                     tree.node(i).id);
    cps.z1[i] = clipped;
  }

  CpsCheck check = check_cps_invariants(tree, cps);
  if (!check.ok) {
    std::string what = "constructed pair violates CPS invariants:";
    for (const auto& v : check.violations) what += " " + v + ";";
    throw CpsError(what);
  }
  return cps;
}

// Exact backward construction from the first-order conditions of the solved
// program. Supermartingale equalities hold wherever the matching holding is
// strictly positive; where a holding is at zero the free component takes
// the right-derivative selection, the best marginal use of the asset.
inline CpsPair kkt_multiplier_cps(const ScenarioTree& tree,
                                  const UtilitySpec& u,
                                  const EndowmentSpec& endow,
                                  const SolveReport& report) {
  if (!report.converged)
    throw CpsError("multiplier construction needs a converged primal report");
  auto e = endowment_by_node(tree, endow, /*allow_negative=*/true);
  CpsPair cps;
  cps.method = CpsMethod::kKktMultiplier;
  cps.epsilon_used = 0.0;
  cps.z0.assign(tree.size(), 0.0);
  cps.z1.assign(tree.size(), 0.0);
  const double act_tol = 1e-7 * (1.0 + endow.x);

  for (int i = tree.size() - 1; i >= 0; --i) {
    if (tree.is_leaf(i)) {
      double w = report.plan.phi0[i] + e[i];
      if (!(w > 0.0))
        throw CpsError("non-positive terminal wealth at leaf " +
                       tree.node(i).id);
      cps.z0[i] = marginal(u, w);
      cps.z1[i] = cps.z0[i] * tree.bid(i);
      continue;
    }
    double m0 = 0.0, m1 = 0.0;
    for (int c : tree.children(i)) {
      m0 += tree.node(c).prob * cps.z0[c];
      m1 += tree.node(c).prob * cps.z1[c];
    }
    bool bond_positive = report.plan.phi0[i] > act_tol;
    bool stock_positive = report.plan.phi1[i] > act_tol;
    double z0, z1;
    if (bond_positive) {
      z0 = m0;
      z1 = stock_positive ? m1 : std::max(m1, tree.bid(i) * z0);
    } else if (stock_positive) {
      z1 = m1;
      z0 = std::max(m0, m1 / tree.ask(i));
    } else {
      z0 = std::max(m0, m1 / tree.ask(i));
      z1 = std::max(m1, tree.bid(i) * z0);
    }
    // Sandwich projection mops up first-order-condition residuals.
    cps.z0[i] = z0;
    cps.z1[i] = std::clamp(z1, tree.bid(i) * z0, tree.ask(i) * z0);
  }
  return cps;
}

// ---------------------------------------------------------------------------
// Verification suite.

struct OptimalityReport {
  double r1 = 0.0;  // terminal marginal-utility mismatch, max over leaves
  double r2 = 0.0;  // complementarity |E[Z0_T g] - Z0_0 x|
  double threshold = 0.0;
  bool pass = false;
};

inline OptimalityReport verify_optimality_conditions(
    const CpsPair& cps, const SolveReport& report, const UtilitySpec& u,
    const EndowmentSpec& endow, const ScenarioTree& tree) {
  auto e = endowment_by_node(tree, endow, /*allow_negative=*/true);
  OptimalityReport out;
  double pairing = 0.0;
  for (int leaf : tree.leaves()) {
    double g = report.plan.phi0[leaf];
    double w = g + e[leaf];
    if (w > 0.0)
      out.r1 = std::max(out.r1, std::abs(cps.z0[leaf] - marginal(u, w)));
    pairing += tree.path_probability(leaf) * cps.z0[leaf] * g;
  }
  double budget = cps.z0[tree.root()] * endow.x;
  out.r2 = std::abs(pairing - budget);
  out.threshold = 1e-5 * (1.0 + std::abs(budget));
  out.pass = out.r1 <= out.threshold && out.r2 <= out.threshold;
  return out;
}

struct ShadowGapReport {
  double frictional_value = kMinusInf;
  double frictionless_value = kMinusInf;
  double gap = 0.0;
  SolveReport frictionless_report;
};

// Solves the frictionless problem at the implied prices and reports
// u^Z - u; for a valid shadow price the gap closes to solver tolerance.
inline ShadowGapReport shadow_gap(const ScenarioTree& tree,
                                  const UtilitySpec& u,
                                  const EndowmentSpec& endow,
                                  const CpsPair& cps, double frictional_value,
                                  const SolverOptions& opts = {}) {
  ShadowGapReport out;
  out.frictional_value = frictional_value;
  out.frictionless_report =
      solve_frictionless(tree, prices_from_cps(tree, cps), u, endow, opts);
  out.frictionless_value = out.frictionless_report.value;
  out.gap = out.frictionless_value - frictional_value;
  return out;
}

struct TradeLocationViolation {
  NodeId node;
  char side;  // 'b' or 's'
  double implied_price;
  double required;
};

struct TradeLocationReport {
  int trading_nodes = 0;
  std::vector<TradeLocationViolation> violations;
};

// Buys must happen where the implied price touches the ask, sells where it
// touches the bid (forced leaf liquidations included).
inline TradeLocationReport trade_location_report(const TradePlan& plan,
                                                 const CpsPair& cps,
                                                 const ScenarioTree& tree,
                                                 double tol = 1e-6) {
  TradeLocationReport out;
  for (int i = 0; i < tree.size(); ++i) {
    double implied = cps.z1[i] / cps.z0[i];
    bool trades = false;
    if (plan.buy[i] > tol) {
      trades = true;
      double required = tree.ask(i) * (1.0 - tol);
      if (implied < required)
        out.violations.push_back({tree.node(i).id, 'b', implied, required});
    }
    if (plan.sell[i] > tol) {
      trades = true;
      double required = tree.bid(i) + tol * tree.ask(i);
      if (implied > required)
        out.violations.push_back({tree.node(i).id, 's', implied, required});
    }
    if (trades) ++out.trading_nodes;
  }
  return out;
}

// Duality bound E[V(Z0_T)] + E[Z0_T e_T] + Z0_0 x.
inline double duality_upper_bound(const CpsPair& cps, const UtilitySpec& u,
                                  const EndowmentSpec& endow,
                                  const ScenarioTree& tree) {
  double bound = cps.z0[tree.root()] * endow.x;
  auto e = endowment_by_node(tree, endow, /*allow_negative=*/true);
  for (int leaf : tree.leaves()) {
    double p = tree.path_probability(leaf);
    bound += p * (conjugate(u, cps.z0[leaf]) + cps.z0[leaf] * e[leaf]);
  }
  return bound;
}

// Deflated wealth Z0 phi0 + Z1 phi1 along a plan: nodewise supermartingale
// residual (positive = violation) and the smallest value attained.
struct DeflatorCheck {
  double worst_residual = 0.0;
  double min_value = 0.0;
};

inline DeflatorCheck deflated_wealth_check(const ScenarioTree& tree,
                                           const CpsPair& cps,
                                           const TradePlan& plan, double x) {
  DeflatorCheck out;
  out.worst_residual = -std::numeric_limits<double>::infinity();
  out.min_value = std::numeric_limits<double>::infinity();
  auto deflated = [&](int i) {
    return cps.z0[i] * plan.phi0[i] + cps.z1[i] * plan.phi1[i];
  };
  int r = tree.root();
  out.worst_residual = deflated(r) - cps.z0[r] * x;
  for (int i = 0; i < tree.size(); ++i) {
    out.min_value = std::min(out.min_value, deflated(i));
    if (tree.is_leaf(i)) continue;
    double next = 0.0;
    for (int c : tree.children(i)) next += tree.node(c).prob * deflated(c);
    out.worst_residual = std::max(out.worst_residual, next - deflated(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Negative controls and randomized instruments. The verification suite is
// the product; it has to demonstrably reject non-shadow prices, so the
// controls are ordinary operations rather than test-only helpers.

// Implied price pinned to the ask at every node: any optimum that sells
// (every leaf liquidation does) must trip the trade-location check, and the
// frictionless market it spans is strictly more favorable.
inline CpsPair corrupted_cps_at_ask(const ScenarioTree& tree) {
  CpsPair cps;
  cps.method = CpsMethod::kFiniteDifference;
  cps.z0.assign(tree.size(), 1.0);
  cps.z1.resize(tree.size());
  for (int i = 0; i < tree.size(); ++i) cps.z1[i] = tree.ask(i);
  return cps;
}

// Valid lambda-supermartingale-CPS with randomized slacks, built backward:
// used to exercise the one-sided duality bound away from the optimum.
template <class Gen>
CpsPair random_supermartingale_cps(const ScenarioTree& tree, Gen& gen) {
  CpsPair cps;
  cps.method = CpsMethod::kKktMultiplier;
  cps.z0.assign(tree.size(), 0.0);
  cps.z1.assign(tree.size(), 0.0);
  for (int i = tree.size() - 1; i >= 0; --i) {
    if (tree.is_leaf(i)) {
      cps.z0[i] = rng::uniform_in(gen, 0.2, 2.2);
      cps.z1[i] = cps.z0[i] * rng::uniform_in(gen, tree.bid(i), tree.ask(i));
      continue;
    }
    double m0 = 0.0, m1 = 0.0;
    for (int c : tree.children(i)) {
      m0 += tree.node(c).prob * cps.z0[c];
      m1 += tree.node(c).prob * cps.z1[c];
    }
    double z0 = std::max(m0 * (1.0 + 0.3 * rng::uniform01(gen)),
                         m1 / tree.ask(i));
    double lo = std::max(m1, tree.bid(i) * z0);
    double hi = tree.ask(i) * z0;
    cps.z0[i] = z0;
    cps.z1[i] = rng::uniform_in(gen, lo, hi);
  }
  return cps;
}

template <class Gen>
PriceAssignment random_in_spread_prices(const ScenarioTree& tree, Gen& gen) {
  PriceAssignment p;
  p.s_z.resize(tree.size());
  for (int i = 0; i < tree.size(); ++i)
    p.s_z[i] = rng::uniform_in(gen, tree.bid(i), tree.ask(i));
  return p;
}

// Random admissible plan from x: trades a bounded fraction of the available
// holding at every internal node, so both holdings stay strictly positive
// until the terminal liquidation.
template <class Gen>
TradePlan random_admissible_plan(const ScenarioTree& tree, double x,
                                 Gen& gen, double trade_fraction = 0.5) {
  TradePlan plan = TradePlan::zeros(tree.size());
  for (int i = 0; i < tree.size(); ++i) {
    if (tree.is_leaf(i)) continue;
    int p = tree.parent_index(i);
    double pa = p < 0 ? x : plan.phi0[p];
    double pb = p < 0 ? 0.0 : plan.phi1[p];
    plan.buy[i] =
        rng::uniform01(gen) * trade_fraction * pa / tree.ask(i);
    plan.sell[i] = rng::uniform01(gen) * trade_fraction * pb;
    plan.phi0[i] = pa - tree.ask(i) * plan.buy[i] + tree.bid(i) * plan.sell[i];
    plan.phi1[i] = pb + plan.buy[i] - plan.sell[i];
  }
  for (int leaf : tree.leaves()) {
    int p = tree.parent_index(leaf);
    plan.sell[leaf] = plan.phi1[p];
    plan.phi0[leaf] = plan.phi0[p] + tree.bid(leaf) * plan.phi1[p];
    plan.phi1[leaf] = 0.0;
  }
  return plan;
}

}  // namespace shadowtree
