#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "shadowtree/market.hpp"
#include "shadowtree/optimize.hpp"
#include "shadowtree/plan.hpp"
#include "shadowtree/utility.hpp"

namespace shadowtree {

namespace detail {

// Expected-utility objective of the frictional subtree problem. Variables
// are per-node (buy, sell) pairs over the internal nodes of the subtree
// rooted at `root`, entered with holdings (a0, b0). Holdings follow from
// the self-financing identities; leaves liquidate at the bid. The log
// barrier covers the nonnegativity of both holdings at internal nodes;
// terminal wealth is kept positive by the utility itself.
class FrictionObjective {
 public:
  FrictionObjective(const ScenarioTree& tree, const UtilitySpec& u,
                    const std::vector<double>& e, int root, double a0,
                    double b0)
      : tree_(tree), u_(u), e_(&e), root_(root), a0_(a0), b0_(b0) {
    for (int i : tree.subtree(root)) {
      if (tree.is_leaf(i))
        leaves_.push_back(i);
      else
        internal_.push_back(i);
    }
    pos_.assign(tree.size(), -1);
    for (int k = 0; k < static_cast<int>(internal_.size()); ++k)
      pos_[internal_[k]] = k;
    parent_pos_.resize(internal_.size());
    for (int k = 0; k < static_cast<int>(internal_.size()); ++k)
      parent_pos_[k] =
          internal_[k] == root ? -1 : pos_[tree.parent_index(internal_[k])];
    leaf_parent_pos_.resize(leaves_.size());
    leaf_prob_.resize(leaves_.size());
    for (int j = 0; j < static_cast<int>(leaves_.size()); ++j) {
      leaf_parent_pos_[j] = pos_[tree.parent_index(leaves_[j])];
      leaf_prob_[j] = tree.conditional_probability(leaves_[j], root);
    }
    scale_ = 1.0 + std::abs(a0) + std::abs(b0) * tree.price(root);
    phi0_.resize(internal_.size());
    phi1_.resize(internal_.size());
    wealth_.resize(leaves_.size());
    acc_.resize(internal_.size() * 4);
    retr0_.resize(internal_.size());
    retr1_.resize(internal_.size());
  }

  // Truncates a trial trade vector into the feasible polytope: walking
  // parents-first, each node's sell is capped by the stock on hand and its
  // buy by the bond budget, iterated to a joint fixed point.
  void retract(std::vector<double>& x) const {
    for (int k = 0; k < static_cast<int>(internal_.size()); ++k) {
      int i = internal_[k];
      int pp = parent_pos_[k];
      double pa = pp < 0 ? a0_ : retr0_[pp];
      double pb = pp < 0 ? b0_ : retr1_[pp];
      double ask = tree_.ask(i), bid = tree_.bid(i);
      double b = std::max(x[2 * k], 0.0);
      double s = std::max(x[2 * k + 1], 0.0);
      for (int round = 0; round < 20; ++round) {
        double s2 = std::min(s, pb + b);
        double b2 = std::min(b, (pa + bid * s2) / ask);
        if (s2 == s && b2 == b) break;
        s = s2;
        b = b2;
      }
      x[2 * k] = b;
      x[2 * k + 1] = s;
      retr0_[k] = std::max(pa - ask * b + bid * s, 0.0);
      retr1_[k] = std::max(pb + b - s, 0.0);
    }
  }

  int variable_count() const { return 2 * static_cast<int>(internal_.size()); }
  const std::vector<int>& internal_nodes() const { return internal_; }
  const std::vector<int>& leaf_nodes() const { return leaves_; }
  double feasibility_scale() const { return scale_; }

  // Holdings induced by a trade vector; false when a forward state breaks
  // the hard feasibility floor.
  bool forward(const std::vector<double>& x, double floor_slack) const {
    for (int k = 0; k < static_cast<int>(internal_.size()); ++k) {
      int i = internal_[k];
      int pp = parent_pos_[k];
      double pa = pp < 0 ? a0_ : phi0_[pp];
      double pb = pp < 0 ? b0_ : phi1_[pp];
      phi0_[k] = pa - tree_.ask(i) * x[2 * k] + tree_.bid(i) * x[2 * k + 1];
      phi1_[k] = pb + x[2 * k] - x[2 * k + 1];
      if (phi0_[k] < floor_slack || phi1_[k] < floor_slack) return false;
    }
    for (int j = 0; j < static_cast<int>(leaves_.size()); ++j) {
      int pp = leaf_parent_pos_[j];
      wealth_[j] = phi0_[pp] + tree_.bid(leaves_[j]) * phi1_[pp];
    }
    return true;
  }

  double value(const std::vector<double>& x, double mu) const {
    return eval(x, mu, nullptr);
  }
  double value_and_gradient(const std::vector<double>& x, double mu,
                            std::vector<double>& grad) const {
    return eval(x, mu, &grad);
  }

  const std::vector<double>& holdings_bond() const { return phi0_; }
  const std::vector<double>& holdings_stock() const { return phi1_; }
  const std::vector<double>& leaf_wealth() const { return wealth_; }

 private:
  double eval(const std::vector<double>& x, double mu,
              std::vector<double>* grad) const {
    const double floor_slack = mu > 0.0 ? 0.0 : -1e-13 * scale_;
    if (!forward(x, floor_slack)) return kMinusInf;

    double f = 0.0;
    for (int j = 0; j < static_cast<int>(leaves_.size()); ++j) {
      double w = wealth_[j] + (*e_)[leaves_[j]];
      double uw = evaluate(u_, w);
      if (uw == kMinusInf) return kMinusInf;
      f += leaf_prob_[j] * uw;
    }
    if (mu > 0.0) {
      for (int k = 0; k < static_cast<int>(internal_.size()); ++k) {
        if (!(phi0_[k] > 0.0) || !(phi1_[k] > 0.0)) return kMinusInf;
        f += mu * (std::log(phi0_[k]) + std::log(phi1_[k]));
      }
    }
    if (!grad) return f;

    // Backward accumulation: A = sum of P * U' over the subtree's leaves,
    // B the same weighted by the leaf bid; C, D accumulate the barrier
    // terms 1/phi0 and 1/phi1 over internal nodes.
    const int m = static_cast<int>(internal_.size());
    double* A = acc_.data();
    double* B = A + m;
    double* C = B + m;
    double* D = C + m;
    for (int k = 0; k < m; ++k) {
      A[k] = B[k] = 0.0;
      C[k] = mu > 0.0 ? 1.0 / phi0_[k] : 0.0;
      D[k] = mu > 0.0 ? 1.0 / phi1_[k] : 0.0;
    }
    for (int j = 0; j < static_cast<int>(leaves_.size()); ++j) {
      double mj = leaf_prob_[j] * marginal(u_, wealth_[j] + (*e_)[leaves_[j]]);
      A[leaf_parent_pos_[j]] += mj;
      B[leaf_parent_pos_[j]] += mj * tree_.bid(leaves_[j]);
    }
    for (int k = m - 1; k >= 1; --k) {
      A[parent_pos_[k]] += A[k];
      B[parent_pos_[k]] += B[k];
      C[parent_pos_[k]] += C[k];
      D[parent_pos_[k]] += D[k];
    }
    grad->resize(2 * m);
    for (int k = 0; k < m; ++k) {
      double ask = tree_.ask(internal_[k]);
      double bid = tree_.bid(internal_[k]);
      (*grad)[2 * k] = -ask * (A[k] + mu * C[k]) + B[k] + mu * D[k];
      (*grad)[2 * k + 1] = bid * (A[k] + mu * C[k]) - B[k] - mu * D[k];
    }
    return f;
  }

  const ScenarioTree& tree_;
  UtilitySpec u_;
  const std::vector<double>* e_;
  int root_;
  double a0_, b0_;
  double scale_ = 1.0;
  std::vector<int> internal_, leaves_;
  std::vector<int> pos_, parent_pos_, leaf_parent_pos_;
  std::vector<double> leaf_prob_;
  mutable std::vector<double> phi0_, phi1_, wealth_, acc_;
  mutable std::vector<double> retr0_, retr1_;
};

// Strictly interior starting trades: walk the subtree spending a small
// bond fraction so that both holdings stay positive at every node.
inline std::vector<double> interior_start(const ScenarioTree& tree,
                                          const FrictionObjective& obj,
                                          double a0, double b0) {
  const auto& internal = obj.internal_nodes();
  std::vector<double> x(2 * internal.size(), 0.0);
  std::vector<double> pa(internal.size()), pb(internal.size());
  for (int k = 0; k < static_cast<int>(internal.size()); ++k) {
    int i = internal[k];
    int p = tree.parent_index(i);
    double a = a0, b = b0;
    for (int kk = 0; kk < k; ++kk)
      if (internal[kk] == p) {
        a = pa[kk];
        b = pb[kk];
      }
    double ask = tree.ask(i), bid = tree.bid(i);
    double buy, sell;
    if (a >= b * ask) {
      buy = 1e-3 * a / ask;
      sell = 0.25 * buy;
    } else {
      sell = 1e-3 * b;
      buy = 0.25 * (1.0 - tree.lambda()) * sell;
    }
    x[2 * k] = buy;
    x[2 * k + 1] = sell;
    pa[k] = a - ask * buy + bid * sell;
    pb[k] = b + buy - sell;
  }
  return x;
}

// KKT stationarity residual of the polytope program at the final trades:
// distance of the gradient from the cone of active constraint normals.
inline double kkt_residual(const ScenarioTree& tree,
                           const FrictionObjective& obj,
                           const std::vector<double>& x) {
  const auto& internal = obj.internal_nodes();
  const int m = static_cast<int>(internal.size());
  const int n = 2 * m;
  std::vector<double> grad(n);
  double f = obj.value_and_gradient(x, 0.0, grad);
  if (!std::isfinite(f)) return std::numeric_limits<double>::infinity();

  std::vector<int> pos(tree.size(), -1);
  for (int k = 0; k < m; ++k) pos[internal[k]] = k;

  const double act_tol = 1e-7 * obj.feasibility_scale();
  std::vector<std::vector<double>> rows;
  for (int k = 0; k < m; ++k) {
    if (x[2 * k] <= act_tol) {
      std::vector<double> r(n, 0.0);
      r[2 * k] = 1.0;
      rows.push_back(std::move(r));
    }
    if (x[2 * k + 1] <= act_tol) {
      std::vector<double> r(n, 0.0);
      r[2 * k + 1] = 1.0;
      rows.push_back(std::move(r));
    }
    bool bond_active = obj.holdings_bond()[k] <= act_tol;
    bool stock_active = obj.holdings_stock()[k] <= act_tol;
    if (bond_active || stock_active) {
      std::vector<double> r0(n, 0.0), r1(n, 0.0);
      for (int a = internal[k]; a >= 0 && pos[a] >= 0;
           a = tree.parent_index(a)) {
        int ka = pos[a];
        r0[2 * ka] = -tree.ask(a);
        r0[2 * ka + 1] = tree.bid(a);
        r1[2 * ka] = 1.0;
        r1[2 * ka + 1] = -1.0;
      }
      if (bond_active) rows.push_back(std::move(r0));
      if (stock_active) rows.push_back(std::move(r1));
    }
  }
  return stationarity_residual(rows, grad);
}

inline SolveReport solve_subtree(const ScenarioTree& tree,
                                 const UtilitySpec& u,
                                 const std::vector<double>& e, int root,
                                 double a0, double b0,
                                 const SolverOptions& opts) {
  SolveReport rep;
  rep.plan = TradePlan::zeros(tree.size());

  if (tree.is_leaf(root)) {
    rep.plan.sell[root] = b0;
    rep.plan.phi0[root] = a0 + tree.bid(root) * b0;
    rep.value = evaluate(u, rep.plan.phi0[root] + e[root]);
    rep.kkt_residual = 0.0;
    rep.converged = true;
    return rep;
  }
  if (a0 <= 0.0 && b0 <= 0.0) {
    // Nothing to trade with; the value is pinned by the endowment alone.
    double v = 0.0;
    for (int leaf : tree.subtree(root))
      if (tree.is_leaf(leaf)) {
        double uw = evaluate(u, e[leaf]);
        v = uw == kMinusInf ? kMinusInf
                            : v + tree.conditional_probability(leaf, root) * uw;
        if (v == kMinusInf) break;
      }
    rep.value = v;
    rep.kkt_residual = 0.0;
    rep.converged = true;
    return rep;
  }

  FrictionObjective obj(tree, u, e, root, a0, b0);
  std::vector<double> x = interior_start(tree, obj, a0, b0);
  if (!std::isfinite(obj.value(x, opts.mu0))) {
    // Negative endowments can make a near-hold start infeasible; probe
    // buy-and-hold fractions for a finite interior seed.
    bool found = false;
    for (double theta : {0.1, 0.25, 0.5, 0.75, 0.9, 0.99}) {
      std::vector<double> probe(2 * obj.internal_nodes().size(), 1e-12);
      probe[0] = theta * a0 / tree.ask(root);
      probe[1] = 0.25e-3 * (b0 + probe[0]);
      if (std::isfinite(obj.value(probe, opts.mu0))) {
        x = probe;
        found = true;
        break;
      }
    }
    if (!found) {
      rep.value = kMinusInf;
      rep.converged = false;
      return rep;
    }
  }

  EngineReport er = maximize_with_barrier(obj, x, opts);

  // Wash trades survive only as numerical dust; net them, drop dust and
  // re-polish.
  const double dust = 1e-12 * obj.feasibility_scale();
  for (std::size_t k = 0; 2 * k + 1 < x.size(); ++k) {
    double b = x[2 * k], s = x[2 * k + 1];
    x[2 * k] = std::max(b - s, 0.0);
    x[2 * k + 1] = std::max(s - b, 0.0);
    if (x[2 * k] < dust) x[2 * k] = 0.0;
    if (x[2 * k + 1] < dust) x[2 * k + 1] = 0.0;
  }
  obj.retract(x);
  SolverOptions polish = opts;
  polish.mu0 = 0.5 * opts.mu_min;
  EngineReport ep = maximize_with_barrier(obj, x, polish);

  rep.value = ep.value;
  rep.iterations = er.iterations + ep.iterations;
  obj.forward(x, -std::numeric_limits<double>::infinity());
  const auto& internal = obj.internal_nodes();
  for (int k = 0; k < static_cast<int>(internal.size()); ++k) {
    int i = internal[k];
    rep.plan.buy[i] = x[2 * k];
    rep.plan.sell[i] = x[2 * k + 1];
    rep.plan.phi0[i] = obj.holdings_bond()[k];
    rep.plan.phi1[i] = obj.holdings_stock()[k];
  }
  const auto& leaves = obj.leaf_nodes();
  for (int j = 0; j < static_cast<int>(leaves.size()); ++j) {
    int i = leaves[j];
    int p = tree.parent_index(i);
    rep.plan.sell[i] = rep.plan.phi1[p];
    rep.plan.phi0[i] = obj.leaf_wealth()[j];
    rep.plan.phi1[i] = 0.0;
  }
  rep.kkt_residual = kkt_residual(tree, obj, x);
  rep.converged = std::isfinite(rep.value) &&
                  rep.kkt_residual <= 1e-8 * (1.0 + std::abs(rep.value));
  return rep;
}

}  // namespace detail

// Maximum attainable terminal wealth at one leaf from cash x at the root:
// a backward two-state (cash, share) envelope along the path. Used to
// recognize instances whose value is -infinity for every feasible plan.
inline double max_leaf_wealth(const ScenarioTree& tree, int leaf, double x) {
  std::vector<int> path;
  for (int i = leaf; i >= 0; i = tree.parent_index(i)) path.push_back(i);
  double vc = 1.0, vs = tree.bid(leaf);
  for (std::size_t k = 1; k < path.size(); ++k) {
    int i = path[k];
    double vs_new = std::max(vs, tree.bid(i) * vc);
    double vc_new = std::max(vc, vs / tree.ask(i));
    vs = vs_new;
    vc = vc_new;
  }
  return x * vc;
}

// Solves the primal problem: maximize expected utility of terminal bond
// wealth plus endowment over admissible self-financing plans.
inline SolveReport solve_primal(const ScenarioTree& tree, const UtilitySpec& u,
                                const EndowmentSpec& endow,
                                const SolverOptions& opts = {}) {
  if (!(endow.x > 0.0))
    throw ValidationError("infeasible start: x must be positive");
  auto e = endowment_by_node(tree, endow, /*allow_negative=*/true);
  for (int leaf : tree.leaves()) {
    if (max_leaf_wealth(tree, leaf, endow.x) + e[leaf] <= 0.0) {
      SolveReport rep;
      rep.value = kMinusInf;
      rep.plan = hold_only_plan(tree, endow.x);
      rep.kkt_residual = 0.0;
      rep.converged = true;
      return rep;
    }
  }
  return detail::solve_subtree(tree, u, e, tree.root(), endow.x, 0.0, opts);
}

// Value of the constrained subtree problem started at `node` with holdings
// (a, b); trading at `node` itself is allowed at that node's prices.
inline SolveReport conditional_solve(const ScenarioTree& tree,
                                     const UtilitySpec& u,
                                     const EndowmentSpec& endow, int node,
                                     double a, double b,
                                     const SolverOptions& opts = {}) {
  if (a < -kFeasTol || b < -kFeasTol)
    throw ValidationError("conditional holdings must be nonnegative");
  a = std::max(a, 0.0);
  b = std::max(b, 0.0);
  auto e = endowment_by_node(tree, endow, /*allow_negative=*/true);
  return detail::solve_subtree(tree, u, e, node, a, b, opts);
}

inline double conditional_value(const ScenarioTree& tree, const UtilitySpec& u,
                                const EndowmentSpec& endow, int node, double a,
                                double b, const SolverOptions& opts = {}) {
  return conditional_solve(tree, u, endow, node, a, b, opts).value;
}

// Dynamic-programming martingale along the optimum: at every node the
// conditional value at the optimal holdings equals the probability-weighted
// conditional values of its children, both sides evaluated with
// conditional_value.
struct DpCheck {
  double worst_residual = 0.0;
  int nodes_checked = 0;
};

inline DpCheck dp_martingale_check(const ScenarioTree& tree,
                                   const UtilitySpec& u,
                                   const EndowmentSpec& endow,
                                   const SolveReport& report,
                                   const SolverOptions& opts = {}) {
  std::vector<double> value_at(tree.size());
  for (int i = 0; i < tree.size(); ++i)
    value_at[i] = conditional_value(tree, u, endow, i, report.plan.phi0[i],
                                    report.plan.phi1[i], opts);
  DpCheck out;
  for (int i = 0; i < tree.size(); ++i) {
    if (tree.is_leaf(i)) continue;
    double expected = 0.0;
    for (int c : tree.children(i))
      expected += tree.node(c).prob * value_at[c];
    out.worst_residual =
        std::max(out.worst_residual, std::abs(value_at[i] - expected));
    ++out.nodes_checked;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Independent oracle: exhaustive grid search over feasible net trades per
// node, refined by window shrinking around the incumbent (the objective is
// jointly concave in the net trades). Deliberately shares no code with the
// gradient solver.

struct BruteForceResult {
  double value = kMinusInf;
  double error_bound = 0.0;
};

inline BruteForceResult brute_force_primal(const ScenarioTree& tree,
                                           const UtilitySpec& u,
                                           const EndowmentSpec& endow,
                                           int grid_steps,
                                           int refine_rounds = 0) {
  auto e = endowment_by_node(tree, endow, /*allow_negative=*/true);
  int variables = 0;
  for (int i = 0; i < tree.size(); ++i)
    if (!tree.is_leaf(i)) ++variables;
  if (variables > 7)
    throw ValidationError("instance too large: more than 7 trade variables");
  const int K = std::max(grid_steps, 2);
  if (std::pow(static_cast<double>(K), variables) > 1e6 + 0.5)
    throw ValidationError("instance too large: grid beyond 1e6 combinations");

  std::vector<double> win_lo(tree.size(), 0.0), win_hi(tree.size(), 1.0);

  // Best conditional value of the subtree at i entered with (a, b); the
  // candidate net trades are a K-point grid over the node's window plus
  // the exact no-trade point.
  std::function<double(int, double, double)> eval = [&](int i, double a,
                                                        double b) -> double {
    if (tree.is_leaf(i)) return evaluate(u, a + tree.bid(i) * b + e[i]);
    const double lo = -b, hi = a / tree.ask(i);
    double best = kMinusInf;
    for (int g = -1; g < K; ++g) {
      double delta;
      if (g < 0) {
        delta = 0.0;
      } else {
        double t = win_lo[i] + (win_hi[i] - win_lo[i]) * g / (K - 1);
        delta = lo + (hi - lo) * t;
      }
      double a2 = std::max(
          a - tree.ask(i) * std::max(delta, 0.0) +
              tree.bid(i) * std::max(-delta, 0.0),
          0.0);
      double b2 = std::max(b + delta, 0.0);
      double v = 0.0;
      for (int c : tree.children(i)) {
        double vc = eval(c, a2, b2);
        if (vc == kMinusInf) {
          v = kMinusInf;
          break;
        }
        v += tree.node(c).prob * vc;
      }
      best = std::max(best, v);
    }
    return best;
  };

  // Replays the winning assignment to refit windows and collect the
  // first-order error bound from neighbouring grid values.
  double error_bound = 0.0;
  std::function<void(int, double, double)> replay = [&](int i, double a,
                                                        double b) {
    if (tree.is_leaf(i)) return;
    const double lo = -b, hi = a / tree.ask(i);
    double best = kMinusInf, best_t = win_lo[i];
    std::vector<double> grid_vals(K, kMinusInf);
    for (int g = 0; g < K; ++g) {
      double t = win_lo[i] + (win_hi[i] - win_lo[i]) * g / (K - 1);
      double delta = lo + (hi - lo) * t;
      double a2 = std::max(
          a - tree.ask(i) * std::max(delta, 0.0) +
              tree.bid(i) * std::max(-delta, 0.0),
          0.0);
      double b2 = std::max(b + delta, 0.0);
      double v = 0.0;
      for (int c : tree.children(i)) {
        double vc = eval(c, a2, b2);
        if (vc == kMinusInf) {
          v = kMinusInf;
          break;
        }
        v += tree.node(c).prob * vc;
      }
      grid_vals[g] = v;
      if (v > best) {
        best = v;
        best_t = t;
      }
    }
    int gbest = 0;
    for (int g = 1; g < K; ++g)
      if (grid_vals[g] > grid_vals[gbest]) gbest = g;
    if (std::isfinite(grid_vals[gbest])) {
      double gap = 0.0;
      if (gbest > 0 && std::isfinite(grid_vals[gbest - 1]))
        gap = std::max(gap, grid_vals[gbest] - grid_vals[gbest - 1]);
      if (gbest + 1 < K && std::isfinite(grid_vals[gbest + 1]))
        gap = std::max(gap, grid_vals[gbest] - grid_vals[gbest + 1]);
      error_bound += gap;
    }
    double width = win_hi[i] - win_lo[i];
    double margin = 4.0 * width / (K - 1);
    win_lo[i] = std::max(best_t - margin, 0.0);
    win_hi[i] = std::min(best_t + margin, 1.0);

    double delta = lo + (hi - lo) * best_t;
    double a2 = std::max(a - tree.ask(i) * std::max(delta, 0.0) +
                             tree.bid(i) * std::max(-delta, 0.0),
                         0.0);
    double b2 = std::max(b + delta, 0.0);
    for (int c : tree.children(i)) replay(c, a2, b2);
  };

  double shrink = 8.0 / (K - 1);
  int rounds = refine_rounds > 0 ? refine_rounds
               : shrink >= 1.0
                   ? 1
                   : std::min(14, static_cast<int>(std::ceil(
                                      std::log(1e-8) / std::log(shrink))));
  BruteForceResult result;
  for (int r = 0; r < rounds; ++r) {
    result.value = std::max(result.value, eval(tree.root(), endow.x, 0.0));
    error_bound = 0.0;
    replay(tree.root(), endow.x, 0.0);
  }
  result.error_bound = error_bound;
  return result;
}

}  // namespace shadowtree
