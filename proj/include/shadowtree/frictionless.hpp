#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "shadowtree/market.hpp"
#include "shadowtree/optimize.hpp"
#include "shadowtree/plan.hpp"
#include "shadowtree/utility.hpp"

namespace shadowtree {

// Candidate frictionless price S^Z per node. When derived from a CPS the
// prices sit inside the bid-ask spread; this module itself never reads the
// tree's lambda — spread membership is the caller's claim to check.
struct PriceAssignment {
  std::vector<double> s_z;  // by node index
};

inline PriceAssignment load_prices(const ScenarioTree& tree,
                                   const nlohmann::json& doc) {
  PriceAssignment p;
  p.s_z.assign(tree.size(), 0.0);
  for (const auto& [id, value] : doc.at("s_z").items())
    p.s_z[tree.index_of(id)] = value.get<double>();
  for (int i = 0; i < tree.size(); ++i)
    if (!(p.s_z[i] > 0.0))
      throw ValidationError("price assignment missing or non-positive at " +
                            tree.node(i).id);
  return p;
}

inline nlohmann::json serialize_prices(const ScenarioTree& tree,
                                       const PriceAssignment& prices) {
  nlohmann::json m = nlohmann::json::object();
  for (int i = 0; i < tree.size(); ++i) m[tree.node(i).id] = prices.s_z[i];
  return nlohmann::json{{"s_z", std::move(m)}};
}

namespace detail {

// Frictionless subtree objective: one variable per internal node, the
// post-trade stock holding; the bond holding is eliminated through the
// zero-cost rebalancing identity and kept nonnegative by the barrier.
class FrictionlessObjective {
 public:
  FrictionlessObjective(const ScenarioTree& tree,
                        const std::vector<double>& s_z, const UtilitySpec& u,
                        const std::vector<double>& e, double x)
      : tree_(tree), sz_(&s_z), u_(u), e_(&e), x_(x) {
    for (int i : tree.subtree(tree.root())) {
      if (tree.is_leaf(i))
        leaves_.push_back(i);
      else
        internal_.push_back(i);
    }
    pos_.assign(tree.size(), -1);
    for (int k = 0; k < static_cast<int>(internal_.size()); ++k)
      pos_[internal_[k]] = k;
    parent_pos_.resize(internal_.size());
    for (int k = 0; k < static_cast<int>(internal_.size()); ++k) {
      int p = tree.parent_index(internal_[k]);
      parent_pos_[k] = p < 0 ? -1 : pos_[p];
    }
    leaf_parent_pos_.resize(leaves_.size());
    for (int j = 0; j < static_cast<int>(leaves_.size()); ++j)
      leaf_parent_pos_[j] = pos_[tree.parent_index(leaves_[j])];
    scale_ = 1.0 + std::abs(x);
    bond_.resize(internal_.size());
    wealth_.resize(leaves_.size());
    acc_.resize(internal_.size() + leaves_.size());
    retr_bond_.resize(internal_.size());
  }

  // Caps each holding by the wealth entering the node, parents-first.
  void retract(std::vector<double>& theta) const {
    for (int k = 0; k < static_cast<int>(internal_.size()); ++k) {
      int i = internal_[k];
      int pp = parent_pos_[k];
      double entering =
          pp < 0 ? x_ : retr_bond_[pp] + theta[pp] * (*sz_)[i];
      theta[k] = std::clamp(theta[k], 0.0, entering / (*sz_)[i]);
      retr_bond_[k] = std::max(entering - theta[k] * (*sz_)[i], 0.0);
    }
  }

  int variable_count() const { return static_cast<int>(internal_.size()); }
  const std::vector<int>& internal_nodes() const { return internal_; }
  const std::vector<int>& leaf_nodes() const { return leaves_; }
  double feasibility_scale() const { return scale_; }

  bool forward(const std::vector<double>& theta, double floor_slack) const {
    for (int k = 0; k < static_cast<int>(internal_.size()); ++k) {
      int i = internal_[k];
      int pp = parent_pos_[k];
      double entering = pp < 0
                            ? x_
                            : bond_[pp] + theta[pp] * (*sz_)[i];
      bond_[k] = entering - theta[k] * (*sz_)[i];
      if (bond_[k] < floor_slack) return false;
    }
    for (int j = 0; j < static_cast<int>(leaves_.size()); ++j) {
      int pp = leaf_parent_pos_[j];
      wealth_[j] = bond_[pp] + theta[pp] * (*sz_)[leaves_[j]];
    }
    return true;
  }

  double value(const std::vector<double>& theta, double mu) const {
    return eval(theta, mu, nullptr);
  }
  double value_and_gradient(const std::vector<double>& theta, double mu,
                            std::vector<double>& grad) const {
    return eval(theta, mu, &grad);
  }

  const std::vector<double>& bond() const { return bond_; }
  const std::vector<double>& leaf_wealth() const { return wealth_; }

 private:
  double eval(const std::vector<double>& theta, double mu,
              std::vector<double>* grad) const {
    const double floor_slack = mu > 0.0 ? 0.0 : -1e-13 * scale_;
    if (!forward(theta, floor_slack)) return kMinusInf;
    double f = 0.0;
    for (int j = 0; j < static_cast<int>(leaves_.size()); ++j) {
      double uw = evaluate(u_, wealth_[j] + (*e_)[leaves_[j]]);
      if (uw == kMinusInf) return kMinusInf;
      f += tree_.path_probability(leaves_[j]) * uw;
    }
    if (mu > 0.0) {
      for (int k = 0; k < static_cast<int>(internal_.size()); ++k) {
        if (!(bond_[k] > 0.0)) return kMinusInf;
        f += mu * std::log(bond_[k]);
      }
    }
    if (!grad) return f;

    // Per-node accumulator: A + mu E, where A sums P * U' over leaves of
    // the subtree and E sums 1/bond over its internal nodes.
    const int m = static_cast<int>(internal_.size());
    std::vector<double>& acc = acc_;
    acc.assign(tree_.size(), 0.0);
    for (int j = 0; j < static_cast<int>(leaves_.size()); ++j)
      acc[leaves_[j]] = tree_.path_probability(leaves_[j]) *
                        marginal(u_, wealth_[j] + (*e_)[leaves_[j]]);
    for (int k = m - 1; k >= 0; --k) {
      int i = internal_[k];
      double sum = mu > 0.0 ? mu / bond_[k] : 0.0;
      for (int c : tree_.children(i)) sum += acc[c];
      acc[i] = sum;
    }
    grad->resize(m);
    for (int k = 0; k < m; ++k) {
      int i = internal_[k];
      double g = 0.0;
      for (int c : tree_.children(i)) g += ((*sz_)[c] - (*sz_)[i]) * acc[c];
      if (mu > 0.0) g -= mu * (*sz_)[i] / bond_[k];
      (*grad)[k] = g;
    }
    return f;
  }

  const ScenarioTree& tree_;
  const std::vector<double>* sz_;
  UtilitySpec u_;
  const std::vector<double>* e_;
  double x_;
  double scale_ = 1.0;
  std::vector<int> internal_, leaves_;
  std::vector<int> pos_, parent_pos_, leaf_parent_pos_;
  mutable std::vector<double> bond_, wealth_, acc_;
  mutable std::vector<double> retr_bond_;
};

inline double frictionless_kkt_residual(const ScenarioTree& tree,
                                        const FrictionlessObjective& obj,
                                        const std::vector<double>& s_z,
                                        const std::vector<double>& theta) {
  const auto& internal = obj.internal_nodes();
  const int n = static_cast<int>(internal.size());
  std::vector<double> grad(n);
  double f = obj.value_and_gradient(theta, 0.0, grad);
  if (!std::isfinite(f)) return std::numeric_limits<double>::infinity();

  std::vector<int> pos(tree.size(), -1);
  for (int k = 0; k < n; ++k) pos[internal[k]] = k;
  const double act_tol = 1e-7 * obj.feasibility_scale();
  std::vector<std::vector<double>> rows;
  for (int k = 0; k < n; ++k) {
    if (theta[k] <= act_tol) {
      std::vector<double> r(n, 0.0);
      r[k] = 1.0;
      rows.push_back(std::move(r));
    }
    if (obj.bond()[k] <= act_tol) {
      std::vector<double> r(n, 0.0);
      r[k] = -s_z[internal[k]];
      int child = internal[k];
      for (int a = tree.parent_index(child); a >= 0;
           child = a, a = tree.parent_index(a))
        r[pos[a]] = s_z[child] - s_z[a];
      rows.push_back(std::move(r));
    }
  }
  return stationarity_residual(rows, grad);
}

}  // namespace detail

// Constrained frictionless utility maximization at prices S^Z on the same
// tree: no short position in either asset at any node.
inline SolveReport solve_frictionless(const ScenarioTree& tree,
                                      const PriceAssignment& prices,
                                      const UtilitySpec& u,
                                      const EndowmentSpec& endow,
                                      const SolverOptions& opts = {}) {
  if (!(endow.x > 0.0))
    throw ValidationError("infeasible start: x must be positive");
  for (int i = 0; i < tree.size(); ++i)
    if (!(prices.s_z[i] > 0.0))
      throw ValidationError("candidate prices must be positive");
  auto e = endowment_by_node(tree, endow, /*allow_negative=*/true);

  detail::FrictionlessObjective obj(tree, prices.s_z, u, e, endow.x);
  const auto& internal = obj.internal_nodes();
  std::vector<double> theta(internal.size(), 0.0);
  // Interior warm start: a small stock sliver at every internal node.
  {
    std::vector<int> pos(tree.size(), -1);
    for (int k = 0; k < static_cast<int>(internal.size()); ++k)
      pos[internal[k]] = k;
    std::vector<double> entering(internal.size());
    for (int k = 0; k < static_cast<int>(internal.size()); ++k) {
      int i = internal[k];
      int p = tree.parent_index(i);
      // entering wealth marked at this node's price
      double w = endow.x;
      if (p >= 0)
        w = (entering[pos[p]] - theta[pos[p]] * prices.s_z[p]) +
            theta[pos[p]] * prices.s_z[i];
      entering[k] = w;
      theta[k] = 1e-3 * w / prices.s_z[i];
    }
  }

  EngineReport er = maximize_with_barrier(obj, theta, opts);
  SolverOptions polish = opts;
  polish.mu0 = 0.5 * opts.mu_min;
  EngineReport ep = maximize_with_barrier(obj, theta, polish);

  SolveReport rep;
  rep.value = ep.value;
  rep.iterations = er.iterations + ep.iterations;
  rep.plan = TradePlan::zeros(tree.size());
  obj.forward(theta, -std::numeric_limits<double>::infinity());
  std::vector<int> pos(tree.size(), -1);
  for (int k = 0; k < static_cast<int>(internal.size()); ++k)
    pos[internal[k]] = k;
  for (int k = 0; k < static_cast<int>(internal.size()); ++k) {
    int i = internal[k];
    int p = tree.parent_index(i);
    double prev = p < 0 ? 0.0 : theta[pos[p]];
    rep.plan.buy[i] = std::max(theta[k] - prev, 0.0);
    rep.plan.sell[i] = std::max(prev - theta[k], 0.0);
    rep.plan.phi0[i] = obj.bond()[k];
    rep.plan.phi1[i] = theta[k];
  }
  const auto& leaves = obj.leaf_nodes();
  for (int j = 0; j < static_cast<int>(leaves.size()); ++j) {
    int i = leaves[j];
    int p = tree.parent_index(i);
    rep.plan.sell[i] = rep.plan.phi1[p];
    rep.plan.phi0[i] = obj.leaf_wealth()[j];
    rep.plan.phi1[i] = 0.0;
  }
  rep.kkt_residual =
      detail::frictionless_kkt_residual(tree, obj, prices.s_z, theta);
  rep.converged = std::isfinite(rep.value) &&
                  rep.kkt_residual <= 1e-8 * (1.0 + std::abs(rep.value));
  return rep;
}

struct DominanceReport {
  double frictionless_value = kMinusInf;
  double frictional_value = kMinusInf;
  double gap = 0.0;
  bool certified = false;
};

// Lemma-style dominance: any in-spread frictionless market affords at least
// the frictional value. Prices outside the spread cannot be certified.
inline DominanceReport dominance_check(const ScenarioTree& tree,
                                       const UtilitySpec& u,
                                       const EndowmentSpec& endow,
                                       const PriceAssignment& prices,
                                       double frictional_value,
                                       const SolverOptions& opts = {}) {
  for (int i = 0; i < tree.size(); ++i) {
    double slack = 1e-12 * tree.ask(i);
    if (prices.s_z[i] < tree.bid(i) - slack ||
        prices.s_z[i] > tree.ask(i) + slack)
      throw ValidationError("prices outside the bid-ask spread at node " +
                            tree.node(i).id + ": refusing to certify");
  }
  DominanceReport rep;
  rep.frictional_value = frictional_value;
  rep.frictionless_value = solve_frictionless(tree, prices, u, endow, opts).value;
  rep.gap = rep.frictionless_value - frictional_value;
  rep.certified = rep.gap >= -1e-9;
  return rep;
}

}  // namespace shadowtree
