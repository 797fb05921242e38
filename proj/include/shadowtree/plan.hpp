#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "shadowtree/market.hpp"
#include "shadowtree/utility.hpp"

namespace shadowtree {

// Holdings are kept strictly nonnegative up to this absolute slack; below
// line-search resolution, above accumulated rounding.
inline constexpr double kFeasTol = 1e-9;

// Per-node trades (shares bought at the ask, sold at the bid) and the
// post-trade holdings they induce. Indexed by node position in the tree;
// leaves carry the forced liquidation trade.
struct TradePlan {
  std::vector<double> buy, sell, phi0, phi1;

  static TradePlan zeros(int n) {
    TradePlan p;
    p.buy.assign(n, 0.0);
    p.sell.assign(n, 0.0);
    p.phi0.assign(n, 0.0);
    p.phi1.assign(n, 0.0);
    return p;
  }
};

struct SolveReport {
  double value = kMinusInf;
  TradePlan plan;
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  bool converged = false;
};

// Recomputes holdings from the trades by the self-financing identities,
// starting from (x, 0) at the root and liquidating at the leaves.
inline void recompute_holdings(const ScenarioTree& tree, double x,
                               TradePlan& plan) {
  for (int i = 0; i < tree.size(); ++i) {
    int p = tree.parent_index(i);
    double pa = p < 0 ? x : plan.phi0[p];
    double pb = p < 0 ? 0.0 : plan.phi1[p];
    if (tree.is_leaf(i)) {
      plan.buy[i] = 0.0;
      plan.sell[i] = pb;
      plan.phi0[i] = pa + tree.bid(i) * pb;
      plan.phi1[i] = 0.0;
    } else {
      plan.phi0[i] = pa - tree.ask(i) * plan.buy[i] +
                     tree.bid(i) * plan.sell[i];
      plan.phi1[i] = pb + plan.buy[i] - plan.sell[i];
    }
  }
}

inline TradePlan hold_only_plan(const ScenarioTree& tree, double x) {
  TradePlan p = TradePlan::zeros(tree.size());
  recompute_holdings(tree, x, p);
  return p;
}

struct AdmissibilityIssue {
  NodeId node;
  std::string constraint;
  double magnitude = 0.0;
};

// Lists every violated admissibility constraint: self-financing identities,
// the no-short-selling floor on both holdings, trade nonnegativity, and
// terminal liquidation. Empty result means the plan is admissible from x.
inline std::vector<AdmissibilityIssue> check_admissible(
    const ScenarioTree& tree, const TradePlan& plan, double x,
    double tol = kFeasTol) {
  std::vector<AdmissibilityIssue> issues;
  auto flag = [&](int i, const char* what, double magnitude) {
    if (magnitude > tol)
      issues.push_back({tree.node(i).id, what, magnitude});
  };
  const double scale = 1.0 + std::abs(x);
  for (int i = 0; i < tree.size(); ++i) {
    int p = tree.parent_index(i);
    double pa = p < 0 ? x : plan.phi0[p];
    double pb = p < 0 ? 0.0 : plan.phi1[p];
    double want0 = pa - tree.ask(i) * plan.buy[i] + tree.bid(i) * plan.sell[i];
    double want1 = pb + plan.buy[i] - plan.sell[i];
    flag(i, "self_financing_bond", std::abs(plan.phi0[i] - want0) / scale);
    flag(i, "self_financing_stock", std::abs(plan.phi1[i] - want1) / scale);
    flag(i, "negative_buy", -plan.buy[i]);
    flag(i, "negative_sell", -plan.sell[i]);
    flag(i, "short_bond", -plan.phi0[i]);
    flag(i, "short_stock", -plan.phi1[i]);
    if (tree.is_leaf(i)) flag(i, "terminal_liquidation", std::abs(plan.phi1[i]));
  }
  return issues;
}

// Expected utility of the terminal bond account of a plan, with the random
// endowment added before evaluation.
inline double plan_value(const ScenarioTree& tree, const TradePlan& plan,
                         const UtilitySpec& u, const std::vector<double>& e) {
  double v = 0.0;
  for (int leaf : tree.leaves()) {
    double uw = evaluate(u, plan.phi0[leaf] + e[leaf]);
    if (uw == kMinusInf) return kMinusInf;
    v += tree.path_probability(leaf) * uw;
  }
  return v;
}

inline nlohmann::json serialize_plan(const ScenarioTree& tree,
                                     const TradePlan& plan) {
  nlohmann::json b = nlohmann::json::object(), s = nlohmann::json::object(),
                 p0 = nlohmann::json::object(), p1 = nlohmann::json::object();
  for (int i = 0; i < tree.size(); ++i) {
    const NodeId& id = tree.node(i).id;
    b[id] = plan.buy[i];
    s[id] = plan.sell[i];
    p0[id] = plan.phi0[i];
    p1[id] = plan.phi1[i];
  }
  return nlohmann::json{
      {"buy", b}, {"sell", s}, {"phi0", p0}, {"phi1", p1}};
}

inline TradePlan load_plan(const ScenarioTree& tree,
                           const nlohmann::json& doc) {
  TradePlan plan = TradePlan::zeros(tree.size());
  auto fill = [&](const char* key, std::vector<double>& out) {
    for (const auto& [id, value] : doc.at(key).items())
      out[tree.index_of(id)] = value.get<double>();
  };
  fill("buy", plan.buy);
  fill("sell", plan.sell);
  fill("phi0", plan.phi0);
  fill("phi1", plan.phi1);
  return plan;
}

}  // namespace shadowtree
