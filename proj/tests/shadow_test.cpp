#include "shadowtree/shadow.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "shadowtree/friction.hpp"
#include "shadowtree/frictionless.hpp"

namespace st = shadowtree;

namespace {

st::EndowmentSpec cash(double x) {
  st::EndowmentSpec endow;
  endow.x = x;
  return endow;
}

st::ScenarioTree one_step(double lambda = 0.01) {
  return st::build_binomial(1.0, 2.0, 0.5, 0.5, 1, lambda);
}

struct Solved {
  st::ScenarioTree tree;
  st::UtilitySpec utility;
  st::EndowmentSpec endow;
  st::SolveReport report;
  st::CpsPair cps;
};

Solved solve_and_construct(st::ScenarioTree tree, st::UtilitySpec u,
                           st::EndowmentSpec endow) {
  Solved s{std::move(tree), u, std::move(endow), {}, {}};
  s.report = st::solve_primal(s.tree, s.utility, s.endow);
  EXPECT_TRUE(s.report.converged);
  s.cps = st::marginal_cps(s.tree, s.utility, s.endow, s.report);
  return s;
}

TEST(ShadowTest, MartingaleNoTradeGivesUnitBondMarginal) {
  // No trade is optimal, so the conditional value is U of the bond account
  // alone; with x = 1 the bond marginal is U'(1) = 1 at every node.
  st::ScenarioTree tree = st::build_binomial(1.0, 2.0, 0.5, 1.0 / 3.0, 1, 0.05);
  Solved s = solve_and_construct(tree, st::UtilitySpec::log_utility(),
                                 cash(1.0));
  for (int i = 0; i < s.tree.size(); ++i)
    EXPECT_NEAR(s.cps.z0[i], 1.0, 1e-6) << s.tree.node(i).id;
}

TEST(ShadowTest, RootMarginalMatchesCentralDifferenceOfValue) {
  st::ScenarioTree tree = one_step();
  st::UtilitySpec log_u = st::UtilitySpec::log_utility();
  Solved s = solve_and_construct(tree, log_u, cash(1.0));

  const double h = 1e-4;
  double up = st::solve_primal(s.tree, log_u, cash(1.0 + h)).value;
  double down = st::solve_primal(s.tree, log_u, cash(1.0 - h)).value;
  double central = (up - down) / (2.0 * h);
  EXPECT_NEAR(s.cps.z0[s.tree.root()], central, 1e-4);
  // Log homogeneity pins the root marginal at U'(x) = 1.
  EXPECT_NEAR(s.cps.z0[s.tree.root()], 1.0, 1e-8);
}

TEST(ShadowTest, LeafValuesAreExactMarginalUtilities) {
  std::mt19937_64 gen(31);
  st::ScenarioTree tree = st::build_binomial(1.0, 1.7, 0.6, 0.5, 2, 0.05);
  st::EndowmentSpec endow = fixtures::random_endowment(tree, 1.0, gen, true);
  Solved s = solve_and_construct(tree, st::UtilitySpec::log_utility(), endow);
  auto e = st::endowment_by_node(s.tree, s.endow);
  for (int leaf : s.tree.leaves()) {
    double expected =
        st::marginal(s.utility, s.report.plan.phi0[leaf] + e[leaf]);
    EXPECT_DOUBLE_EQ(s.cps.z0[leaf], expected);
    EXPECT_DOUBLE_EQ(s.cps.z1[leaf], expected * s.tree.bid(leaf));
    // Independent re-derivation through the leaf conditional value.
    double h = 1e-6;
    double fd = (st::conditional_value(s.tree, s.utility, s.endow, leaf,
                                       s.report.plan.phi0[leaf] + h, 0.0) -
                 st::conditional_value(s.tree, s.utility, s.endow, leaf,
                                       s.report.plan.phi0[leaf], 0.0)) /
                h;
    EXPECT_NEAR(s.cps.z0[leaf], fd, 1e-5 * (1.0 + fd));
  }
}

TEST(ShadowTest, OptimalityConditionsHold) {
  // Martingale no-trade tree: g = x and Z0 = U'(x) give exact zeros.
  st::ScenarioTree flat = st::build_binomial(1.0, 2.0, 0.5, 1.0 / 3.0, 1, 0.05);
  Solved s0 = solve_and_construct(flat, st::UtilitySpec::log_utility(),
                                  cash(1.0));
  st::OptimalityReport flat_rep = st::verify_optimality_conditions(
      s0.cps, s0.report, s0.utility, s0.endow, s0.tree);
  EXPECT_LE(flat_rep.r1, 1e-9);
  EXPECT_LE(flat_rep.r2, 1e-9);
  EXPECT_TRUE(flat_rep.pass);

  Solved s1 = solve_and_construct(one_step(), st::UtilitySpec::log_utility(),
                                  cash(1.0));
  st::OptimalityReport rep = st::verify_optimality_conditions(
      s1.cps, s1.report, s1.utility, s1.endow, s1.tree);
  EXPECT_TRUE(rep.pass);

  // Doubling the root component breaks complementarity by about Z0_0 x.
  st::CpsPair corrupted = s1.cps;
  corrupted.z0[s1.tree.root()] *= 2.0;
  st::OptimalityReport bad = st::verify_optimality_conditions(
      corrupted, s1.report, s1.utility, s1.endow, s1.tree);
  EXPECT_FALSE(bad.pass);
  EXPECT_NEAR(bad.r2, s1.cps.z0[s1.tree.root()] * 1.0, 1e-6);
}

TEST(ShadowTest, ShadowGapCloses) {
  st::ScenarioTree flat = st::build_binomial(1.0, 2.0, 0.5, 1.0 / 3.0, 1, 0.05);
  Solved s0 = solve_and_construct(flat, st::UtilitySpec::log_utility(),
                                  cash(1.0));
  st::ShadowGapReport g0 =
      st::shadow_gap(s0.tree, s0.utility, s0.endow, s0.cps, s0.report.value);
  EXPECT_GE(g0.gap, -1e-9);
  EXPECT_LE(std::abs(g0.gap), 1e-9);

  Solved s1 = solve_and_construct(one_step(), st::UtilitySpec::log_utility(),
                                  cash(1.0));
  st::ShadowGapReport g1 =
      st::shadow_gap(s1.tree, s1.utility, s1.endow, s1.cps, s1.report.value);
  EXPECT_GE(g1.gap, -1e-9);
  EXPECT_LE(g1.gap, 1e-5 * (1.0 + std::abs(s1.report.value)));
}

TEST(ShadowTest, CorruptedCpsIsVisiblyRejected) {
  // The one-step instance trades (buys at the root, sells at the leaves),
  // so an everywhere-at-the-ask price system must fail both the gap and
  // the trade-location checks.
  Solved s = solve_and_construct(one_step(), st::UtilitySpec::log_utility(),
                                 cash(1.0));
  st::CpsPair corrupted = st::corrupted_cps_at_ask(s.tree);

  st::ShadowGapReport gap =
      st::shadow_gap(s.tree, s.utility, s.endow, corrupted, s.report.value);
  EXPECT_GT(gap.gap, 1e-3);

  st::TradeLocationReport loc =
      st::trade_location_report(s.report.plan, corrupted, s.tree, 1e-6);
  EXPECT_GE(loc.violations.size(), 1u);
  for (const auto& v : loc.violations) EXPECT_EQ(v.side, 's');
}

TEST(ShadowTest, TradeLocationCleanOnOptimum) {
  Solved s = solve_and_construct(one_step(), st::UtilitySpec::log_utility(),
                                 cash(1.0));
  st::TradeLocationReport loc =
      st::trade_location_report(s.report.plan, s.cps, s.tree, 1e-6);
  EXPECT_TRUE(loc.violations.empty());
  EXPECT_GT(loc.trading_nodes, 0);

  // Buys happen at the ask, sells at the bid.
  int root = s.tree.root();
  EXPECT_NEAR(s.cps.z1[root] / s.cps.z0[root], s.tree.ask(root),
              1e-6 * s.tree.ask(root));
  for (int leaf : s.tree.leaves())
    EXPECT_NEAR(s.cps.z1[leaf] / s.cps.z0[leaf], s.tree.bid(leaf),
                1e-9 * s.tree.ask(leaf));

  // A no-trade instance has an empty trade support.
  st::ScenarioTree flat = st::build_binomial(1.0, 2.0, 0.5, 1.0 / 3.0, 1, 0.05);
  Solved s0 = solve_and_construct(flat, st::UtilitySpec::log_utility(),
                                  cash(1.0));
  st::TradeLocationReport loc0 =
      st::trade_location_report(s0.report.plan, s0.cps, s0.tree, 1e-6);
  EXPECT_EQ(loc0.trading_nodes, 0);
  EXPECT_TRUE(loc0.violations.empty());
}

TEST(ShadowTest, DualityChain) {
  // Martingale no-trade, log: V(1) + 0 + 1 = 0 = u exactly.
  st::ScenarioTree flat = st::build_binomial(1.0, 2.0, 0.5, 1.0 / 3.0, 1, 0.05);
  Solved s0 = solve_and_construct(flat, st::UtilitySpec::log_utility(),
                                  cash(1.0));
  double bound0 =
      st::duality_upper_bound(s0.cps, s0.utility, s0.endow, s0.tree);
  EXPECT_NEAR(bound0, 0.0, 1e-9);
  EXPECT_NEAR(bound0, s0.report.value, 1e-9);

  Solved s1 = solve_and_construct(one_step(), st::UtilitySpec::log_utility(),
                                  cash(1.0));
  double bound1 =
      st::duality_upper_bound(s1.cps, s1.utility, s1.endow, s1.tree);
  EXPECT_NEAR(bound1, s1.report.value,
              1e-5 * (1.0 + std::abs(s1.report.value)));

  // Random valid supermartingale pairs stay on the upper side.
  std::mt19937_64 gen(7);
  for (int k = 0; k < 10; ++k) {
    st::CpsPair random_cps = st::random_supermartingale_cps(s1.tree, gen);
    EXPECT_TRUE(st::check_cps_invariants(s1.tree, random_cps).ok);
    double bound =
        st::duality_upper_bound(random_cps, s1.utility, s1.endow, s1.tree);
    EXPECT_GE(bound, s1.report.value - 1e-8);
  }
}

TEST(ShadowTest, ConstructedPairsPassTheInvariantWalker) {
  for (const auto& inst : fixtures::small_instances(6, 41)) {
    st::SolveReport rep = st::solve_primal(inst.tree, inst.utility, inst.endow);
    ASSERT_TRUE(rep.converged) << inst.name;
    st::CpsPair cps =
        st::marginal_cps(inst.tree, inst.utility, inst.endow, rep);
    st::CpsCheck check = st::check_cps_invariants(inst.tree, cps);
    EXPECT_TRUE(check.ok) << inst.name;
    EXPECT_GE(check.sandwich_low_margin, -1e-8) << inst.name;
    EXPECT_GE(check.sandwich_high_margin, -1e-8) << inst.name;
    EXPECT_LE(check.supermartingale_residual, 1e-9) << inst.name;
  }
}

TEST(ShadowTest, InvariantWalkerFlagsBadPairs) {
  // Positive drift makes the raw price a strict submartingale, so pinning
  // Z1 = S with Z0 = 1 breaks the supermartingale property.
  st::ScenarioTree drifty = st::build_binomial(1.0, 1.5, 0.9, 0.7, 1, 0.05);
  st::CpsCheck bad =
      st::check_cps_invariants(drifty, st::corrupted_cps_at_ask(drifty));
  EXPECT_FALSE(bad.ok);

  st::CpsPair outside;
  outside.z0.assign(drifty.size(), 1.0);
  outside.z1.resize(drifty.size());
  for (int i = 0; i < drifty.size(); ++i) outside.z1[i] = drifty.ask(i) * 1.01;
  EXPECT_FALSE(st::check_cps_invariants(drifty, outside).ok);
}

TEST(ShadowTest, DeflatedWealthIsASupermartingaleForRandomPlans) {
  std::mt19937_64 gen(3);
  for (const auto& inst : fixtures::small_instances(3, 59)) {
    st::SolveReport rep = st::solve_primal(inst.tree, inst.utility, inst.endow);
    ASSERT_TRUE(rep.converged) << inst.name;
    st::CpsPair cps =
        st::marginal_cps(inst.tree, inst.utility, inst.endow, rep);
    for (int k = 0; k < 50; ++k) {
      st::TradePlan plan =
          st::random_admissible_plan(inst.tree, inst.endow.x, gen);
      EXPECT_TRUE(st::check_admissible(inst.tree, plan, inst.endow.x).empty());
      st::DeflatorCheck check =
          st::deflated_wealth_check(inst.tree, cps, plan, inst.endow.x);
      EXPECT_LE(check.worst_residual, 1e-9) << inst.name;
      EXPECT_GT(check.min_value, 0.0) << inst.name;
    }
  }
}

TEST(ShadowTest, FrictionlessDeflatedWealthIsASupermartingale) {
  // Admissible frictionless plans at the CPS prices, deflated by (Z0, Z1).
  Solved s =
      solve_and_construct(st::build_binomial(1.0, 1.7, 0.6, 0.5, 2, 0.1),
                          st::UtilitySpec::log_utility(), cash(1.0));
  st::PriceAssignment prices = st::prices_from_cps(s.tree, s.cps);
  std::mt19937_64 gen(17);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> theta(s.tree.size(), 0.0), bond(s.tree.size(), 0.0);
    for (int i = 0; i < s.tree.size(); ++i) {
      int p = s.tree.parent_index(i);
      double wealth =
          p < 0 ? s.endow.x : bond[p] + theta[p] * prices.s_z[i];
      if (s.tree.is_leaf(i)) {
        bond[i] = wealth;
        continue;
      }
      theta[i] = st::rng::uniform01(gen) * 0.8 * wealth / prices.s_z[i];
      bond[i] = wealth - theta[i] * prices.s_z[i];
    }
    for (int i = 0; i < s.tree.size(); ++i) {
      if (s.tree.is_leaf(i)) continue;
      double current = s.cps.z0[i] * bond[i] + s.cps.z1[i] * theta[i];
      double expected = 0.0;
      for (int c : s.tree.children(i))
        expected += s.tree.node(c).prob *
                    (s.cps.z0[c] * bond[c] + s.cps.z1[c] * theta[c]);
      EXPECT_LE(expected, current + 1e-9);
    }
  }
}

TEST(ShadowTest, DualitySandwichForCpsDerivedPrices) {
  // u^Z <= E[V(Z0_T)] + E[Z0_T e_T] + Z0_0 x for the constructed pair.
  std::mt19937_64 gen(91);
  st::ScenarioTree tree = st::build_binomial(1.0, 1.6, 0.7, 0.45, 2, 0.05);
  st::EndowmentSpec endow = fixtures::random_endowment(tree, 1.0, gen, true);
  Solved s = solve_and_construct(tree, st::UtilitySpec::log_utility(), endow);
  st::ShadowGapReport gap =
      st::shadow_gap(s.tree, s.utility, s.endow, s.cps, s.report.value);
  double bound = st::duality_upper_bound(s.cps, s.utility, s.endow, s.tree);
  EXPECT_LE(gap.frictionless_value, bound + 1e-8);
}

TEST(ShadowTest, FiniteDifferenceAndKktMethodsAgreeWhereTradesHappen) {
  for (const auto& inst : fixtures::small_instances(6, 67)) {
    st::SolveReport rep = st::solve_primal(inst.tree, inst.utility, inst.endow);
    ASSERT_TRUE(rep.converged) << inst.name;
    st::CpsPair fd = st::marginal_cps(inst.tree, inst.utility, inst.endow, rep);
    st::CpsPair kkt =
        st::kkt_multiplier_cps(inst.tree, inst.utility, inst.endow, rep);
    EXPECT_TRUE(st::check_cps_invariants(inst.tree, kkt).ok) << inst.name;
    for (int i = 0; i < inst.tree.size(); ++i) {
      if (rep.plan.buy[i] <= 1e-6 && rep.plan.sell[i] <= 1e-6) continue;
      double p_fd = fd.z1[i] / fd.z0[i];
      double p_kkt = kkt.z1[i] / kkt.z0[i];
      EXPECT_NEAR(p_fd, p_kkt, 1e-4 * p_kkt)
          << inst.name << " node " << inst.tree.node(i).id;
    }
  }
}

TEST(ShadowTest, ConstructionGuards) {
  Solved s = solve_and_construct(one_step(), st::UtilitySpec::log_utility(),
                                 cash(1.0));
  EXPECT_THROW(st::marginal_cps(s.tree, s.utility, s.endow, s.report, 1e-8),
               st::CpsError);
  EXPECT_THROW(st::marginal_cps(s.tree, s.utility, s.endow, s.report, 1e-2),
               st::CpsError);
  st::SolveReport unconverged = s.report;
  unconverged.converged = false;
  EXPECT_THROW(st::marginal_cps(s.tree, s.utility, s.endow, unconverged),
               st::CpsError);
}

TEST(ShadowTest, CpsJsonRoundTrip) {
  Solved s = solve_and_construct(one_step(), st::UtilitySpec::log_utility(),
                                 cash(1.0));
  st::CpsPair back = st::load_cps(s.tree, st::serialize_cps(s.tree, s.cps));
  for (int i = 0; i < s.tree.size(); ++i) {
    EXPECT_EQ(back.z0[i], s.cps.z0[i]);
    EXPECT_EQ(back.z1[i], s.cps.z1[i]);
  }
  EXPECT_EQ(back.method, s.cps.method);
}

TEST(ShadowTest, DeterministicConstruction) {
  Solved a = solve_and_construct(one_step(), st::UtilitySpec::log_utility(),
                                 cash(1.0));
  Solved b = solve_and_construct(one_step(), st::UtilitySpec::log_utility(),
                                 cash(1.0));
  for (int i = 0; i < a.tree.size(); ++i) {
    EXPECT_EQ(a.cps.z0[i], b.cps.z0[i]);
    EXPECT_EQ(a.cps.z1[i], b.cps.z1[i]);
  }
}

}  // namespace
