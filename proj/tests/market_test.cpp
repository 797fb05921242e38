#include "shadowtree/market.hpp"

#include <gtest/gtest.h>

#include <random>

#include "shadowtree/rng.hpp"

namespace st = shadowtree;
using nlohmann::json;

namespace {

json one_step_doc() {
  return json::parse(R"({
    "lambda": 0.01, "horizon_steps": 1,
    "nodes": [
      {"id": "0",  "parent": null, "t": 0, "price": 1.0, "prob": 1.0},
      {"id": "0u", "parent": "0",  "t": 1, "price": 2.0, "prob": 0.5},
      {"id": "0d", "parent": "0",  "t": 1, "price": 0.5, "prob": 0.5}
    ]})");
}

TEST(MarketTest, LoadsSmallestValidTree) {
  st::ScenarioTree tree = st::load_tree(one_step_doc());
  EXPECT_EQ(tree.size(), 3);
  EXPECT_EQ(tree.horizon_steps(), 1);
  EXPECT_EQ(tree.leaves().size(), 2u);
  EXPECT_DOUBLE_EQ(tree.price(tree.index_of("0u")), 2.0);
  EXPECT_DOUBLE_EQ(tree.path_probability(tree.index_of("0d")), 0.5);
}

TEST(MarketTest, RejectsDegenerateHorizon) {
  json doc = {{"lambda", 0.01},
              {"horizon_steps", 0},
              {"nodes",
               json::array({{{"id", "0"},
                             {"parent", nullptr},
                             {"t", 0},
                             {"price", 1.0},
                             {"prob", 1.0}}})}};
  try {
    st::load_tree(doc);
    FAIL() << "expected rejection";
  } catch (const st::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("horizon"), std::string::npos);
  }
}

TEST(MarketTest, RejectsProbabilitiesNotSummingToOne) {
  json doc = one_step_doc();
  doc["nodes"][1]["prob"] = 0.6;
  doc["nodes"][2]["prob"] = 0.3;
  try {
    st::load_tree(doc);
    FAIL() << "expected rejection";
  } catch (const st::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("sum to 0.9"), std::string::npos);
  }
}

TEST(MarketTest, RejectsBadInputs) {
  json doc = one_step_doc();
  doc["nodes"][1]["price"] = -2.0;
  EXPECT_THROW(st::load_tree(doc), st::ValidationError);

  doc = one_step_doc();
  doc["nodes"][1]["parent"] = "nonexistent";
  EXPECT_THROW(st::load_tree(doc), st::ValidationError);

  doc = one_step_doc();
  doc["lambda"] = 1.5;
  EXPECT_THROW(st::load_tree(doc), st::ValidationError);

  doc = one_step_doc();
  doc["lambda"] = 0.0;
  EXPECT_THROW(st::load_tree(doc), st::ValidationError);
}

TEST(MarketTest, BidAsk) {
  st::ScenarioTree tree = st::load_tree(one_step_doc());
  auto [bid, ask] = st::bid_ask(tree, "0u");
  EXPECT_DOUBLE_EQ(bid, 1.98);
  EXPECT_DOUBLE_EQ(ask, 2.0);

  st::ScenarioTree half = st::build_binomial(1.0, 2.0, 0.5, 0.5, 1, 0.5);
  auto [b2, a2] = st::bid_ask(half, "0");
  EXPECT_DOUBLE_EQ(b2, 0.5);
  EXPECT_DOUBLE_EQ(a2, 1.0);

  EXPECT_THROW(st::bid_ask(tree, "missing"), st::ValidationError);
}

TEST(MarketTest, FrictionlessLimitOfTheSpread) {
  st::ScenarioTree tree = st::build_binomial(2.0, 2.0, 0.5, 0.5, 1, 1e-12);
  auto [bid, ask] = st::bid_ask(tree, "0");
  EXPECT_NEAR(bid, ask, 1e-11);
}

TEST(MarketTest, BinomialBuilder) {
  st::ScenarioTree tree = st::build_binomial(1.0, 2.0, 0.5, 0.5, 1, 0.01);
  ASSERT_EQ(tree.leaves().size(), 2u);
  EXPECT_DOUBLE_EQ(tree.price(tree.leaves()[0]), 2.0);
  EXPECT_DOUBLE_EQ(tree.price(tree.leaves()[1]), 0.5);

  st::ScenarioTree two = st::build_binomial(100.0, 1.1, 0.9, 0.5, 2, 0.05);
  ASSERT_EQ(two.leaves().size(), 4u);
  std::vector<double> prices;
  for (int leaf : two.leaves()) prices.push_back(two.price(leaf));
  std::sort(prices.begin(), prices.end());
  EXPECT_NEAR(prices[0], 81.0, 1e-12);
  EXPECT_NEAR(prices[1], 99.0, 1e-12);
  EXPECT_NEAR(prices[2], 99.0, 1e-12);
  EXPECT_NEAR(prices[3], 121.0, 1e-12);

  EXPECT_THROW(st::build_binomial(1.0, 2.0, 0.5, 0.5, 13, 0.01),
               st::ValidationError);
}

TEST(MarketTest, RoundTripIsExact) {
  std::mt19937_64 gen(7);
  for (int round = 0; round < 20; ++round) {
    double up = st::rng::uniform_in(gen, 1.05, 2.0);
    double down = st::rng::uniform_in(gen, 0.4, 0.95);
    double p = st::rng::uniform_in(gen, 0.15, 0.85);
    int steps = 1 + static_cast<int>(gen() % 4);
    st::ScenarioTree tree =
        st::build_binomial(st::rng::uniform_in(gen, 0.5, 150.0), up, down, p,
                           steps, st::rng::uniform_in(gen, 0.001, 0.5));
    st::ScenarioTree back = st::load_tree(st::serialize(tree));
    ASSERT_EQ(back.size(), tree.size());
    EXPECT_DOUBLE_EQ(back.lambda(), tree.lambda());
    for (int i = 0; i < tree.size(); ++i) {
      EXPECT_EQ(back.node(i).id, tree.node(i).id);
      // Bit-equal prices, probabilities preserved through text.
      EXPECT_EQ(back.price(i), tree.price(i));
      EXPECT_NEAR(back.node(i).prob, tree.node(i).prob, 1e-15);
    }
  }
}

TEST(MarketTest, PathProbabilitiesSumToOne) {
  std::mt19937_64 gen(11);
  for (int round = 0; round < 10; ++round) {
    st::ScenarioTree tree = st::build_multinomial(
        1.0, {1.3, 1.0, 0.7}, {0.3, 0.45, 0.25},
        1 + static_cast<int>(gen() % 3), 0.05);
    double total = 0.0;
    for (int leaf : tree.leaves()) total += tree.path_probability(leaf);
    EXPECT_NEAR(total, 1.0, 1e-10);
  }
}

TEST(MarketTest, BidBelowAskForAllLambda) {
  for (double lambda : {1e-6, 0.01, 0.2, 0.5, 0.97}) {
    st::ScenarioTree tree = st::build_binomial(3.0, 1.4, 0.8, 0.4, 3, lambda);
    for (int i = 0; i < tree.size(); ++i) EXPECT_LT(tree.bid(i), tree.ask(i));
  }
}

TEST(MarketTest, EndowmentValidation) {
  st::ScenarioTree tree = st::load_tree(one_step_doc());
  st::EndowmentSpec endow;
  endow.x = 1.0;
  endow.e_leaf["0u"] = 0.25;
  auto e = st::endowment_by_node(tree, endow);
  EXPECT_DOUBLE_EQ(e[tree.index_of("0u")], 0.25);
  EXPECT_DOUBLE_EQ(e[tree.index_of("0d")], 0.0);

  endow.e_leaf["0"] = 1.0;  // not a leaf
  EXPECT_THROW(st::endowment_by_node(tree, endow), st::ValidationError);
  endow.e_leaf.erase("0");

  endow.e_leaf["0d"] = -0.5;
  EXPECT_THROW(st::endowment_by_node(tree, endow), st::ValidationError);
  EXPECT_NO_THROW(st::endowment_by_node(tree, endow, true));

  endow.x = 0.0;
  EXPECT_THROW(st::endowment_by_node(tree, endow, true), st::ValidationError);
}

}  // namespace
