#pragma once

// Randomized desk-scale instances shared by the solver, shadow and
// acceptance suites. Deterministic for a given seed.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "shadowtree/market.hpp"
#include "shadowtree/rng.hpp"
#include "shadowtree/utility.hpp"

namespace fixtures {

namespace st = shadowtree;

struct Instance {
  std::string name;
  st::ScenarioTree tree;
  st::UtilitySpec utility;
  st::EndowmentSpec endow;
};

inline st::EndowmentSpec random_endowment(const st::ScenarioTree& tree,
                                          double x, std::mt19937_64& gen,
                                          bool with_endowment) {
  st::EndowmentSpec endow;
  endow.x = x;
  if (with_endowment)
    for (int leaf : tree.leaves())
      endow.e_leaf[tree.node(leaf).id] = st::rng::uniform_in(gen, 0.0, 1.0);
  return endow;
}

// 1-2 step binomial/trinomial instances over the acceptance grid:
// lambda in {0.01, 0.05, 0.2}, log and power-0.5, x in {0.5, 1, 2},
// leaf endowments in [0, 1].
inline std::vector<Instance> small_instances(int count, std::uint64_t seed) {
  const double lambdas[] = {0.01, 0.05, 0.2};
  const double wealths[] = {0.5, 1.0, 2.0};
  std::mt19937_64 gen(seed);
  std::vector<Instance> out;
  for (int k = 0; k < count; ++k) {
    double lambda = lambdas[k % 3];
    double x = wealths[(k / 3) % 3];
    int steps = 1 + k % 2;
    bool trinomial = (k % 4) == 3;
    double s0 = st::rng::uniform_in(gen, 0.5, 3.0);
    double up = st::rng::uniform_in(gen, 1.1, 1.9);
    double down = st::rng::uniform_in(gen, 0.45, 0.92);
    double p_up = st::rng::uniform_in(gen, 0.2, 0.4);
    st::ScenarioTree tree =
        trinomial
            ? st::build_multinomial(s0, {up, 1.0, down},
                                    {p_up, 0.3, 0.7 - p_up}, steps, lambda)
            : st::build_binomial(s0, up, down,
                                 st::rng::uniform_in(gen, 0.2, 0.8), steps,
                                 lambda);
    Instance inst{
        "small_" + std::to_string(k), std::move(tree),
        (k % 2) == 0 ? st::UtilitySpec::log_utility()
                     : st::UtilitySpec::power(0.5),
        {}};
    inst.endow = random_endowment(inst.tree, x, gen, (k % 3) != 0);
    out.push_back(std::move(inst));
  }
  return out;
}

// Depth-<=4 binomial instances for the end-to-end pipeline checks.
inline std::vector<Instance> pipeline_instances(int count,
                                                std::uint64_t seed) {
  const double lambdas[] = {0.01, 0.05, 0.2};
  const double wealths[] = {0.5, 1.0, 2.0};
  std::mt19937_64 gen(seed + 17);
  std::vector<Instance> out;
  for (int k = 0; k < count; ++k) {
    double lambda = lambdas[k % 3];
    double x = wealths[(k / 3) % 3];
    int steps = 3 + k % 2;
    st::ScenarioTree tree = st::build_binomial(
        st::rng::uniform_in(gen, 0.5, 3.0),
        st::rng::uniform_in(gen, 1.1, 1.7),
        st::rng::uniform_in(gen, 0.55, 0.92),
        st::rng::uniform_in(gen, 0.25, 0.75), steps, lambda);
    Instance inst{
        "pipeline_" + std::to_string(k), std::move(tree),
        (k % 2) == 0 ? st::UtilitySpec::log_utility()
                     : st::UtilitySpec::power(0.5),
        {}};
    inst.endow = random_endowment(inst.tree, x, gen, (k % 3) != 2);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace fixtures
