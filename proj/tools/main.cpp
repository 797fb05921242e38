// Command-line front end: load -> solve -> construct CPS -> verify -> report,
// plus the frozen Black-Scholes replication harness.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "shadowtree/bs_example.hpp"
#include "shadowtree/friction.hpp"
#include "shadowtree/frictionless.hpp"
#include "shadowtree/market.hpp"
#include "shadowtree/shadow.hpp"
#include "shadowtree/utility.hpp"

namespace st = shadowtree;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOperational = 1;
constexpr int kExitVerification = 2;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json doc;
  in >> doc;
  return doc;
}

void write_json_file(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(2) << "\n";
}

// Utility specs may be given inline ('{"family":"log"}') or as a file path.
st::UtilitySpec parse_utility(const std::string& arg) {
  if (!arg.empty() && arg.front() == '{')
    return st::load_utility(json::parse(arg));
  return st::load_utility(read_json_file(arg));
}

struct Tolerances {
  double sandwich = 1e-8;
  double supermartingale = 1e-9;
  double gap = 1e-5;        // relative, 1e-5 * (1+|u|)
  double dominance = 1e-9;  // absolute one-sided slack
  double residuals = 1e-5;  // Lemma-style r1/r2, relative
  double location = 1e-6;
  double duality = 1e-5;  // relative equality of the chain
  double deflator = 1e-9;
  double dp = 1e-6;
};

json to_json(const Tolerances& t) {
  return json{{"sandwich", t.sandwich},
              {"supermartingale", t.supermartingale},
              {"gap", t.gap},
              {"dominance", t.dominance},
              {"residuals", t.residuals},
              {"location", t.location},
              {"duality", t.duality},
              {"deflator", t.deflator},
              {"dp", t.dp}};
}

json solve_report_json(const st::ScenarioTree& tree,
                       const st::SolveReport& rep) {
  return json{{"schema", "1"},
              {"value", rep.value},
              {"iterations", rep.iterations},
              {"kkt_residual", rep.kkt_residual},
              {"converged", rep.converged},
              {"plan", st::serialize_plan(tree, rep.plan)}};
}

// Full verification chain for a solved instance and a candidate CPS.
json run_verification(const st::ScenarioTree& tree, const st::UtilitySpec& u,
                      const st::EndowmentSpec& endow,
                      const st::SolveReport& primal, const st::CpsPair& cps,
                      const Tolerances& tol, std::uint64_t seed,
                      int random_plans, bool& pass) {
  json out;
  pass = true;
  const double u_val = primal.value;

  st::CpsCheck invariants =
      st::check_cps_invariants(tree, cps, tol.sandwich, tol.supermartingale);
  out["cps_invariants"] = {
      {"pass", invariants.ok},
      {"sandwich_low_margin", invariants.sandwich_low_margin},
      {"sandwich_high_margin", invariants.sandwich_high_margin},
      {"supermartingale_residual", invariants.supermartingale_residual},
      {"violations", invariants.violations}};
  pass = pass && invariants.ok;

  st::OptimalityReport opt =
      st::verify_optimality_conditions(cps, primal, u, endow, tree);
  out["optimality_conditions"] = {{"pass", opt.pass},
                                  {"r1", opt.r1},
                                  {"r2", opt.r2},
                                  {"threshold", opt.threshold}};
  pass = pass && opt.pass;

  st::ShadowGapReport gap = st::shadow_gap(tree, u, endow, cps, u_val);
  bool gap_ok = gap.frictionless_report.converged &&
                gap.gap >= -tol.dominance &&
                gap.gap <= tol.gap * (1.0 + std::abs(u_val));
  out["shadow_gap"] = {{"pass", gap_ok},
                       {"frictional_value", u_val},
                       {"frictionless_value", gap.frictionless_value},
                       {"gap", gap.gap}};
  pass = pass && gap_ok;

  st::TradeLocationReport loc =
      st::trade_location_report(primal.plan, cps, tree, tol.location);
  json violations = json::array();
  for (const auto& v : loc.violations)
    violations.push_back(json{{"node", v.node},
                              {"side", std::string(1, v.side)},
                              {"implied_price", v.implied_price},
                              {"required", v.required}});
  out["trade_location"] = {{"pass", loc.violations.empty()},
                           {"trading_nodes", loc.trading_nodes},
                           {"violations", violations}};
  pass = pass && loc.violations.empty();

  double bound = st::duality_upper_bound(cps, u, endow, tree);
  bool duality_ok =
      std::abs(bound - u_val) <= tol.duality * (1.0 + std::abs(u_val)) &&
      bound >= gap.frictionless_value - 1e-8;
  out["duality"] = {{"pass", duality_ok},
                    {"upper_bound", bound},
                    {"chain_residual", std::abs(bound - u_val)}};
  pass = pass && duality_ok;

  std::mt19937_64 gen(seed);
  double worst_deflator = -std::numeric_limits<double>::infinity();
  double min_deflated = std::numeric_limits<double>::infinity();
  for (int k = 0; k < random_plans; ++k) {
    st::TradePlan plan = st::random_admissible_plan(tree, endow.x, gen);
    st::DeflatorCheck check =
        st::deflated_wealth_check(tree, cps, plan, endow.x);
    worst_deflator = std::max(worst_deflator, check.worst_residual);
    min_deflated = std::min(min_deflated, check.min_value);
  }
  bool deflator_ok = random_plans == 0 ||
                     (worst_deflator <= tol.deflator && min_deflated > 0.0);
  out["deflated_wealth"] = {{"pass", deflator_ok},
                            {"plans", random_plans},
                            {"worst_residual", worst_deflator},
                            {"min_value", min_deflated}};
  pass = pass && deflator_ok;

  st::DpCheck dp = st::dp_martingale_check(tree, u, endow, primal);
  bool dp_ok = dp.worst_residual <= tol.dp;
  out["dp_martingale"] = {{"pass", dp_ok},
                          {"worst_residual", dp.worst_residual},
                          {"nodes_checked", dp.nodes_checked}};
  pass = pass && dp_ok;

  out["pass"] = pass;
  return out;
}

void print_summary(const json& report, const std::vector<std::string>& keys) {
  for (const auto& key : keys)
    if (report.contains(key)) std::cout << key << ": " << report[key] << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shadow prices on frictional scenario trees"};
  app.require_subcommand(1);

  std::string tree_path, endow_path, utility_arg = R"({"family":"log"})";
  std::string prices_path, cps_path, plan_path, out_path;
  double eps = 1e-5;
  std::string method = "fd";
  std::uint64_t seed = 20240810;
  int random_plans = 50;
  int threads = 0;
  Tolerances tol;

  auto add_common = [&](CLI::App* cmd, bool needs_tree = true) {
    if (needs_tree)
      cmd->add_option("--tree", tree_path, "tree JSON")->required();
    cmd->add_option("--endow", endow_path, "endowment JSON");
    cmd->add_option("--utility", utility_arg, "utility JSON (inline or path)");
    cmd->add_option("--out", out_path, "report output path");
    cmd->add_option("--seed", seed, "seed for randomized checks");
    cmd->add_option("--threads", threads, "worker cap (0 = machine)");
    cmd->add_option("--tol-sandwich", tol.sandwich, "");
    cmd->add_option("--tol-supermartingale", tol.supermartingale, "");
    cmd->add_option("--tol-gap", tol.gap, "");
    cmd->add_option("--tol-residuals", tol.residuals, "");
    cmd->add_option("--tol-location", tol.location, "");
    cmd->add_option("--tol-dp", tol.dp, "");
  };

  CLI::App* solve = app.add_subcommand("solve", "solve the frictional problem");
  add_common(solve);

  CLI::App* solve_fl = app.add_subcommand(
      "solve-frictionless", "solve the constrained frictionless problem");
  add_common(solve_fl);
  solve_fl->add_option("--prices", prices_path, "prices JSON")->required();

  CLI::App* shadow =
      app.add_subcommand("shadow", "construct the candidate CPS");
  add_common(shadow);
  shadow->add_option("--eps", eps, "finite-difference step");
  shadow->add_option("--method", method, "fd | kkt");
  std::string plan_out;
  shadow->add_option("--plan-out", plan_out, "also write the solved plan");

  CLI::App* verify = app.add_subcommand("verify", "verify a CPS against a plan");
  add_common(verify);
  verify->add_option("--cps", cps_path, "CPS JSON")->required();
  verify->add_option("--plan", plan_path, "plan or solve-report JSON")
      ->required();
  verify->add_option("--plans", random_plans, "random admissible plans");

  CLI::App* pipeline =
      app.add_subcommand("pipeline", "solve, construct and verify end to end");
  add_common(pipeline);
  pipeline->add_option("--eps", eps, "finite-difference step");
  pipeline->add_option("--method", method, "fd | kkt");
  pipeline->add_option("--plans", random_plans, "random admissible plans");

  CLI::App* bs = app.add_subcommand("bs-example",
                                    "frozen Black-Scholes replication");
  st::bs::BsParams bsp;
  std::vector<std::string> probe_args;
  bs->add_option("--T", bsp.horizon, "horizon");
  bs->add_option("--lambda", bsp.lambda, "transaction cost level");
  bs->add_option("--grid", bsp.grid_points, "grid points on [0, T/2]");
  bs->add_option("--paths", bsp.n_paths, "Monte Carlo paths");
  bs->add_option("--seed", bsp.seed, "RNG seed");
  bs->add_option("--out", out_path, "report output path");
  bs->add_option("--probe", probe_args, "extra probe name:param");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed() || solve_fl->parsed()) {
      st::ScenarioTree tree = st::load_tree(read_json_file(tree_path));
      st::UtilitySpec u = parse_utility(utility_arg);
      st::EndowmentSpec endow;
      if (!endow_path.empty()) endow = st::load_endowment(read_json_file(endow_path));
      st::SolveReport rep;
      if (solve->parsed()) {
        rep = st::solve_primal(tree, u, endow);
      } else {
        st::PriceAssignment prices =
            st::load_prices(tree, read_json_file(prices_path));
        rep = st::solve_frictionless(tree, prices, u, endow);
      }
      json report = solve_report_json(tree, rep);
      if (!out_path.empty()) write_json_file(out_path, report);
      print_summary(report, {"value", "iterations", "kkt_residual", "converged"});
      return rep.converged ? kExitOk : kExitOperational;
    }

    if (shadow->parsed()) {
      st::ScenarioTree tree = st::load_tree(read_json_file(tree_path));
      st::UtilitySpec u = parse_utility(utility_arg);
      st::EndowmentSpec endow = st::load_endowment(read_json_file(endow_path));
      st::SolveReport rep = st::solve_primal(tree, u, endow);
      if (!rep.converged) {
        std::cerr << "primal solve did not converge\n";
        return kExitOperational;
      }
      st::CpsPair cps;
      try {
        if (method == "kkt") {
          cps = st::kkt_multiplier_cps(tree, u, endow, rep);
        } else {
          st::CpsOptions copt;
          copt.threads = threads;
          cps = st::marginal_cps(tree, u, endow, rep, eps, copt);
        }
      } catch (const st::CpsError& e) {
        std::cerr << "CPS construction rejected: " << e.what() << "\n";
        return kExitVerification;
      }
      json doc = st::serialize_cps(tree, cps);
      doc["schema"] = "1";
      if (!out_path.empty()) write_json_file(out_path, doc);
      if (!plan_out.empty()) {
        json p = solve_report_json(tree, rep);
        write_json_file(plan_out, p);
      }
      std::cout << "method: " << st::to_string(cps.method)
                << "\nz0_root: " << cps.z0[tree.root()] << "\n";
      return kExitOk;
    }

    if (verify->parsed()) {
      st::ScenarioTree tree = st::load_tree(read_json_file(tree_path));
      st::UtilitySpec u = parse_utility(utility_arg);
      st::EndowmentSpec endow = st::load_endowment(read_json_file(endow_path));
      st::CpsPair cps = st::load_cps(tree, read_json_file(cps_path));
      json plan_doc = read_json_file(plan_path);
      if (plan_doc.contains("plan")) plan_doc = plan_doc.at("plan");
      st::SolveReport rep;
      rep.plan = st::load_plan(tree, plan_doc);
      rep.value = st::plan_value(
          tree, rep.plan, u, st::endowment_by_node(tree, endow, true));
      rep.converged = true;
      bool pass = false;
      json report = run_verification(tree, u, endow, rep, cps, tol, seed,
                                     random_plans, pass);
      report["schema"] = "1";
      report["tolerances"] = to_json(tol);
      if (!out_path.empty()) write_json_file(out_path, report);
      print_summary(report, {"pass"});
      std::cout << report["cps_invariants"]["violations"].size()
                << " invariant violation(s), "
                << report["trade_location"]["violations"].size()
                << " location violation(s)\n";
      return pass ? kExitOk : kExitVerification;
    }

    if (pipeline->parsed()) {
      st::ScenarioTree tree = st::load_tree(read_json_file(tree_path));
      st::UtilitySpec u = parse_utility(utility_arg);
      st::EndowmentSpec endow = st::load_endowment(read_json_file(endow_path));
      st::SolveReport rep = st::solve_primal(tree, u, endow);
      if (!rep.converged) {
        std::cerr << "primal solve did not converge\n";
        return kExitOperational;
      }
      st::CpsPair cps;
      try {
        if (method == "kkt") {
          cps = st::kkt_multiplier_cps(tree, u, endow, rep);
        } else {
          st::CpsOptions copt;
          copt.threads = threads;
          cps = st::marginal_cps(tree, u, endow, rep, eps, copt);
        }
      } catch (const st::CpsError& e) {
        json report{{"schema", "1"}, {"pass", false}, {"error", e.what()}};
        if (!out_path.empty()) write_json_file(out_path, report);
        std::cerr << "CPS construction rejected: " << e.what() << "\n";
        return kExitVerification;
      }
      bool pass = false;
      json report = run_verification(tree, u, endow, rep, cps, tol, seed,
                                     random_plans, pass);
      report["schema"] = "1";
      report["tolerances"] = to_json(tol);
      report["value"] = rep.value;
      report["cps_method"] = st::to_string(cps.method);
      report["eps"] = cps.epsilon_used;
      report["seed"] = seed;
      if (!out_path.empty()) write_json_file(out_path, report);
      std::cout << "u: " << report["shadow_gap"]["frictional_value"]
                << "\nu_shadow: " << report["shadow_gap"]["frictionless_value"]
                << "\ngap: " << report["shadow_gap"]["gap"]
                << "\npass: " << report["pass"] << "\n";
      return pass ? kExitOk : kExitVerification;
    }

    if (bs->parsed()) {
      st::bs::validate(bsp);
      st::bs::PathEnsemble ens = st::bs::simulate_paths(bsp);
      st::bs::SandwichReport sandwich = st::bs::sandwich_check(ens, bsp);
      st::bs::UtilityEstimates est =
          st::bs::estimate_utilities(ens, bsp, st::UtilitySpec::log_utility());
      double closed_form = st::bs::closed_form_value(bsp);

      json probes = json::array();
      bool witnesses_ok = true;
      auto run_probe = [&](const st::bs::ProbeSpec& spec, bool expect_witness) {
        st::bs::ProbeReport pr = st::bs::maximality_probe(ens, bsp, spec);
        probes.push_back(json{{"name", pr.name},
                              {"parameter", pr.parameter},
                              {"witness_count", pr.witness_count},
                              {"witness_examples", pr.witness_examples},
                              {"p_estimate", pr.p_estimate},
                              {"utility_minus_infinity",
                               pr.utility_minus_infinity}});
        if (expect_witness && pr.witness_count < 1) witnesses_ok = false;
        if (!expect_witness && pr.witness_count != 0) witnesses_ok = false;
      };
      run_probe({"buy-hold-sell", 0.0}, false);
      for (const auto& spec : st::bs::default_probe_catalog(bsp))
        run_probe(spec, true);
      for (const auto& arg : probe_args) {
        auto colon = arg.find(':');
        st::bs::ProbeSpec spec;
        spec.name = arg.substr(0, colon);
        if (colon != std::string::npos)
          spec.parameter = std::stod(arg.substr(colon + 1));
        run_probe(spec, true);
      }

      double se_distance =
          est.frictional_se > 0.0
              ? std::abs(est.frictional_mean - closed_form) / est.frictional_se
              : std::numeric_limits<double>::infinity();
      bool pass = sandwich.ok && est.max_abs_path_diff == 0.0 &&
                  !est.minus_infinity && se_distance <= 4.0 && witnesses_ok;
      json report{
          {"schema", "1"},
          {"params",
           {{"T", bsp.horizon},
            {"lambda", bsp.lambda},
            {"grid_points", bsp.grid_points},
            {"n_paths", bsp.n_paths},
            {"seed", bsp.seed}}},
          {"sandwich",
           {{"pass", sandwich.ok},
            {"min_log_ratio", sandwich.min_log_ratio},
            {"max_log_ratio", sandwich.max_log_ratio},
            {"checked", sandwich.checked}}},
          {"estimates",
           {{"frictional_mean", est.frictional_mean},
            {"frictional_se", est.frictional_se},
            {"frictionless_mean", est.frictionless_mean},
            {"frictionless_se", est.frictionless_se},
            {"max_abs_path_diff", est.max_abs_path_diff},
            {"closed_form", closed_form},
            {"se_distance", se_distance}}},
          {"probes", probes},
          {"pass", pass}};
      if (!out_path.empty()) write_json_file(out_path, report);
      std::cout << "sandwich_ok: " << sandwich.ok
                << "\npath_diff: " << est.max_abs_path_diff
                << "\nmean: " << est.frictional_mean << " (closed form "
                << closed_form << ", " << se_distance << " SE)"
                << "\npass: " << pass << "\n";
      return pass ? kExitOk : kExitVerification;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOperational;
  }
  return kExitOperational;
}
