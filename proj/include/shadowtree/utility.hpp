#pragma once

#include <json.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "shadowtree/market.hpp"

namespace shadowtree {

// Utility takes the value -infinity on the non-positive half line; a single
// leaf at the sentinel drags any expectation down to it.
inline constexpr double kMinusInf = -std::numeric_limits<double>::infinity();

enum class UtilityFamily { kLog, kPower };

// Closed-form utility family on (0,inf). Only log and power are admitted so
// that the marginal U' and the conjugate V stay exact.
struct UtilitySpec {
  UtilityFamily family = UtilityFamily::kLog;
  double gamma = 0.0;  // power exponent, gamma < 1, gamma != 0

  static UtilitySpec log_utility() { return {UtilityFamily::kLog, 0.0}; }
  static UtilitySpec power(double gamma) {
    if (!(gamma < 1.0) || gamma == 0.0)
      throw ValidationError("power utility needs gamma < 1, gamma != 0");
    return {UtilityFamily::kPower, gamma};
  }
};

inline double evaluate(const UtilitySpec& u, double w) {
  if (!(w > 0.0)) return kMinusInf;
  switch (u.family) {
    case UtilityFamily::kLog:
      return std::log(w);
    case UtilityFamily::kPower:
      return std::pow(w, u.gamma) / u.gamma;
  }
  return kMinusInf;
}

inline double marginal(const UtilitySpec& u, double w) {
  if (!(w > 0.0)) throw std::domain_error("marginal utility needs w > 0");
  switch (u.family) {
    case UtilityFamily::kLog:
      return 1.0 / w;
    case UtilityFamily::kPower:
      return std::pow(w, u.gamma - 1.0);
  }
  return 0.0;
}

// Convex conjugate V(y) = sup_{w>0} (U(w) - w y).
inline double conjugate(const UtilitySpec& u, double y) {
  if (!(y > 0.0)) throw std::domain_error("conjugate needs y > 0");
  switch (u.family) {
    case UtilityFamily::kLog:
      return -std::log(y) - 1.0;
    case UtilityFamily::kPower:
      return (1.0 - u.gamma) / u.gamma *
             std::pow(y, u.gamma / (u.gamma - 1.0));
  }
  return 0.0;
}

// Reasonable asymptotic elasticity, limsup_{w->inf} w U'(w)/U(w). For the
// admitted families this is 0 (log, and power with gamma < 0 after the
// customary constant shift) or gamma (power with 0 < gamma < 1).
inline double asymptotic_elasticity(const UtilitySpec& u) {
  if (u.family == UtilityFamily::kPower && u.gamma > 0.0) return u.gamma;
  return 0.0;
}

inline bool asymptotic_elasticity_ok(const UtilitySpec& u) {
  return asymptotic_elasticity(u) < 1.0;
}

inline UtilitySpec load_utility(const nlohmann::json& doc) {
  const std::string family = doc.at("family").get<std::string>();
  if (family == "log") return UtilitySpec::log_utility();
  if (family == "power") return UtilitySpec::power(doc.at("gamma").get<double>());
  throw ValidationError("unknown utility family: " + family);
}

inline nlohmann::json serialize(const UtilitySpec& u) {
  if (u.family == UtilityFamily::kLog) return {{"family", "log"}};
  return {{"family", "power"}, {"gamma", u.gamma}};
}

}  // namespace shadowtree
