#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace shadowtree {

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

using NodeId = std::string;

// One event-tree node. `prob` is the conditional transition probability
// given the parent; the root's prob is conventionally 1 and never enters
// path weights.
struct Node {
  NodeId id;
  int time_index = 0;
  std::optional<NodeId> parent;
  double price = 0.0;
  double prob = 1.0;
};

// Finite event tree over ask prices S_n with proportional transaction cost
// lambda. Nodes are stored parents-first; the filtration is the node
// partition itself (paths never recombine). Immutable once built, safe for
// concurrent reads.
class ScenarioTree {
 public:
  static ScenarioTree from_nodes(std::vector<Node> nodes, double lambda,
                                 int horizon_steps) {
    ScenarioTree t;
    t.lambda_ = lambda;
    t.horizon_ = horizon_steps;
    t.build(std::move(nodes));
    return t;
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int i) const { return nodes_[i]; }
  int root() const { return root_; }
  double lambda() const { return lambda_; }
  int horizon_steps() const { return horizon_; }

  int parent_index(int i) const { return parent_[i]; }
  const std::vector<int>& children(int i) const { return children_[i]; }
  bool is_leaf(int i) const { return children_[i].empty(); }
  const std::vector<int>& leaves() const { return leaves_; }

  int index_of(const NodeId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("unknown node id: " + id);
    return it->second;
  }
  bool contains(const NodeId& id) const { return index_.count(id) > 0; }

  double price(int i) const { return nodes_[i].price; }
  double bid(int i) const { return (1.0 - lambda_) * nodes_[i].price; }
  double ask(int i) const { return nodes_[i].price; }

  // Unconditional probability of reaching node i from the root.
  double path_probability(int i) const { return path_prob_[i]; }

  // Probability of reaching node i conditional on passing through ancestor a.
  double conditional_probability(int i, int a) const {
    return path_prob_[i] / path_prob_[a];
  }

  // Nodes of the subtree rooted at r, parents-first.
  std::vector<int> subtree(int r) const {
    std::vector<int> out;
    out.push_back(r);
    for (std::size_t k = 0; k < out.size(); ++k)
      for (int c : children_[out[k]]) out.push_back(c);
    return out;
  }

 private:
  void build(std::vector<Node> raw);

  std::vector<Node> nodes_;
  std::vector<int> parent_;
  std::vector<std::vector<int>> children_;
  std::vector<int> leaves_;
  std::vector<double> path_prob_;
  std::unordered_map<NodeId, int> index_;
  double lambda_ = 0.0;
  int horizon_ = 0;
  int root_ = 0;
};

inline void ScenarioTree::build(std::vector<Node> raw) {
  if (!(lambda_ > 0.0 && lambda_ < 1.0))
    throw ValidationError("lambda must lie in (0,1)");
  if (horizon_ < 1) throw ValidationError("horizon must be >= 1");
  if (raw.empty()) throw ValidationError("tree has no nodes");

  // Index by id, find the root, then order parents-first.
  std::unordered_map<NodeId, int> raw_index;
  raw_index.reserve(raw.size());
  int raw_root = -1;
  for (int i = 0; i < static_cast<int>(raw.size()); ++i) {
    const Node& n = raw[i];
    if (!raw_index.emplace(n.id, i).second)
      throw ValidationError("duplicate node id: " + n.id);
    if (!n.parent) {
      if (raw_root >= 0) throw ValidationError("more than one root node");
      raw_root = i;
    }
  }
  if (raw_root < 0) throw ValidationError("no root node");
  if (raw[raw_root].time_index != 0)
    throw ValidationError("root must sit at time index 0");

  std::vector<std::vector<int>> raw_children(raw.size());
  for (int i = 0; i < static_cast<int>(raw.size()); ++i) {
    const Node& n = raw[i];
    if (!(n.price > 0.0))
      throw ValidationError("non-positive price at node " + n.id);
    if (!(n.prob > 0.0 && n.prob <= 1.0))
      throw ValidationError("probability outside (0,1] at node " + n.id);
    if (n.parent) {
      auto it = raw_index.find(*n.parent);
      if (it == raw_index.end())
        throw ValidationError("orphan node " + n.id + ": unknown parent " +
                              *n.parent);
      if (n.time_index != raw[it->second].time_index + 1)
        throw ValidationError("node " + n.id +
                              ": time index must be parent's plus one");
      raw_children[it->second].push_back(i);
    }
  }

  // Breadth-first order keeps siblings in input order.
  std::vector<int> order;
  order.reserve(raw.size());
  order.push_back(raw_root);
  for (std::size_t k = 0; k < order.size(); ++k)
    for (int c : raw_children[order[k]]) order.push_back(c);
  if (order.size() != raw.size())
    throw ValidationError("tree is disconnected");

  std::vector<int> pos(raw.size());
  for (int i = 0; i < static_cast<int>(order.size()); ++i) pos[order[i]] = i;

  nodes_.resize(raw.size());
  parent_.assign(raw.size(), -1);
  children_.assign(raw.size(), {});
  path_prob_.assign(raw.size(), 1.0);
  for (int i = 0; i < static_cast<int>(order.size()); ++i) {
    nodes_[i] = raw[order[i]];
    index_.emplace(nodes_[i].id, i);
  }
  root_ = 0;
  for (int i = 1; i < static_cast<int>(nodes_.size()); ++i) {
    parent_[i] = pos[raw_index.at(*nodes_[i].parent)];
    children_[parent_[i]].push_back(i);
    path_prob_[i] = path_prob_[parent_[i]] * nodes_[i].prob;
  }

  for (int i = 0; i < size(); ++i) {
    if (children_[i].empty()) {
      if (nodes_[i].time_index != horizon_)
        throw ValidationError("leaf " + nodes_[i].id +
                              " not at the terminal time index");
      leaves_.push_back(i);
    } else {
      double sum = 0.0;
      for (int c : children_[i]) sum += nodes_[c].prob;
      if (std::abs(sum - 1.0) > 1e-12)
        throw ValidationError("child probabilities of node " + nodes_[i].id +
                              " sum to " + std::to_string(sum));
    }
  }
}

inline std::pair<double, double> bid_ask(const ScenarioTree& tree,
                                         const NodeId& id) {
  int i = tree.index_of(id);
  return {tree.bid(i), tree.ask(i)};
}

// ---------------------------------------------------------------------------
// JSON ingestion / serialization.
// Schema: {"lambda": f, "horizon_steps": n,
//          "nodes": [{"id": s, "parent": s|null, "t": n,
//                     "price": f, "prob": f}]}

inline ScenarioTree load_tree(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("lambda") ||
      !doc.contains("horizon_steps") || !doc.contains("nodes"))
    throw ValidationError(
        "tree document must carry lambda, horizon_steps and nodes");
  std::vector<Node> nodes;
  for (const auto& jn : doc.at("nodes")) {
    Node n;
    n.id = jn.at("id").get<std::string>();
    if (!jn.at("parent").is_null())
      n.parent = jn.at("parent").get<std::string>();
    n.time_index = jn.at("t").get<int>();
    n.price = jn.at("price").get<double>();
    n.prob = jn.at("prob").get<double>();
    nodes.push_back(std::move(n));
  }
  return ScenarioTree::from_nodes(std::move(nodes),
                                  doc.at("lambda").get<double>(),
                                  doc.at("horizon_steps").get<int>());
}

inline ScenarioTree load_tree(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("tree document is not valid JSON: ") +
                          e.what());
  }
  return load_tree(doc);
}

inline nlohmann::json serialize(const ScenarioTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (int i = 0; i < tree.size(); ++i) {
    const Node& n = tree.node(i);
    nlohmann::json jn;
    jn["id"] = n.id;
    if (n.parent)
      jn["parent"] = *n.parent;
    else
      jn["parent"] = nullptr;
    jn["t"] = n.time_index;
    jn["price"] = n.price;
    jn["prob"] = n.prob;
    nodes.push_back(std::move(jn));
  }
  return nlohmann::json{{"lambda", tree.lambda()},
                        {"horizon_steps", tree.horizon_steps()},
                        {"nodes", std::move(nodes)}};
}

// ---------------------------------------------------------------------------
// Fixture builders. Trees are path-distinct: recombining price values are
// represented by duplicated prices on distinct nodes.

inline ScenarioTree build_multinomial(double s0,
                                      const std::vector<double>& factors,
                                      const std::vector<double>& probs,
                                      int steps, double lambda,
                                      const std::string& suffixes = "") {
  if (!(s0 > 0.0)) throw ValidationError("s0 must be positive");
  if (factors.size() != probs.size() || factors.empty())
    throw ValidationError("factors and probs must match and be non-empty");
  double psum = 0.0;
  for (double p : probs) {
    if (!(p > 0.0 && p < 1.0))
      throw ValidationError("branch probabilities must lie in (0,1)");
    psum += p;
  }
  if (std::abs(psum - 1.0) > 1e-12)
    throw ValidationError("branch probabilities must sum to 1");
  if (steps < 1) throw ValidationError("horizon must be >= 1");
  double leaf_count = std::pow(static_cast<double>(factors.size()), steps);
  if (leaf_count > 4096.0)
    throw ValidationError("instance too large: more than 4096 leaves");

  std::vector<Node> nodes;
  nodes.push_back(Node{"0", 0, std::nullopt, s0, 1.0});
  // Generation by generation; child id = parent id + branch digit.
  std::vector<int> frontier{0};
  for (int t = 1; t <= steps; ++t) {
    std::vector<int> next;
    for (int pi : frontier) {
      for (std::size_t k = 0; k < factors.size(); ++k) {
        Node child;
        child.id = nodes[pi].id + (k < suffixes.size()
                                       ? suffixes[k]
                                       : static_cast<char>('0' + k));
        child.time_index = t;
        child.parent = nodes[pi].id;
        child.price = nodes[pi].price * factors[k];
        child.prob = probs[k];
        next.push_back(static_cast<int>(nodes.size()));
        nodes.push_back(std::move(child));
      }
    }
    frontier = std::move(next);
  }
  return ScenarioTree::from_nodes(std::move(nodes), lambda, steps);
}

inline ScenarioTree build_binomial(double s0, double up, double down,
                                   double p_up, int steps, double lambda) {
  if (!(up > 1.0)) throw ValidationError("up factor must exceed 1");
  if (!(down > 0.0 && down < 1.0))
    throw ValidationError("down factor must lie in (0,1)");
  if (steps > 12)
    throw ValidationError("steps > 12 rejected: leaf count beyond desk scale");
  return build_multinomial(s0, {up, down}, {p_up, 1.0 - p_up}, steps, lambda,
                           "ud");
}

// ---------------------------------------------------------------------------
// Terminal endowment: deterministic initial wealth x plus a random part
// keyed by leaf id. Missing leaves default to 0.

struct EndowmentSpec {
  double x = 1.0;
  std::map<NodeId, double> e_leaf;
};

// Expands the leaf map to a per-node vector (zero off the leaves). In
// constrained-tree mode negative terminal endowments are rejected.
inline std::vector<double> endowment_by_node(const ScenarioTree& tree,
                                             const EndowmentSpec& endow,
                                             bool allow_negative = false) {
  if (!(endow.x > 0.0)) throw ValidationError("x must be positive");
  std::vector<double> e(tree.size(), 0.0);
  for (const auto& [id, value] : endow.e_leaf) {
    int i = tree.index_of(id);
    if (!tree.is_leaf(i))
      throw ValidationError("endowment keyed on non-leaf node " + id);
    if (!allow_negative && value < 0.0)
      throw ValidationError("negative endowment at leaf " + id +
                            " not allowed on constrained trees");
    e[i] = value;
  }
  return e;
}

inline EndowmentSpec load_endowment(const nlohmann::json& doc) {
  EndowmentSpec spec;
  spec.x = doc.at("x").get<double>();
  if (doc.contains("e"))
    for (const auto& [key, value] : doc.at("e").items())
      spec.e_leaf[key] = value.get<double>();
  return spec;
}

inline nlohmann::json serialize(const EndowmentSpec& endow) {
  nlohmann::json e = nlohmann::json::object();
  for (const auto& [id, value] : endow.e_leaf) e[id] = value;
  return nlohmann::json{{"x", endow.x}, {"e", std::move(e)}};
}

}  // namespace shadowtree
