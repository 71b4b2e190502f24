#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowsam/clique_training.hpp"
#include "flowsam/factor_graph.hpp"

namespace flowsam {

struct Clique {
  std::vector<VariableId> frontals;   // ascending elimination order
  std::vector<VariableId> separator;  // ascending elimination order
  int parent = -1;
  std::vector<int> children;
  std::vector<FactorPtr> factors;  // user factors assigned at elimination

  // Content hash of the rooted subtree: frontals, separator, attached
  // factors and child signatures. Equal signatures mean the trained state
  // is interchangeable.
  std::uint64_t signature = 0;

  std::optional<CliqueSampler> trained;
  FactorPtr separator_density;  // message to the parent once trained

  std::vector<std::string> frontal_names() const;
  std::vector<std::string> separator_names() const;
};

class BayesTree {
 public:
  int size() const { return static_cast<int>(cliques_.size()); }
  bool empty() const { return cliques_.empty(); }
  const Clique& clique(int i) const { return cliques_[i]; }
  Clique& clique(int i) { return cliques_[i]; }
  const std::vector<int>& roots() const { return roots_; }

  // Index of the clique where the variable is frontal.
  int clique_of(const std::string& name) const;
  bool has_frontal(const std::string& name) const {
    return frontal_index_.count(name) > 0;
  }

  std::vector<int> leaf_to_root_order() const;  // children before parents
  std::vector<int> root_to_leaf_order() const;

  // All user factors attached across cliques, in attachment order.
  std::vector<FactorPtr> all_factors() const;

  // One clique per line, "frontals : separator", children indented.
  std::string outline() const;

 private:
  std::vector<Clique> cliques_;
  std::vector<int> roots_;
  std::map<std::string, int> frontal_index_;

  friend BayesTree eliminate(const FactorGraph& graph,
                             const std::vector<std::string>& ordering);
};

// Variable elimination into a Bayes tree. The ordering must be a permutation
// of the graph variables; each conditional is merged into the clique of its
// earliest-eliminated parent when its parent set matches that clique's
// variables exactly, and opens a new child clique otherwise. Every factor is
// attached to the clique where its earliest-eliminated variable is frontal.
BayesTree eliminate(const FactorGraph& graph,
                    const std::vector<std::string>& ordering);

struct UpdateResult {
  BayesTree tree;
  std::vector<int> changed;  // cliques requiring retraining, in tree indices
};

// Re-eliminates the factors held by the tree plus the new ones under the
// given ordering. Cliques of the new tree whose subtree signature already
// existed keep their trained state; the rest are reported as changed.
UpdateResult incremental_update(const BayesTree& tree,
                                const std::vector<FactorPtr>& new_factors,
                                const std::vector<std::string>& ordering);

// Local factor graph over separator-then-frontal variables: child separator
// densities plus the user factors attached to the clique.
FactorGraph clique_factor_graph(const BayesTree& tree, int clique_index);

// Sanity check used by tests: for every variable, the cliques whose scope
// contains it form a connected subtree.
bool running_intersection_holds(const BayesTree& tree);

}  // namespace flowsam
