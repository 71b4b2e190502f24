#pragma once

#include <cstdint>
#include <vector>

#include "flowsam/bayes_tree.hpp"
#include "flowsam/clique_training.hpp"
#include "flowsam/factor_graph.hpp"

namespace flowsam {

struct UpdateStats {
  int step = 0;       // update counter after this call
  int cliques = 0;    // tree size after the update
  int retrained = 0;  // cliques fitted during this update
  int reused = 0;     // cliques that kept their cached sampler
  int fit_iterations = 0;  // summed optimizer iterations
};

// Incremental inference session: owns the factor graph, the Bayes tree and
// the per-clique trained samplers. update() re-eliminates symbolically,
// retrains only cliques whose subtree changed, and leaves the session
// untouched if anything fails.
class Session {
 public:
  explicit Session(TrainConfig cfg = {}, std::uint64_t seed = 0,
                   int threads = 1);

  UpdateStats update(const std::vector<FactorPtr>& new_factors);
  UpdateStats update(std::vector<Factor> new_factors);

  // Joint posterior draws by root-to-leaf ancestral sampling.
  std::vector<Assignment> sample_posterior(int n, RngStream& rng) const;

  // Same draws in matrix form; columns follow variable declaration order,
  // one column per dimension.
  Eigen::MatrixXd sample_posterior_matrix(int n, RngStream& rng) const;
  std::vector<std::string> column_labels() const;

  // Sum over cliques of log p(frontals | separator) at the assignment.
  double posterior_log_density(const Assignment& a) const;

  const FactorGraph& graph() const { return graph_; }
  const BayesTree& tree() const { return tree_; }
  const TrainConfig& config() const { return cfg_; }
  int step() const { return step_; }
  int fit_count() const { return fits_; }

 private:
  FactorGraph graph_;
  BayesTree tree_;
  TrainConfig cfg_;
  std::uint64_t seed_ = 0;
  int threads_ = 1;
  int step_ = 0;
  int fits_ = 0;

  void train_clique_at(BayesTree& tree, int ci) const;
};

}  // namespace flowsam
