#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "flowsam/factor_graph.hpp"

namespace flowsam {

// Joint samples with a fixed variable layout, one column per dimension.
struct SampleSet {
  std::vector<VariableId> variables;
  Eigen::MatrixXd samples;

  int col_offset(const std::string& name) const;  // MissingVariable
  Eigen::MatrixXd columns(const std::string& name) const;
  SampleSet project(const std::vector<std::string>& names) const;
};

SampleSet sample_set_from(const std::vector<VariableId>& variables,
                          const std::vector<Assignment>& draws);

// Brute-force posterior oracle for desk-scale graphs: self-normalized
// importance sampling with an ancestral-simulation proposal over an
// oversampled pool, followed by systematic resampling down to n. Weight
// corrections account for the change of variables in each consumed
// simulation step, so the weighted draws target the exact posterior.
SampleSet reference_posterior(const FactorGraph& graph, int n, RngStream& rng);

// Square root of the biased squared-MMD estimate under a radial-basis
// kernel. bandwidth <= 0 selects the median pairwise distance of the pooled
// set.
double mmd(const SampleSet& a, const SampleSet& b, double bandwidth = 0.0);

// Root-mean-square over variables of the distance between the sample mean
// position and the true position (first two dimensions of each variable).
double rmse(const SampleSet& samples, const Assignment& truth);

// One candidate choice per ambiguous factor, in graph factor order.
struct AssociationHypothesis {
  std::vector<std::string> chosen;

  bool operator<(const AssociationHypothesis& o) const {
    return chosen < o.chosen;
  }
  bool operator==(const AssociationHypothesis& o) const {
    return chosen == o.chosen;
  }
  std::string label() const;  // names joined with commas
};

// Posterior belief over joint data associations: per-sample normalized
// likelihood products under a uniform hypothesis prior, averaged over the
// sample set.
std::map<AssociationHypothesis, double> association_belief(
    const SampleSet& samples, const FactorGraph& graph);

// Per-factor candidate beliefs (marginals of the same construction).
std::vector<std::map<std::string, double>> association_marginals(
    const SampleSet& samples, const FactorGraph& graph);

// One key/value record per solver step, appended to a metrics stream.
struct StepMetrics {
  int step = 0;
  double runtime_seconds = 0.0;  // elapsed since the run started
  std::optional<double> rmse;
  std::optional<double> mmd;
  std::vector<std::pair<std::string, double>> beliefs;
};

void append_metrics(std::ostream& os, const StepMetrics& m);

}  // namespace flowsam
