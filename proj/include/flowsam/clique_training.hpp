#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "flowsam/factor_graph.hpp"
#include "flowsam/flow.hpp"

namespace flowsam {

// One loop-closing factor turned into a virtual observation: its simulated
// measurement column block plus the recorded real measurement.
struct ObservationBlock {
  std::string label;
  int dim = 0;
  Eigen::VectorXd measured;
  std::vector<bool> angular;
};

// Simulated joint draws over (observations, separator, frontals), columns in
// exactly that order.
struct TrainingBatch {
  std::vector<ObservationBlock> observations;
  std::vector<VariableId> separator;
  std::vector<VariableId> frontals;
  Eigen::MatrixXd samples;  // n x (obs_dim + sep_dim + frontal_dim)

  int obs_dim() const;
  int sep_dim() const;
  int frontal_dim() const;
  Eigen::VectorXd measured() const;        // stacked observation values
  std::vector<bool> angular() const;       // per sample column
  std::vector<std::string> column_labels() const;
};

// Writes a batch as delimited text (header = column labels) for inspection.
void dump_training_batch(const TrainingBatch& batch, std::ostream& os);

// Trained artifacts of one clique: both maps share the fitted parameters,
// with observation dimensions frozen at the measured values.
struct CliqueSampler {
  TriangularMap conditional;        // over (separator, frontals)
  TriangularMap separator_density;  // marginal over the separator block
  std::vector<VariableId> separator;
  std::vector<VariableId> frontals;
  FitDiagnostics diagnostics;
};

// Draws joint samples from the intermediate density of a clique-local graph:
// prior-like factors seed their variables, binary factors forward-simulate
// unknown endpoints, and factors whose endpoints are all known (plus every
// ambiguous range) become loop-closing virtual observations. The first
// separator_count declared variables form the separator block.
TrainingBatch simulate_training_samples(const FactorGraph& local, int n,
                                        RngStream& rng,
                                        int separator_count = 0);

// Fits the clique flow over (O, S, F), conditions on the measured
// observations, and splits the result into separator density and frontal
// conditional.
CliqueSampler train_clique(const TrainingBatch& batch, const TrainConfig& cfg);

// One frontal draw given separator values.
Eigen::VectorXd sample_frontals(const CliqueSampler& cs,
                                const Eigen::VectorXd& s, RngStream& rng);

// Batched frontal draws: one row per separator assignment.
Eigen::MatrixXd sample_frontals(const CliqueSampler& cs,
                                const Eigen::MatrixXd& s, RngStream& rng);

double separator_log_density(const CliqueSampler& cs, const Eigen::VectorXd& s);

}  // namespace flowsam
