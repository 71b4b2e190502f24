#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <memory>
#include <vector>

#include "flowsam/rng.hpp"
#include "flowsam/spline.hpp"

namespace flowsam {

struct TrainConfig {
  int sample_count = 2000;   // simulated draws per clique
  int knots = 9;             // spline bins per dimension
  int hidden = 8;            // conditioner hidden units
  double step_size = 5e-3;   // Adam step
  int window = 50;           // convergence window (iterations)
  double rel_tol = 0.01;     // relative change between consecutive windows
  int max_iterations = 2000; // safety cap
  std::uint64_t seed = 0;
};

struct FitDiagnostics {
  int iterations = 0;
  double final_loss = 0.0;
  std::vector<double> loss_history;   // one entry per iteration
  std::vector<int> degenerate_dims;   // point-mass dimensions
};

struct DimParams {
  Eigen::VectorXd raw;  // leading dimension: direct parameter block
  Eigen::MatrixXd w1;   // later dimensions: two-layer conditioner
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

struct FlowParams {
  int dim = 0;
  int hidden = 0;
  SplineSpec spec;
  Eigen::VectorXd mean, stddev;  // per-dimension affine standardizer
  std::vector<bool> angular;     // radian dimensions, wrapped before use
  std::vector<bool> frozen;      // degenerate dimensions kept as point masses
  std::vector<DimParams> dims;
};

// Increasing triangular map T with standard-normal reference: dimension d of
// the output depends on inputs 1..d and is strictly increasing in input d.
// A map object is a view over shared parameters: conditioning freezes a
// prefix of dimensions at fixed values, marginalization keeps a prefix of
// the remaining ones. Both are exact for this family.
class TriangularMap {
 public:
  TriangularMap() = default;

  bool empty() const { return params_ == nullptr; }
  int dim() const { return out_dim_; }
  int total_dim() const { return params_ ? params_->dim : 0; }
  const FlowParams& params() const { return *params_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x,
                          double* log_det = nullptr) const;
  Eigen::VectorXd inverse(const Eigen::VectorXd& y) const;
  double log_density(const Eigen::VectorXd& x) const;

  TriangularMap condition(const Eigen::VectorXd& values) const;
  TriangularMap marginal(int k) const;

  Eigen::VectorXd sample(RngStream& rng) const;
  Eigen::MatrixXd sample(int n, RngStream& rng) const;
  // Draws the remaining dim()-k values given the first k active dimensions
  // fixed at prefix_rows(i, :). Returns only the drawn columns, one row per
  // prefix row.
  Eigen::MatrixXd sample_suffix(const Eigen::MatrixXd& prefix_rows,
                                RngStream& rng) const;

  std::vector<bool> active_angular() const;

  void serialize(std::ostream& os) const;
  static TriangularMap deserialize(std::istream& is);

  static TriangularMap from_params(std::shared_ptr<const FlowParams> params);

 private:
  std::shared_ptr<const FlowParams> params_;
  Eigen::VectorXd prefix_std_;  // standardized frozen values
  int out_dim_ = 0;

  double standardize(int d, double x) const;
  double unstandardize(int d, double u) const;
  void raw_for_dim(int d, const double* u, double* raw) const;
  friend TriangularMap fit_triangular_map(const Eigen::MatrixXd&,
                                          const std::vector<bool>&,
                                          const TrainConfig&, FitDiagnostics*);
};

// Fits the map to samples (rows) by stochastic-free full-batch gradient
// descent on the empirical KL objective sum_d 0.5 T_d^2 - ln dT_d/dx_d.
// Angular dimensions are wrapped to [-pi, pi) before standardization.
// Dimensions with sample std below 1e-9 are frozen as point masses (affine
// with std floor 1e-6) and reported in diagnostics.
TriangularMap fit_triangular_map(const Eigen::MatrixXd& samples,
                                 const std::vector<bool>& angular,
                                 const TrainConfig& cfg,
                                 FitDiagnostics* diag = nullptr);

}  // namespace flowsam
