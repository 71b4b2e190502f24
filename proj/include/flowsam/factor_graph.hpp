#pragma once

#include <Eigen/Core>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "flowsam/flow.hpp"
#include "flowsam/geometry.hpp"
#include "flowsam/rng.hpp"

namespace flowsam {

enum class VarKind { Pose2, Point2 };

struct VariableId {
  std::string name;
  VarKind kind = VarKind::Pose2;

  int dim() const { return kind == VarKind::Pose2 ? 3 : 2; }
  bool operator==(const VariableId& o) const {
    return name == o.name && kind == o.kind;
  }
};

// Per-dimension radian flags (theta for poses).
std::vector<bool> angular_dims(const VariableId& v);

// Variable assignment: name -> stacked value (x, y[, theta]).
using Assignment = std::map<std::string, Eigen::VectorXd>;

const Eigen::VectorXd& assignment_at(const Assignment& a,
                                     const std::string& name);

struct PriorFactor {
  VariableId var;
  Eigen::VectorXd mean;
  Eigen::VectorXd sigmas;  // per-dimension standard deviations
};

struct OdometryFactor {
  VariableId from, to;
  Pose2 measured;          // relative transform, noise on the right
  Eigen::Vector3d cov;     // diagonal tangent covariance (variances)
};

struct RangeFactor {
  VariableId pose, landmark;
  double measured = 0.0;
  double sigma = 1.0;
};

// Range with unknown data association: equally weighted mixture over the
// candidate landmarks.
struct AmbiguousRangeFactor {
  VariableId pose;
  std::vector<VariableId> candidates;
  double measured = 0.0;
  double sigma = 1.0;
};

// Density handed from a child clique to its parent: a trained map over the
// child separator variables, usable like any other factor.
struct SeparatorDensityFactor {
  std::vector<VariableId> vars;
  TriangularMap flow;
};

using Factor = std::variant<PriorFactor, OdometryFactor, RangeFactor,
                            AmbiguousRangeFactor, SeparatorDensityFactor>;
using FactorPtr = std::shared_ptr<const Factor>;

FactorPtr make_factor(Factor f);  // validates invariants

std::vector<VariableId> factor_variables(const Factor& f);
std::string factor_label(const Factor& f);  // short diagnostic tag

// Measurement dimension when the factor is simulated as an observation
// (odometry 3, ranges 1); zero for priors and separator densities.
int observation_dim(const Factor& f);
std::vector<bool> observation_angular(const Factor& f);

using ValueLookup = std::function<const Eigen::VectorXd&(const std::string&)>;

double factor_log_density(const Factor& f, const ValueLookup& value_of);
double factor_log_density(const Factor& f, const Assignment& a);

// Draws the not-yet-sampled endpoint of a binary factor given the other one.
Eigen::VectorXd sample_endpoint(const Factor& f, const std::string& known_var,
                                const Eigen::VectorXd& known_value,
                                RngStream& rng);

// Draws a noisy virtual measurement for a fully assigned factor.
Eigen::VectorXd simulate_measurement(const Factor& f,
                                     const ValueLookup& value_of,
                                     RngStream& rng);

// Content hash used for clique signatures (bit-exact on parameters).
std::uint64_t factor_hash(const Factor& f);

class FactorGraph {
 public:
  void declare(const VariableId& v);
  void add(FactorPtr f);
  void add(Factor f) { add(make_factor(std::move(f))); }

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const VariableId& variable(const std::string& name) const;
  const std::vector<VariableId>& variables() const { return variables_; }
  const std::vector<FactorPtr>& factors() const { return factors_; }
  int total_dim() const;

  // Default policy: poses in declaration order, then landmarks.
  std::vector<std::string> elimination_ordering() const;

 private:
  std::vector<VariableId> variables_;
  std::map<std::string, int> index_;
  std::vector<FactorPtr> factors_;
};

}  // namespace flowsam
