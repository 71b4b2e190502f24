#include "flowsam/factor_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "flowsam/errors.hpp"

namespace flowsam {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double gaussian_log_pdf(double resid, double sigma) {
  double z = resid / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * kLog2Pi;
}

Pose2 as_pose(const Eigen::VectorXd& v) { return Pose2(v[0], v[1], v[2]); }

}  // namespace

std::vector<bool> angular_dims(const VariableId& v) {
  if (v.kind == VarKind::Pose2) return {false, false, true};
  return {false, false};
}

const Eigen::VectorXd& assignment_at(const Assignment& a,
                                     const std::string& name) {
  auto it = a.find(name);
  if (it == a.end()) throw MissingVariable("no value for '" + name + "'");
  return it->second;
}

FactorPtr make_factor(Factor f) {
  std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PriorFactor>) {
          if (v.mean.size() != v.var.dim() || v.sigmas.size() != v.var.dim())
            throw Unsupported("prior size does not match variable '" +
                              v.var.name + "'");
          if ((v.sigmas.array() <= 0.0).any())
            throw Unsupported("prior sigmas must be positive");
        } else if constexpr (std::is_same_v<T, OdometryFactor>) {
          if (v.from.kind != VarKind::Pose2 || v.to.kind != VarKind::Pose2)
            throw Unsupported("odometry endpoints must be poses");
          if ((v.cov.array() <= 0.0).any())
            throw Unsupported("odometry covariance must be positive");
          if (v.from.name == v.to.name)
            throw Unsupported("odometry endpoints must differ");
        } else if constexpr (std::is_same_v<T, RangeFactor>) {
          if (v.pose.kind != VarKind::Pose2 ||
              v.landmark.kind != VarKind::Point2)
            throw Unsupported("range connects a pose and a landmark");
          if (v.sigma <= 0.0) throw Unsupported("range sigma must be positive");
        } else if constexpr (std::is_same_v<T, AmbiguousRangeFactor>) {
          if (v.pose.kind != VarKind::Pose2)
            throw Unsupported("ambiguous range needs a pose endpoint");
          if (v.candidates.empty())
            throw Unsupported("ambiguous range needs candidates");
          std::set<std::string> names;
          for (const auto& c : v.candidates) {
            if (c.kind != VarKind::Point2)
              throw Unsupported("ambiguous range candidates must be landmarks");
            if (!names.insert(c.name).second)
              throw Unsupported("duplicate candidate '" + c.name + "'");
          }
          if (v.sigma <= 0.0) throw Unsupported("range sigma must be positive");
        } else if constexpr (std::is_same_v<T, SeparatorDensityFactor>) {
          int dim = 0;
          for (const auto& var : v.vars) dim += var.dim();
          if (v.flow.empty() || v.flow.dim() != dim)
            throw LayoutMismatch("separator density does not cover its scope");
        }
      },
      f);
  return std::make_shared<const Factor>(std::move(f));
}

std::vector<VariableId> factor_variables(const Factor& f) {
  return std::visit(
      [](const auto& v) -> std::vector<VariableId> {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PriorFactor>) {
          return {v.var};
        } else if constexpr (std::is_same_v<T, OdometryFactor>) {
          return {v.from, v.to};
        } else if constexpr (std::is_same_v<T, RangeFactor>) {
          return {v.pose, v.landmark};
        } else if constexpr (std::is_same_v<T, AmbiguousRangeFactor>) {
          std::vector<VariableId> out{v.pose};
          out.insert(out.end(), v.candidates.begin(), v.candidates.end());
          return out;
        } else {
          return v.vars;
        }
      },
      f);
}

std::string factor_label(const Factor& f) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PriorFactor>)
          return "prior(" + v.var.name + ")";
        else if constexpr (std::is_same_v<T, OdometryFactor>)
          return "odom(" + v.from.name + "," + v.to.name + ")";
        else if constexpr (std::is_same_v<T, RangeFactor>)
          return "range(" + v.pose.name + "," + v.landmark.name + ")";
        else if constexpr (std::is_same_v<T, AmbiguousRangeFactor>)
          return "amb_range(" + v.pose.name + ")";
        else
          return "separator_density";
      },
      f);
}

int observation_dim(const Factor& f) {
  return std::visit(
      [](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, OdometryFactor>)
          return 3;
        else if constexpr (std::is_same_v<T, RangeFactor> ||
                           std::is_same_v<T, AmbiguousRangeFactor>)
          return 1;
        else
          return 0;
      },
      f);
}

std::vector<bool> observation_angular(const Factor& f) {
  if (std::holds_alternative<OdometryFactor>(f)) return {false, false, true};
  if (observation_dim(f) == 1) return {false};
  return {};
}

double factor_log_density(const Factor& f, const ValueLookup& value_of) {
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PriorFactor>) {
          const Eigen::VectorXd& x = value_of(v.var.name);
          double total = 0.0;
          for (int i = 0; i < v.mean.size(); ++i) {
            double r = x[i] - v.mean[i];
            if (v.var.kind == VarKind::Pose2 && i == 2) r = wrap_angle(r);
            total += gaussian_log_pdf(r, v.sigmas[i]);
          }
          return total;
        } else if constexpr (std::is_same_v<T, OdometryFactor>) {
          Pose2 from = as_pose(value_of(v.from.name));
          Pose2 to = as_pose(value_of(v.to.name));
          Eigen::Vector3d resid =
              se2_log(v.measured.inverse().compose(from.inverse().compose(to)));
          double total = 0.0;
          for (int i = 0; i < 3; ++i)
            total += gaussian_log_pdf(resid[i], std::sqrt(v.cov[i]));
          return total;
        } else if constexpr (std::is_same_v<T, RangeFactor>) {
          const Eigen::VectorXd& p = value_of(v.pose.name);
          const Eigen::VectorXd& l = value_of(v.landmark.name);
          double d = std::hypot(l[0] - p[0], l[1] - p[1]);
          return gaussian_log_pdf(v.measured - d, v.sigma);
        } else if constexpr (std::is_same_v<T, AmbiguousRangeFactor>) {
          const Eigen::VectorXd& p = value_of(v.pose.name);
          // log of the equally weighted mixture via log-sum-exp
          double best = -std::numeric_limits<double>::infinity();
          std::vector<double> terms;
          terms.reserve(v.candidates.size());
          for (const auto& c : v.candidates) {
            const Eigen::VectorXd& l = value_of(c.name);
            double d = std::hypot(l[0] - p[0], l[1] - p[1]);
            double t = gaussian_log_pdf(v.measured - d, v.sigma);
            terms.push_back(t);
            best = std::max(best, t);
          }
          double sum = 0.0;
          for (double t : terms) sum += std::exp(t - best);
          return best + std::log(sum / terms.size());
        } else {
          Eigen::VectorXd stacked(v.flow.dim());
          int at = 0;
          for (const auto& var : v.vars) {
            stacked.segment(at, var.dim()) = value_of(var.name);
            at += var.dim();
          }
          return v.flow.log_density(stacked);
        }
      },
      f);
}

double factor_log_density(const Factor& f, const Assignment& a) {
  return factor_log_density(
      f, [&](const std::string& name) -> const Eigen::VectorXd& {
        return assignment_at(a, name);
      });
}

Eigen::VectorXd sample_endpoint(const Factor& f, const std::string& known_var,
                                const Eigen::VectorXd& known_value,
                                RngStream& rng) {
  if (const auto* od = std::get_if<OdometryFactor>(&f)) {
    Eigen::Vector3d xi;
    for (int i = 0; i < 3; ++i) xi[i] = rng.normal(0.0, std::sqrt(od->cov[i]));
    Pose2 noise = se2_exp(xi);
    if (known_var == od->from.name) {
      Pose2 to = as_pose(known_value).compose(od->measured).compose(noise);
      return to.vec();
    }
    if (known_var == od->to.name) {
      Pose2 from = as_pose(known_value)
                       .compose(noise.inverse())
                       .compose(od->measured.inverse());
      return from.vec();
    }
    throw MissingVariable("'" + known_var + "' is not an endpoint");
  }
  if (const auto* rf = std::get_if<RangeFactor>(&f)) {
    double r = rf->measured + rng.normal(0.0, rf->sigma);
    double bearing = rng.uniform(0.0, 2.0 * M_PI);
    if (known_var == rf->pose.name) {
      // back-project to a uniform-bearing point on the noisy circle
      Eigen::Vector2d l(known_value[0] + r * std::cos(bearing),
                        known_value[1] + r * std::sin(bearing));
      return l;
    }
    if (known_var == rf->landmark.name) {
      // position on the circle, heading uninformed
      Eigen::Vector3d p(known_value[0] + r * std::cos(bearing),
                        known_value[1] + r * std::sin(bearing),
                        rng.uniform(-M_PI, M_PI));
      return p;
    }
    throw MissingVariable("'" + known_var + "' is not an endpoint");
  }
  throw Unsupported("cannot forward-simulate through " + factor_label(f));
}

Eigen::VectorXd simulate_measurement(const Factor& f,
                                     const ValueLookup& value_of,
                                     RngStream& rng) {
  return std::visit(
      [&](const auto& v) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PriorFactor>) {
          // re-observation of an already seeded variable
          const Eigen::VectorXd& x = value_of(v.var.name);
          Eigen::VectorXd z(x.size());
          for (int i = 0; i < x.size(); ++i)
            z[i] = x[i] + rng.normal(0.0, v.sigmas[i]);
          if (v.var.kind == VarKind::Pose2) z[2] = wrap_angle(z[2]);
          return z;
        } else if constexpr (std::is_same_v<T, OdometryFactor>) {
          Pose2 from = as_pose(value_of(v.from.name));
          Pose2 to = as_pose(value_of(v.to.name));
          Eigen::Vector3d xi;
          for (int i = 0; i < 3; ++i)
            xi[i] = rng.normal(0.0, std::sqrt(v.cov[i]));
          Pose2 z = from.inverse().compose(to).compose(se2_exp(xi));
          return z.vec();
        } else if constexpr (std::is_same_v<T, RangeFactor>) {
          const Eigen::VectorXd& p = value_of(v.pose.name);
          const Eigen::VectorXd& l = value_of(v.landmark.name);
          Eigen::VectorXd z(1);
          z[0] = std::hypot(l[0] - p[0], l[1] - p[1]) +
                 rng.normal(0.0, v.sigma);
          return z;
        } else if constexpr (std::is_same_v<T, AmbiguousRangeFactor>) {
          const Eigen::VectorXd& p = value_of(v.pose.name);
          int pick = rng.uniform_int(static_cast<int>(v.candidates.size()));
          const Eigen::VectorXd& l = value_of(v.candidates[pick].name);
          Eigen::VectorXd z(1);
          z[0] = std::hypot(l[0] - p[0], l[1] - p[1]) +
                 rng.normal(0.0, v.sigma);
          return z;
        } else {
          throw Unsupported("separator densities carry no measurement");
        }
      },
      f);
}

namespace {

std::uint64_t hash_double(double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  return bits;
}

}  // namespace

std::uint64_t factor_hash(const Factor& f) {
  std::uint64_t h = mix64(f.index() + 1);
  for (const auto& v : factor_variables(f)) {
    h = hash_combine(h, v.name);
    h = hash_combine(h, v.kind == VarKind::Pose2 ? 2 : 3);
  }
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PriorFactor>) {
          for (int i = 0; i < v.mean.size(); ++i)
            h = hash_combine(h, hash_double(v.mean[i]));
          for (int i = 0; i < v.sigmas.size(); ++i)
            h = hash_combine(h, hash_double(v.sigmas[i]));
        } else if constexpr (std::is_same_v<T, OdometryFactor>) {
          for (double x : {v.measured.x, v.measured.y, v.measured.theta,
                           v.cov[0], v.cov[1], v.cov[2]})
            h = hash_combine(h, hash_double(x));
        } else if constexpr (std::is_same_v<T, RangeFactor>) {
          h = hash_combine(h, hash_double(v.measured));
          h = hash_combine(h, hash_double(v.sigma));
        } else if constexpr (std::is_same_v<T, AmbiguousRangeFactor>) {
          h = hash_combine(h, hash_double(v.measured));
          h = hash_combine(h, hash_double(v.sigma));
        }
        // separator densities are identified by their child clique
      },
      f);
  return h;
}

void FactorGraph::declare(const VariableId& v) {
  auto it = index_.find(v.name);
  if (it != index_.end()) {
    if (variables_[it->second].kind != v.kind)
      throw Unsupported("variable '" + v.name + "' redeclared with new kind");
    return;
  }
  index_[v.name] = static_cast<int>(variables_.size());
  variables_.push_back(v);
}

void FactorGraph::add(FactorPtr f) {
  for (const auto& v : factor_variables(*f)) declare(v);
  factors_.push_back(std::move(f));
}

const VariableId& FactorGraph::variable(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw MissingVariable("unknown variable '" + name + "'");
  return variables_[it->second];
}

int FactorGraph::total_dim() const {
  int d = 0;
  for (const auto& v : variables_) d += v.dim();
  return d;
}

std::vector<std::string> FactorGraph::elimination_ordering() const {
  std::vector<std::string> out;
  for (const auto& v : variables_)
    if (v.kind == VarKind::Pose2) out.push_back(v.name);
  for (const auto& v : variables_)
    if (v.kind == VarKind::Point2) out.push_back(v.name);
  return out;
}

}  // namespace flowsam
