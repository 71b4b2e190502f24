#include "flowsam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <limits>
#include <numeric>

#include "flowsam/errors.hpp"

namespace flowsam {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double gaussian_log_pdf(double resid, double sigma) {
  double z = resid / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * kLog2Pi;
}

// det of the SE(2) tangent-to-group translation Jacobian, (2 - 2cos t)/t^2.
double det_v(double theta) {
  if (std::abs(theta) < 1e-5) {
    double t2 = theta * theta;
    return 1.0 - t2 / 12.0 + t2 * t2 / 360.0;
  }
  return (2.0 - 2.0 * std::cos(theta)) / (theta * theta);
}

double log_sum_exp(double a, double b) {
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

int SampleSet::col_offset(const std::string& name) const {
  int at = 0;
  for (const auto& v : variables) {
    if (v.name == name) return at;
    at += v.dim();
  }
  throw MissingVariable("'" + name + "' is not in the sample layout");
}

Eigen::MatrixXd SampleSet::columns(const std::string& name) const {
  int at = 0;
  for (const auto& v : variables) {
    if (v.name == name) return samples.middleCols(at, v.dim());
    at += v.dim();
  }
  throw MissingVariable("'" + name + "' is not in the sample layout");
}

SampleSet SampleSet::project(const std::vector<std::string>& names) const {
  SampleSet out;
  int total = 0;
  for (const auto& name : names) {
    col_offset(name);  // validates presence
    for (const auto& v : variables)
      if (v.name == name) {
        out.variables.push_back(v);
        total += v.dim();
      }
  }
  out.samples.resize(samples.rows(), total);
  int col = 0;
  for (const auto& v : out.variables) {
    out.samples.middleCols(col, v.dim()) = columns(v.name);
    col += v.dim();
  }
  return out;
}

SampleSet sample_set_from(const std::vector<VariableId>& variables,
                          const std::vector<Assignment>& draws) {
  SampleSet out;
  out.variables = variables;
  int total = 0;
  for (const auto& v : variables) total += v.dim();
  out.samples.resize(static_cast<Eigen::Index>(draws.size()), total);
  for (size_t i = 0; i < draws.size(); ++i) {
    int col = 0;
    for (const auto& v : variables) {
      out.samples.row(static_cast<Eigen::Index>(i)).segment(col, v.dim()) =
          assignment_at(draws[i], v.name);
      col += v.dim();
    }
  }
  return out;
}

namespace {

struct PlanStep {
  enum Kind { SeedPrior, SeedDensity, Forward, Observe } kind;
  const Factor* factor = nullptr;
  int prefix = 0;        // SeedDensity: variables already realized
  int known = -1;        // Forward: realized endpoint (variable index)
  int unknown = -1;
};

// Works out, symbolically, how the ancestral proposal realizes each factor:
// seed, forward simulation, or pure reweighting observation.
std::vector<PlanStep> proposal_plan(const FactorGraph& graph,
                                    const std::map<std::string, int>& vidx) {
  std::vector<bool> seeded(graph.variables().size(), false);
  std::vector<PlanStep> plan;
  std::deque<const Factor*> queue;
  std::vector<const Factor*> ambiguous;

  for (const auto& fp : graph.factors()) {
    const Factor& f = *fp;
    if (const auto* p = std::get_if<PriorFactor>(&f)) {
      int vi = vidx.at(p->var.name);
      if (!seeded[vi]) {
        plan.push_back({PlanStep::SeedPrior, &f, 0, -1, vi});
        seeded[vi] = true;
      } else {
        plan.push_back({PlanStep::Observe, &f});
      }
    } else if (const auto* d = std::get_if<SeparatorDensityFactor>(&f)) {
      const int k = static_cast<int>(d->vars.size());
      int prefix = 0;
      while (prefix < k && seeded[vidx.at(d->vars[prefix].name)]) ++prefix;
      for (int i = prefix; i < k; ++i)
        if (seeded[vidx.at(d->vars[i].name)])
          throw Unsupported("separator density overlaps out of order");
      if (prefix == k) {
        plan.push_back({PlanStep::Observe, &f});
      } else {
        plan.push_back({PlanStep::SeedDensity, &f, prefix});
        for (int i = prefix; i < k; ++i) seeded[vidx.at(d->vars[i].name)] = true;
      }
    } else if (std::holds_alternative<AmbiguousRangeFactor>(f)) {
      ambiguous.push_back(&f);
    } else {
      queue.push_back(&f);
    }
  }

  size_t stalled = 0;
  while (!queue.empty()) {
    const Factor* f = queue.front();
    queue.pop_front();
    auto fvars = factor_variables(*f);
    int a = vidx.at(fvars[0].name), b = vidx.at(fvars[1].name);
    if (seeded[a] && seeded[b]) {
      plan.push_back({PlanStep::Observe, f});
      stalled = 0;
    } else if (seeded[a] || seeded[b]) {
      int known = seeded[a] ? a : b;
      int unknown = seeded[a] ? b : a;
      plan.push_back({PlanStep::Forward, f, 0, known, unknown});
      seeded[unknown] = true;
      stalled = 0;
    } else {
      queue.push_back(f);
      if (++stalled >= queue.size())
        throw StalledQueue("remaining binary factors have two unknowns");
    }
  }
  for (const Factor* f : ambiguous) plan.push_back({PlanStep::Observe, f});

  for (size_t i = 0; i < seeded.size(); ++i)
    if (!seeded[i])
      throw UnseedableClique("variable '" + graph.variables()[i].name +
                             "' is unreachable from any prior");
  return plan;
}

}  // namespace

SampleSet reference_posterior(const FactorGraph& graph, int n,
                              RngStream& rng) {
  const auto& vars = graph.variables();
  if (graph.total_dim() > 12)
    throw DimensionTooLarge("reference sampler is limited to 12 dimensions");
  if (vars.empty() || n <= 0)
    throw DegenerateSamples("nothing to sample");

  std::map<std::string, int> vidx;
  for (size_t i = 0; i < vars.size(); ++i)
    vidx[vars[i].name] = static_cast<int>(i);
  std::vector<PlanStep> plan = proposal_plan(graph, vidx);

  std::vector<Eigen::VectorXd> value(vars.size());
  auto lookup = [&](const std::string& name) -> const Eigen::VectorXd& {
    return value[vidx.at(name)];
  };

  // Oversampled proposal pool; the output is resampled down to n draws.
  const int m = 8 * n;
  Eigen::MatrixXd draws(m, graph.total_dim());
  Eigen::VectorXd logw(m);
  for (int i = 0; i < m; ++i) {
    double lw = 0.0;
    for (const auto& step : plan) {
      const Factor& f = *step.factor;
      switch (step.kind) {
        case PlanStep::SeedPrior: {
          const auto& p = std::get<PriorFactor>(f);
          Eigen::VectorXd x(p.var.dim());
          for (int d = 0; d < p.var.dim(); ++d)
            x[d] = rng.normal(p.mean[d], p.sigmas[d]);
          if (p.var.kind == VarKind::Pose2) x[2] = wrap_angle(x[2]);
          value[step.unknown] = x;
          break;  // proposal equals the factor; weight untouched
        }
        case PlanStep::SeedDensity: {
          const auto& d = std::get<SeparatorDensityFactor>(f);
          if (step.prefix == 0) {
            Eigen::VectorXd joint = d.flow.sample(rng);
            int at = 0;
            for (const auto& v : d.vars) {
              value[vidx.at(v.name)] = joint.segment(at, v.dim());
              at += v.dim();
            }
          } else {
            int prefix_dim = 0;
            for (int j = 0; j < step.prefix; ++j)
              prefix_dim += d.vars[j].dim();
            Eigen::VectorXd lead(prefix_dim);
            int at = 0;
            for (int j = 0; j < step.prefix; ++j) {
              lead.segment(at, d.vars[j].dim()) = value[vidx.at(d.vars[j].name)];
              at += d.vars[j].dim();
            }
            Eigen::VectorXd tail = d.flow.condition(lead).sample(rng);
            at = 0;
            for (size_t j = step.prefix; j < d.vars.size(); ++j) {
              value[vidx.at(d.vars[j].name)] =
                  tail.segment(at, d.vars[j].dim());
              at += d.vars[j].dim();
            }
            // f / q leaves the marginal density of the realized prefix
            lw += d.flow.marginal(prefix_dim).log_density(lead);
          }
          break;
        }
        case PlanStep::Forward: {
          if (const auto* od = std::get_if<OdometryFactor>(&f)) {
            Eigen::Vector3d xi;
            for (int d = 0; d < 3; ++d)
              xi[d] = rng.normal(0.0, std::sqrt(od->cov[d]));
            Pose2 noise = se2_exp(xi);
            Pose2 known(value[step.known][0], value[step.known][1],
                        value[step.known][2]);
            Pose2 sampled =
                vars[step.unknown].name == od->to.name
                    ? known.compose(od->measured).compose(noise)
                    : known.compose(noise.inverse())
                          .compose(od->measured.inverse());
            value[step.unknown] = sampled.vec();
            Pose2 from(lookup(od->from.name)[0], lookup(od->from.name)[1],
                       lookup(od->from.name)[2]);
            Pose2 to(lookup(od->to.name)[0], lookup(od->to.name)[1],
                     lookup(od->to.name)[2]);
            Eigen::Vector3d resid = se2_log(
                od->measured.inverse().compose(from.inverse().compose(to)));
            lw += std::log(det_v(resid[2]));
          } else {
            const auto& rf = std::get<RangeFactor>(f);
            double radius = rng.normal(rf.measured, rf.sigma);
            double bearing = rng.uniform(-M_PI, M_PI);
            const Eigen::VectorXd& kv = value[step.known];
            double rho = std::max(std::abs(radius), 1e-12);
            bool pose_known = vars[step.known].name == rf.pose.name;
            if (pose_known) {
              Eigen::Vector2d l(kv[0] + radius * std::cos(bearing),
                                kv[1] + radius * std::sin(bearing));
              value[step.unknown] = l;
            } else {
              Eigen::VectorXd p(3);
              p[0] = kv[0] + radius * std::cos(bearing);
              p[1] = kv[1] + radius * std::sin(bearing);
              p[2] = rng.uniform(-M_PI, M_PI);
              value[step.unknown] = p;
              lw += std::log(2.0 * M_PI);  // uniform heading proposal
            }
            // Position proposal density in the plane: two radius preimages
            // over the polar Jacobian.
            double lq = log_sum_exp(gaussian_log_pdf(rf.measured - rho, rf.sigma),
                                    gaussian_log_pdf(rf.measured + rho, rf.sigma)) -
                        std::log(2.0 * M_PI * rho);
            lw += gaussian_log_pdf(rf.measured - rho, rf.sigma) - lq;
          }
          break;
        }
        case PlanStep::Observe:
          lw += factor_log_density(f, lookup);
          break;
      }
    }
    int col = 0;
    for (size_t v = 0; v < vars.size(); ++v) {
      draws.row(i).segment(col, vars[v].dim()) = value[v];
      col += vars[v].dim();
    }
    logw[i] = lw;
  }

  // Self-normalized weights, effective-sample-size guard, then systematic
  // resampling.
  double mx = logw.maxCoeff();
  Eigen::VectorXd w = (logw.array() - mx).exp();
  double total = w.sum();
  double ess = total * total / w.squaredNorm();
  if (!(ess > n / 10.0))
    throw DegenerateWeights("effective sample size " + std::to_string(ess) +
                            " from " + std::to_string(m) + " proposals");

  SampleSet out;
  out.variables = vars;
  out.samples.resize(n, graph.total_dim());
  double u = rng.uniform();
  int j = 0;
  double cum = w[0] / total;
  for (int i = 0; i < n; ++i) {
    double target = (i + u) / n;
    while (cum < target && j + 1 < m) cum += w[++j] / total;
    out.samples.row(i) = draws.row(j);
  }
  return out;
}

double mmd(const SampleSet& a, const SampleSet& b, double bandwidth) {
  if (a.variables.size() != b.variables.size())
    throw LayoutMismatch("sample sets cover different variables");
  for (size_t i = 0; i < a.variables.size(); ++i)
    if (!(a.variables[i] == b.variables[i]))
      throw LayoutMismatch("sample sets cover different variables");
  if (a.samples.cols() != b.samples.cols())
    throw LayoutMismatch("sample sets have different widths");

  const Eigen::MatrixXd& A = a.samples;
  const Eigen::MatrixXd& B = b.samples;
  const Eigen::Index na = A.rows(), nb = B.rows();

  double h = bandwidth;
  if (h <= 0.0) {
    std::vector<double> dist;
    dist.reserve(static_cast<size_t>(na + nb) * (na + nb - 1) / 2);
    auto row = [&](Eigen::Index i) {
      return i < na ? A.row(i) : B.row(i - na);
    };
    for (Eigen::Index i = 0; i < na + nb; ++i)
      for (Eigen::Index j = i + 1; j < na + nb; ++j)
        dist.push_back((row(i) - row(j)).norm());
    if (dist.empty()) return 0.0;
    auto mid = dist.begin() + dist.size() / 2;
    std::nth_element(dist.begin(), mid, dist.end());
    h = *mid;
    if (h <= 0.0) h = 1.0;
  }
  const double gamma = 1.0 / (2.0 * h * h);

  auto mean_kernel = [&](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < Y.rows(); ++j)
        acc += std::exp(-gamma * (X.row(i) - Y.row(j)).squaredNorm());
    return acc / (static_cast<double>(X.rows()) * Y.rows());
  };
  double m2 = mean_kernel(A, A) + mean_kernel(B, B) - 2.0 * mean_kernel(A, B);
  return std::sqrt(std::max(0.0, m2));
}

double rmse(const SampleSet& samples, const Assignment& truth) {
  if (samples.variables.empty())
    throw MissingVariable("sample set has no variables");
  double acc = 0.0;
  for (const auto& v : samples.variables) {
    Eigen::Vector2d mean =
        samples.columns(v.name).leftCols(2).colwise().mean();
    Eigen::Vector2d target = assignment_at(truth, v.name).head(2);
    acc += (mean - target).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(samples.variables.size()));
}

std::string AssociationHypothesis::label() const {
  std::string out;
  for (size_t i = 0; i < chosen.size(); ++i)
    out += (i ? "," : "") + chosen[i];
  return out;
}

namespace {

std::vector<const AmbiguousRangeFactor*> ambiguous_factors(
    const FactorGraph& graph) {
  std::vector<const AmbiguousRangeFactor*> out;
  for (const auto& f : graph.factors())
    if (const auto* a = std::get_if<AmbiguousRangeFactor>(f.get()))
      out.push_back(a);
  if (out.empty())
    throw NoAmbiguousFactors("graph has no ambiguous range factors");
  return out;
}

// Per sample, per factor: normalized candidate probabilities.
std::vector<std::vector<Eigen::VectorXd>> candidate_probs(
    const SampleSet& samples,
    const std::vector<const AmbiguousRangeFactor*>& factors) {
  const Eigen::Index n = samples.samples.rows();
  std::vector<std::vector<Eigen::VectorXd>> probs(
      n, std::vector<Eigen::VectorXd>(factors.size()));
  for (size_t j = 0; j < factors.size(); ++j) {
    const auto& f = *factors[j];
    Eigen::MatrixXd pose = samples.columns(f.pose.name);
    std::vector<Eigen::MatrixXd> cand;
    cand.reserve(f.candidates.size());
    for (const auto& c : f.candidates) cand.push_back(samples.columns(c.name));
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd ll(static_cast<Eigen::Index>(f.candidates.size()));
      for (size_t c = 0; c < f.candidates.size(); ++c) {
        double d = std::hypot(cand[c](i, 0) - pose(i, 0),
                              cand[c](i, 1) - pose(i, 1));
        ll[static_cast<Eigen::Index>(c)] =
            gaussian_log_pdf(f.measured - d, f.sigma);
      }
      Eigen::VectorXd p = (ll.array() - ll.maxCoeff()).exp();
      probs[i][j] = p / p.sum();
    }
  }
  return probs;
}

}  // namespace

std::map<AssociationHypothesis, double> association_belief(
    const SampleSet& samples, const FactorGraph& graph) {
  auto factors = ambiguous_factors(graph);
  size_t total = 1;
  for (const auto* f : factors) {
    total *= f->candidates.size();
    if (total > 65536)
      throw Unsupported("too many joint association hypotheses");
  }
  auto probs = candidate_probs(samples, factors);
  const Eigen::Index n = samples.samples.rows();

  std::map<AssociationHypothesis, double> belief;
  std::vector<size_t> pick(factors.size(), 0);
  for (size_t h = 0; h < total; ++h) {
    AssociationHypothesis hyp;
    for (size_t j = 0; j < factors.size(); ++j)
      hyp.chosen.push_back(factors[j]->candidates[pick[j]].name);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double p = 1.0;
      for (size_t j = 0; j < factors.size(); ++j)
        p *= probs[i][j][static_cast<Eigen::Index>(pick[j])];
      acc += p;
    }
    belief[hyp] = acc / static_cast<double>(n);
    for (size_t j = factors.size(); j-- > 0;) {
      if (++pick[j] < factors[j]->candidates.size()) break;
      pick[j] = 0;
    }
  }
  return belief;
}

std::vector<std::map<std::string, double>> association_marginals(
    const SampleSet& samples, const FactorGraph& graph) {
  auto factors = ambiguous_factors(graph);
  auto probs = candidate_probs(samples, factors);
  const Eigen::Index n = samples.samples.rows();

  std::vector<std::map<std::string, double>> out(factors.size());
  for (size_t j = 0; j < factors.size(); ++j) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(
        static_cast<Eigen::Index>(factors[j]->candidates.size()));
    for (Eigen::Index i = 0; i < n; ++i) acc += probs[i][j];
    acc /= static_cast<double>(n);
    for (size_t c = 0; c < factors[j]->candidates.size(); ++c)
      out[j][factors[j]->candidates[c].name] =
          acc[static_cast<Eigen::Index>(c)];
  }
  return out;
}

void append_metrics(std::ostream& os, const StepMetrics& m) {
  os << "step " << m.step << '\n';
  os << "runtime " << std::setprecision(6) << m.runtime_seconds << '\n';
  os << std::setprecision(9);
  if (m.rmse) os << "rmse " << *m.rmse << '\n';
  if (m.mmd) os << "mmd " << *m.mmd << '\n';
  for (const auto& [label, p] : m.beliefs)
    os << "belief " << label << ' ' << p << '\n';
  os << '\n';
}

}  // namespace flowsam
