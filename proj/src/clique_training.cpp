#include "flowsam/clique_training.hpp"

#include <algorithm>
#include <deque>
#include <iomanip>
#include <map>

#include "flowsam/errors.hpp"

namespace flowsam {

int TrainingBatch::obs_dim() const {
  int d = 0;
  for (const auto& o : observations) d += o.dim;
  return d;
}

int TrainingBatch::sep_dim() const {
  int d = 0;
  for (const auto& v : separator) d += v.dim();
  return d;
}

int TrainingBatch::frontal_dim() const {
  int d = 0;
  for (const auto& v : frontals) d += v.dim();
  return d;
}

Eigen::VectorXd TrainingBatch::measured() const {
  Eigen::VectorXd z(obs_dim());
  int at = 0;
  for (const auto& o : observations) {
    z.segment(at, o.dim) = o.measured;
    at += o.dim;
  }
  return z;
}

std::vector<bool> TrainingBatch::angular() const {
  std::vector<bool> out;
  for (const auto& o : observations)
    out.insert(out.end(), o.angular.begin(), o.angular.end());
  for (const auto& v : separator) {
    auto a = angular_dims(v);
    out.insert(out.end(), a.begin(), a.end());
  }
  for (const auto& v : frontals) {
    auto a = angular_dims(v);
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

namespace {

const char* kPoseDims[] = {"x", "y", "theta"};

void append_labels(std::vector<std::string>& out, const std::string& base,
                   int dim) {
  if (dim == 1) {
    out.push_back(base + ".r");
    return;
  }
  for (int i = 0; i < dim; ++i) out.push_back(base + "." + kPoseDims[i]);
}

}  // namespace

std::vector<std::string> TrainingBatch::column_labels() const {
  std::vector<std::string> out;
  for (const auto& o : observations) append_labels(out, o.label, o.dim);
  for (const auto& v : separator) append_labels(out, v.name, v.dim());
  for (const auto& v : frontals) append_labels(out, v.name, v.dim());
  return out;
}

void dump_training_batch(const TrainingBatch& batch, std::ostream& os) {
  auto labels = batch.column_labels();
  for (size_t i = 0; i < labels.size(); ++i)
    os << (i ? "\t" : "") << labels[i];
  os << '\n';
  os << std::setprecision(17);
  for (Eigen::Index r = 0; r < batch.samples.rows(); ++r) {
    for (Eigen::Index c = 0; c < batch.samples.cols(); ++c)
      os << (c ? "\t" : "") << batch.samples(r, c);
    os << '\n';
  }
}

TrainingBatch simulate_training_samples(const FactorGraph& local, int n,
                                        RngStream& rng, int separator_count) {
  const auto& vars = local.variables();
  const int nv = static_cast<int>(vars.size());
  if (separator_count < 0 || separator_count > nv)
    throw LayoutMismatch("separator count exceeds variable count");
  if (n <= 0) throw DegenerateSamples("sample count must be positive");

  std::map<std::string, int> vidx;
  for (int i = 0; i < nv; ++i) vidx[vars[i].name] = i;

  std::vector<Eigen::MatrixXd> values(nv);
  std::vector<bool> seeded(nv, false);
  for (int i = 0; i < nv; ++i) values[i].resize(n, vars[i].dim());

  // Per-row view used when evaluating fully assigned factors.
  std::vector<Eigen::VectorXd> scratch(nv);
  auto fill_row = [&](int row) {
    for (int i = 0; i < nv; ++i)
      if (seeded[i]) scratch[i] = values[i].row(row);
  };
  auto lookup = [&](const std::string& name) -> const Eigen::VectorXd& {
    auto it = vidx.find(name);
    if (it == vidx.end() || !seeded[it->second])
      throw MissingVariable("'" + name + "' has no simulated value");
    return scratch[it->second];
  };

  struct Obs {
    ObservationBlock block;
    Eigen::MatrixXd sims;
  };
  std::vector<Obs> observations;

  auto close_loop = [&](const Factor& f, const Eigen::VectorXd& measured) {
    Obs o;
    o.block.label = factor_label(f);
    o.block.dim = static_cast<int>(measured.size());
    o.block.measured = measured;
    o.block.angular = observation_angular(f);
    if (o.block.angular.empty())
      o.block.angular.assign(o.block.dim, false);
    o.sims.resize(n, o.block.dim);
    for (int row = 0; row < n; ++row) {
      fill_row(row);
      o.sims.row(row) = simulate_measurement(f, lookup, rng);
    }
    observations.push_back(std::move(o));
  };

  auto seed_from_density = [&](const Factor& f) {
    const auto& d = std::get<SeparatorDensityFactor>(f);
    const int k = static_cast<int>(d.vars.size());
    std::vector<int> idx(k);
    for (int i = 0; i < k; ++i) idx[i] = vidx.at(d.vars[i].name);
    int prefix = 0;
    while (prefix < k && seeded[idx[prefix]]) ++prefix;
    for (int i = prefix; i < k; ++i)
      if (seeded[idx[i]])
        throw UnseedableClique(
            "separator density overlaps seeded variables out of order");
    if (prefix == k)
      throw UnseedableClique("separator density is fully seeded already");

    int prefix_dim = 0;
    for (int i = 0; i < prefix; ++i) prefix_dim += d.vars[i].dim();

    Eigen::MatrixXd draws;
    if (prefix == 0) {
      draws = d.flow.sample(n, rng);
    } else {
      Eigen::MatrixXd lead(n, prefix_dim);
      int at = 0;
      for (int i = 0; i < prefix; ++i) {
        lead.middleCols(at, d.vars[i].dim()) = values[idx[i]];
        at += d.vars[i].dim();
      }
      Eigen::MatrixXd tail = d.flow.sample_suffix(lead, rng);
      draws.resize(n, prefix_dim + tail.cols());
      draws << lead, tail;
    }
    int at = prefix_dim;
    for (int i = prefix; i < k; ++i) {
      values[idx[i]] = draws.middleCols(at, d.vars[i].dim());
      if (d.vars[i].kind == VarKind::Pose2)
        for (int row = 0; row < n; ++row)
          values[idx[i]](row, 2) = wrap_angle(values[idx[i]](row, 2));
      seeded[idx[i]] = true;
      at += d.vars[i].dim();
    }
  };

  // Seeding pass: prior-like factors first, binary factors queued, ambiguous
  // ranges always held back as virtual observations.
  std::deque<const Factor*> queue;
  std::vector<const Factor*> ambiguous;
  for (const auto& fp : local.factors()) {
    const Factor& f = *fp;
    if (const auto* p = std::get_if<PriorFactor>(&f)) {
      int vi = vidx.at(p->var.name);
      if (!seeded[vi]) {
        for (int row = 0; row < n; ++row)
          for (int d = 0; d < p->var.dim(); ++d) {
            double x = rng.normal(p->mean[d], p->sigmas[d]);
            if (p->var.kind == VarKind::Pose2 && d == 2) x = wrap_angle(x);
            values[vi](row, d) = x;
          }
        seeded[vi] = true;
      } else {
        close_loop(f, p->mean);  // re-observation of a seeded variable
      }
    } else if (std::holds_alternative<SeparatorDensityFactor>(f)) {
      seed_from_density(f);
    } else if (std::holds_alternative<AmbiguousRangeFactor>(f)) {
      ambiguous.push_back(&f);
    } else {
      queue.push_back(&f);
    }
  }
  if (nv > 0 && std::none_of(seeded.begin(), seeded.end(),
                             [](bool b) { return b; }))
    throw UnseedableClique("no prior-like factor seeds this graph");

  // Binary factors: forward-simulate single unknowns; fully known factors
  // close a loop and turn into virtual observations.
  size_t stalled = 0;
  while (!queue.empty()) {
    const Factor* f = queue.front();
    queue.pop_front();
    auto fvars = factor_variables(*f);
    int a = vidx.at(fvars[0].name), b = vidx.at(fvars[1].name);
    if (seeded[a] && seeded[b]) {
      Eigen::VectorXd measured;
      if (const auto* od = std::get_if<OdometryFactor>(f))
        measured = od->measured.vec();
      else
        measured = Eigen::VectorXd::Constant(1, std::get<RangeFactor>(*f).measured);
      close_loop(*f, measured);
      stalled = 0;
    } else if (seeded[a] || seeded[b]) {
      int known = seeded[a] ? a : b;
      int unknown = seeded[a] ? b : a;
      Eigen::VectorXd kv;
      for (int row = 0; row < n; ++row) {
        kv = values[known].row(row);
        values[unknown].row(row) =
            sample_endpoint(*f, vars[known].name, kv, rng);
      }
      seeded[unknown] = true;
      stalled = 0;
    } else {
      queue.push_back(f);
      if (++stalled >= queue.size())
        throw StalledQueue("remaining binary factors have two unknowns");
    }
  }

  for (const Factor* f : ambiguous) {
    for (const auto& v : factor_variables(*f))
      if (!seeded[vidx.at(v.name)])
        throw UnseedableClique("ambiguous range endpoint '" + v.name +
                               "' was never seeded");
    close_loop(*f, Eigen::VectorXd::Constant(
                       1, std::get<AmbiguousRangeFactor>(*f).measured));
  }

  for (int i = 0; i < nv; ++i)
    if (!seeded[i])
      throw UnseedableClique("variable '" + vars[i].name +
                             "' was never seeded");

  TrainingBatch batch;
  batch.separator.assign(vars.begin(), vars.begin() + separator_count);
  batch.frontals.assign(vars.begin() + separator_count, vars.end());
  int total = 0;
  for (const auto& o : observations) total += o.block.dim;
  for (const auto& v : vars) total += v.dim();
  batch.samples.resize(n, total);
  int col = 0;
  for (auto& o : observations) {
    batch.samples.middleCols(col, o.block.dim) = o.sims;
    col += o.block.dim;
    batch.observations.push_back(std::move(o.block));
  }
  for (int i = 0; i < nv; ++i) {
    batch.samples.middleCols(col, vars[i].dim()) = values[i];
    col += vars[i].dim();
  }
  if (!batch.samples.allFinite())
    throw DegenerateSamples("simulation produced non-finite values");
  return batch;
}

CliqueSampler train_clique(const TrainingBatch& batch, const TrainConfig& cfg) {
  const int total = batch.obs_dim() + batch.sep_dim() + batch.frontal_dim();
  if (batch.samples.cols() != total)
    throw LayoutMismatch("sample matrix does not match the batch layout");

  CliqueSampler cs;
  cs.separator = batch.separator;
  cs.frontals = batch.frontals;
  TriangularMap full = fit_triangular_map(batch.samples, batch.angular(), cfg,
                                          &cs.diagnostics);
  TriangularMap cond =
      batch.obs_dim() > 0 ? full.condition(batch.measured()) : full;
  cs.conditional = cond;
  if (batch.sep_dim() > 0)
    cs.separator_density = cond.marginal(batch.sep_dim());
  return cs;
}

Eigen::VectorXd sample_frontals(const CliqueSampler& cs,
                                const Eigen::VectorXd& s, RngStream& rng) {
  int sep_dim = 0;
  for (const auto& v : cs.separator) sep_dim += v.dim();
  if (s.size() != sep_dim)
    throw LayoutMismatch("separator value size does not match the clique");
  if (sep_dim == 0) return cs.conditional.sample(rng);
  return cs.conditional.condition(s).sample(rng);
}

Eigen::MatrixXd sample_frontals(const CliqueSampler& cs,
                                const Eigen::MatrixXd& s, RngStream& rng) {
  int sep_dim = 0;
  for (const auto& v : cs.separator) sep_dim += v.dim();
  if (s.cols() != sep_dim)
    throw LayoutMismatch("separator value size does not match the clique");
  return cs.conditional.sample_suffix(s, rng);
}

double separator_log_density(const CliqueSampler& cs,
                             const Eigen::VectorXd& s) {
  if (cs.separator.empty())
    throw EmptySeparator("clique has no separator");
  return cs.separator_density.log_density(s);
}

}  // namespace flowsam
