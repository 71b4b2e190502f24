#include "flowsam/flow.hpp"

#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>

#include "flowsam/autodiff.hpp"
#include "flowsam/errors.hpp"
#include "flowsam/geometry.hpp"

namespace flowsam {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kStdFloor = 1e-6;
constexpr double kDegenerateStd = 1e-9;
}  // namespace

double TriangularMap::standardize(int d, double x) const {
  if (params_->angular[d]) x = wrap_angle(x);
  return (x - params_->mean[d]) / params_->stddev[d];
}

double TriangularMap::unstandardize(int d, double u) const {
  double x = params_->mean[d] + params_->stddev[d] * u;
  return params_->angular[d] ? wrap_angle(x) : x;
}

void TriangularMap::raw_for_dim(int d, const double* u, double* raw) const {
  const DimParams& p = params_->dims[d];
  const int nr = params_->spec.raw_size();
  if (d == 0) {
    for (int j = 0; j < nr; ++j) raw[j] = p.raw[j];
    return;
  }
  Eigen::Map<const Eigen::VectorXd> uin(u, d);
  Eigen::VectorXd h = ((p.w1 * uin + p.b1).array().tanh()).matrix();
  Eigen::Map<Eigen::VectorXd>(raw, nr) = p.w2 * h + p.b2;
}

TriangularMap TriangularMap::from_params(
    std::shared_ptr<const FlowParams> params) {
  TriangularMap m;
  m.params_ = std::move(params);
  m.out_dim_ = m.params_->dim;
  m.prefix_std_.resize(0);
  return m;
}

Eigen::VectorXd TriangularMap::forward(const Eigen::VectorXd& x,
                                       double* log_det) const {
  if (empty() || x.size() != out_dim_)
    throw LayoutMismatch("forward: expected " + std::to_string(out_dim_) +
                         " values, got " + std::to_string(x.size()));
  const int m = static_cast<int>(prefix_std_.size());
  const int nr = params_->spec.raw_size();
  Eigen::VectorXd u(m + out_dim_);
  u.head(m) = prefix_std_;
  Eigen::VectorXd y(out_dim_);
  std::vector<double> raw(nr);
  double ld = 0.0;
  for (int i = 0; i < out_dim_; ++i) {
    const int d = m + i;
    u[d] = standardize(d, x[i]);
    if (params_->frozen[d]) {
      y[i] = u[d];
      ld += -std::log(params_->stddev[d]);
      continue;
    }
    raw_for_dim(d, u.data(), raw.data());
    DecodedSpline dec = decode_spline(params_->spec, raw.data());
    double slope = 1.0;
    y[i] = spline_forward(dec, u[d], &slope, nullptr);
    ld += std::log(slope) - std::log(params_->stddev[d]);
  }
  if (log_det) *log_det = ld;
  return y;
}

Eigen::VectorXd TriangularMap::inverse(const Eigen::VectorXd& y) const {
  if (empty() || y.size() != out_dim_)
    throw LayoutMismatch("inverse: expected " + std::to_string(out_dim_) +
                         " values, got " + std::to_string(y.size()));
  const int m = static_cast<int>(prefix_std_.size());
  const int nr = params_->spec.raw_size();
  Eigen::VectorXd u(m + out_dim_);
  u.head(m) = prefix_std_;
  Eigen::VectorXd x(out_dim_);
  std::vector<double> raw(nr);
  for (int i = 0; i < out_dim_; ++i) {
    const int d = m + i;
    if (params_->frozen[d]) {
      u[d] = y[i];
      x[i] = unstandardize(d, y[i]);
      continue;
    }
    raw_for_dim(d, u.data(), raw.data());
    DecodedSpline dec = decode_spline(params_->spec, raw.data());
    u[d] = spline_inverse(dec, y[i]);
    x[i] = unstandardize(d, u[d]);
  }
  return x;
}

double TriangularMap::log_density(const Eigen::VectorXd& x) const {
  double ld = 0.0;
  Eigen::VectorXd y = forward(x, &ld);
  return -0.5 * y.squaredNorm() - 0.5 * kLog2Pi * out_dim_ + ld;
}

TriangularMap TriangularMap::condition(const Eigen::VectorXd& values) const {
  if (empty() || values.size() > out_dim_)
    throw LayoutMismatch("condition: prefix longer than active dimensions");
  const int m = static_cast<int>(prefix_std_.size());
  TriangularMap out;
  out.params_ = params_;
  out.out_dim_ = out_dim_ - static_cast<int>(values.size());
  out.prefix_std_.resize(m + values.size());
  out.prefix_std_.head(m) = prefix_std_;
  for (int i = 0; i < values.size(); ++i)
    out.prefix_std_[m + i] = standardize(m + i, values[i]);
  return out;
}

TriangularMap TriangularMap::marginal(int k) const {
  if (empty() || k < 0 || k > out_dim_)
    throw LayoutMismatch("marginal: invalid dimension count");
  TriangularMap out = *this;
  out.out_dim_ = k;
  return out;
}

Eigen::VectorXd TriangularMap::sample(RngStream& rng) const {
  Eigen::VectorXd y(out_dim_);
  for (int i = 0; i < out_dim_; ++i) y[i] = rng.normal();
  return inverse(y);
}

Eigen::MatrixXd TriangularMap::sample(int n, RngStream& rng) const {
  Eigen::MatrixXd out(n, out_dim_);
  for (int i = 0; i < n; ++i) out.row(i) = sample(rng).transpose();
  return out;
}

Eigen::MatrixXd TriangularMap::sample_suffix(
    const Eigen::MatrixXd& prefix_rows, RngStream& rng) const {
  const int k = static_cast<int>(prefix_rows.cols());
  if (k > out_dim_) throw LayoutMismatch("sample_suffix: prefix too wide");
  Eigen::MatrixXd out(prefix_rows.rows(), out_dim_ - k);
  for (Eigen::Index r = 0; r < prefix_rows.rows(); ++r) {
    TriangularMap cond = condition(prefix_rows.row(r).transpose());
    out.row(r) = cond.sample(rng).transpose();
  }
  return out;
}

std::vector<bool> TriangularMap::active_angular() const {
  const int m = static_cast<int>(prefix_std_.size());
  std::vector<bool> out(out_dim_);
  for (int i = 0; i < out_dim_; ++i) out[i] = params_->angular[m + i];
  return out;
}

// ---- training --------------------------------------------------------------

TriangularMap fit_triangular_map(const Eigen::MatrixXd& samples,
                                 const std::vector<bool>& angular,
                                 const TrainConfig& cfg, FitDiagnostics* diag) {
  const int n = static_cast<int>(samples.rows());
  const int dim = static_cast<int>(samples.cols());
  if (dim == 0 || n < 2) throw DegenerateSamples("need at least two samples");
  if (static_cast<int>(angular.size()) != dim)
    throw LayoutMismatch("angular flags do not match sample dimension");

  auto params = std::make_shared<FlowParams>();
  params->dim = dim;
  params->hidden = cfg.hidden;
  params->spec.knots = cfg.knots;
  params->angular = angular;
  params->frozen.assign(dim, false);
  params->mean.resize(dim);
  params->stddev.resize(dim);
  params->dims.resize(dim);

  Eigen::MatrixXd wrapped = samples;
  for (int d = 0; d < dim; ++d)
    if (angular[d])
      for (int i = 0; i < n; ++i) wrapped(i, d) = wrap_angle(wrapped(i, d));

  FitDiagnostics local;
  FitDiagnostics& dg = diag ? *diag : local;
  dg = FitDiagnostics{};

  for (int d = 0; d < dim; ++d) {
    params->mean[d] = wrapped.col(d).mean();
    double var = (wrapped.col(d).array() - params->mean[d]).square().mean();
    double sd = std::sqrt(var);
    if (sd < kDegenerateStd) {
      params->frozen[d] = true;
      params->stddev[d] = kStdFloor;
      dg.degenerate_dims.push_back(d);
    } else {
      params->stddev[d] = sd;
    }
  }

  Eigen::MatrixXd u(n, dim);
  for (int d = 0; d < dim; ++d)
    u.col(d) = (wrapped.col(d).array() - params->mean[d]) / params->stddev[d];

  const SplineSpec spec = params->spec;
  const int nr = spec.raw_size();
  const Eigen::VectorXd ident = identity_raw(spec);
  RngStream rng(cfg.seed);

  ad::Tape tape(n);
  std::vector<int> data_nodes(dim);
  for (int d = 0; d < dim; ++d) tape.data(u.col(d).array());
  for (int d = 0; d < dim; ++d) data_nodes[d] = d;

  struct DimNodes {
    std::vector<int> w1, b1, w2, b2, raw_direct;
    int loss = -1;
  };
  std::vector<DimNodes> nodes(dim);
  std::vector<int> loss_nodes;

  for (int d = 0; d < dim; ++d) {
    if (params->frozen[d]) continue;
    DimNodes& dn = nodes[d];
    std::vector<int> raw_ids(nr);
    if (d == 0) {
      dn.raw_direct.resize(nr);
      for (int j = 0; j < nr; ++j) {
        dn.raw_direct[j] = tape.param(ident[j] + 0.01 * rng.normal());
        raw_ids[j] = dn.raw_direct[j];
      }
    } else {
      const int h = cfg.hidden;
      const double w1_scale = 1.0 / std::sqrt(static_cast<double>(d));
      dn.w1.resize(h * d);
      dn.b1.resize(h);
      dn.w2.resize(nr * h);
      dn.b2.resize(nr);
      for (int i = 0; i < h * d; ++i)
        dn.w1[i] = tape.param(w1_scale * rng.normal());
      for (int i = 0; i < h; ++i) dn.b1[i] = tape.param(0.01 * rng.normal());
      for (int i = 0; i < nr * h; ++i)
        dn.w2[i] = tape.param(0.01 * rng.normal());
      for (int j = 0; j < nr; ++j)
        dn.b2[j] = tape.param(ident[j] + 0.01 * rng.normal());

      std::vector<int> inputs(data_nodes.begin(), data_nodes.begin() + d);
      std::vector<int> hidden_nodes(h);
      for (int i = 0; i < h; ++i) {
        std::vector<int> w_row(dn.w1.begin() + i * d,
                               dn.w1.begin() + (i + 1) * d);
        hidden_nodes[i] = tape.tanh(tape.lin_comb(w_row, inputs, dn.b1[i]));
      }
      for (int j = 0; j < nr; ++j) {
        std::vector<int> w_row(dn.w2.begin() + j * h,
                               dn.w2.begin() + (j + 1) * h);
        raw_ids[j] = tape.lin_comb(w_row, hidden_nodes, dn.b2[j]);
      }
    }
    dn.loss = tape.spline_nll(raw_ids, u.col(d).array(), spec);
    loss_nodes.push_back(dn.loss);
  }

  // ln(sigma) terms of the raw-space objective; constant during training
  double log_std_sum = 0.0;
  for (int d = 0; d < dim; ++d)
    if (!params->frozen[d]) log_std_sum += std::log(params->stddev[d]);

  const auto& pids = tape.params();
  const int np = static_cast<int>(pids.size());
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(np);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(np);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  int it = 0;
  for (; it < cfg.max_iterations; ++it) {
    tape.forward();
    double loss = log_std_sum;
    for (int ln : loss_nodes) loss += tape.value(ln).mean();
    dg.loss_history.push_back(loss);

    if (it + 1 >= 2 * cfg.window) {
      const auto& h = dg.loss_history;
      double recent = 0.0, previous = 0.0;
      for (int i = 0; i < cfg.window; ++i) {
        recent += h[h.size() - 1 - i];
        previous += h[h.size() - 1 - cfg.window - i];
      }
      recent /= cfg.window;
      previous /= cfg.window;
      double rel = std::abs(recent - previous) /
                   std::max(std::abs(previous), 1e-12);
      if (rel < cfg.rel_tol && recent <= previous) {
        ++it;
        break;
      }
    }

    tape.backward(loss_nodes, 1.0 / n);
    const double bc1 = 1.0 - std::pow(beta1, it + 1);
    const double bc2 = 1.0 - std::pow(beta2, it + 1);
    for (int i = 0; i < np; ++i) {
      double g = tape.param_grad(pids[i]);
      m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
      m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g;
      double step = cfg.step_size * (m1[i] / bc1) /
                    (std::sqrt(m2[i] / bc2) + eps);
      tape.set_param_value(pids[i], tape.param_value(pids[i]) - step);
    }
  }
  dg.iterations = it;
  dg.final_loss = dg.loss_history.empty() ? 0.0 : dg.loss_history.back();

  // copy trained parameters out of the tape
  for (int d = 0; d < dim; ++d) {
    DimParams& p = params->dims[d];
    if (params->frozen[d]) continue;
    const DimNodes& dn = nodes[d];
    if (d == 0) {
      p.raw.resize(nr);
      for (int j = 0; j < nr; ++j) p.raw[j] = tape.param_value(dn.raw_direct[j]);
    } else {
      const int h = cfg.hidden;
      p.w1.resize(h, d);
      p.b1.resize(h);
      p.w2.resize(nr, h);
      p.b2.resize(nr);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < d; ++j)
          p.w1(i, j) = tape.param_value(dn.w1[i * d + j]);
      for (int i = 0; i < h; ++i) p.b1[i] = tape.param_value(dn.b1[i]);
      for (int j = 0; j < nr; ++j)
        for (int i = 0; i < h; ++i)
          p.w2(j, i) = tape.param_value(dn.w2[j * h + i]);
      for (int j = 0; j < nr; ++j) p.b2[j] = tape.param_value(dn.b2[j]);
    }
  }

  return TriangularMap::from_params(std::move(params));
}

// ---- serialization ---------------------------------------------------------

namespace {

constexpr const char* kMagic = "flowsam-triangular-map";
constexpr int kVersion = 1;

void write_vec(std::ostream& os, const Eigen::VectorXd& v) {
  os << v.size();
  os << std::hexfloat;
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << v[i];
  os << std::defaultfloat << '\n';
}

Eigen::VectorXd read_vec(std::istream& is) {
  Eigen::Index n = 0;
  if (!(is >> n) || n < 0) throw ParseError("bad vector length in map blob");
  Eigen::VectorXd v(n);
  std::string tok;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(is >> tok)) throw ParseError("truncated vector in map blob");
    v[i] = std::strtod(tok.c_str(), nullptr);
  }
  return v;
}

void expect(std::istream& is, const std::string& word) {
  std::string tok;
  if (!(is >> tok) || tok != word)
    throw ParseError("expected '" + word + "' in map blob, got '" + tok + "'");
}

}  // namespace

void TriangularMap::serialize(std::ostream& os) const {
  if (empty()) throw Unsupported("cannot serialize an empty map");
  const FlowParams& p = *params_;
  os << kMagic << ' ' << kVersion << '\n';
  os << "dim " << p.dim << " hidden " << p.hidden << " knots " << p.spec.knots
     << '\n';
  os << std::hexfloat << "spec " << p.spec.tail << ' ' << p.spec.min_frac
     << ' ' << p.spec.deriv_floor << std::defaultfloat << '\n';
  os << "flags";
  for (int d = 0; d < p.dim; ++d)
    os << ' ' << (p.angular[d] ? 1 : 0) << ' ' << (p.frozen[d] ? 1 : 0);
  os << '\n';
  os << "mean ";
  write_vec(os, p.mean);
  os << "std ";
  write_vec(os, p.stddev);
  for (int d = 0; d < p.dim; ++d) {
    const DimParams& dp = p.dims[d];
    if (p.frozen[d]) {
      os << "dim_frozen " << d << '\n';
      continue;
    }
    if (d == 0) {
      os << "dim_raw " << d << ' ';
      write_vec(os, dp.raw);
    } else {
      os << "dim_net " << d << '\n';
      write_vec(os, Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(
                    dp.w1.data(), dp.w1.size())));
      write_vec(os, dp.b1);
      write_vec(os, Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(
                    dp.w2.data(), dp.w2.size())));
      write_vec(os, dp.b2);
    }
  }
  os << "view " << out_dim_ << ' ';
  write_vec(os, prefix_std_);
}

TriangularMap TriangularMap::deserialize(std::istream& is) {
  std::string tok;
  if (!(is >> tok) || tok != kMagic)
    throw ParseError("not a serialized triangular map");
  int version = 0;
  if (!(is >> version) || version != kVersion)
    throw ParseError("unsupported map version");
  auto p = std::make_shared<FlowParams>();
  expect(is, "dim");
  is >> p->dim;
  expect(is, "hidden");
  is >> p->hidden;
  expect(is, "knots");
  is >> p->spec.knots;
  expect(is, "spec");
  for (double* f : {&p->spec.tail, &p->spec.min_frac, &p->spec.deriv_floor}) {
    if (!(is >> tok)) throw ParseError("truncated spec in map blob");
    *f = std::strtod(tok.c_str(), nullptr);
  }
  expect(is, "flags");
  p->angular.resize(p->dim);
  p->frozen.resize(p->dim);
  for (int d = 0; d < p->dim; ++d) {
    int a = 0, f = 0;
    is >> a >> f;
    p->angular[d] = a != 0;
    p->frozen[d] = f != 0;
  }
  expect(is, "mean");
  p->mean = read_vec(is);
  expect(is, "std");
  p->stddev = read_vec(is);
  p->dims.resize(p->dim);
  const int nr = p->spec.raw_size();
  for (int d = 0; d < p->dim; ++d) {
    if (!(is >> tok)) throw ParseError("truncated map blob");
    int idx = -1;
    is >> idx;
    if (idx != d) throw ParseError("out-of-order dimension block");
    DimParams& dp = p->dims[d];
    if (tok == "dim_frozen") continue;
    if (tok == "dim_raw") {
      dp.raw = read_vec(is);
      if (dp.raw.size() != nr) throw ParseError("bad raw block size");
    } else if (tok == "dim_net") {
      Eigen::VectorXd w1 = read_vec(is);
      dp.b1 = read_vec(is);
      Eigen::VectorXd w2 = read_vec(is);
      dp.b2 = read_vec(is);
      dp.w1 = Eigen::Map<const Eigen::MatrixXd>(w1.data(), p->hidden, d);
      dp.w2 = Eigen::Map<const Eigen::MatrixXd>(w2.data(), nr, p->hidden);
    } else {
      throw ParseError("unknown dimension block '" + tok + "'");
    }
  }
  expect(is, "view");
  TriangularMap out;
  is >> out.out_dim_;
  out.prefix_std_ = read_vec(is);
  out.params_ = std::move(p);
  return out;
}

}  // namespace flowsam
