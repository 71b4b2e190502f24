#include "flowsam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "flowsam/errors.hpp"
#include "flowsam/geometry.hpp"
#include "flowsam/rng.hpp"

namespace flowsam {

namespace {

VariableId pose_var(int k) { return {"X" + std::to_string(k), VarKind::Pose2}; }
VariableId point_var(int j) {
  return {"L" + std::to_string(j), VarKind::Point2};
}

class DatasetBuilder {
 public:
  explicit DatasetBuilder(Dataset& d) : d_(d) {}

  void begin_step() { d_.steps.emplace_back(); }

  void add(Factor f) {
    FactorPtr p = make_factor(std::move(f));
    for (const auto& v : factor_variables(*p))
      if (seen_.insert(v.name).second) d_.variables.push_back(v);
    d_.steps.back().push_back(std::move(p));
  }

 private:
  Dataset& d_;
  std::set<std::string> seen_;
};

Pose2 noisy_relative(const Pose2& from, const Pose2& to,
                     const Eigen::Vector3d& cov, RngStream& rng) {
  Eigen::Vector3d xi;
  for (int i = 0; i < 3; ++i) xi[i] = rng.normal(0.0, std::sqrt(cov[i]));
  return from.inverse().compose(to).compose(se2_exp(xi));
}

// Factor noise models must stay positive even when the generator itself is
// run noise-free.
double floor_sigma(double s) { return std::max(s, 1e-6); }
Eigen::Vector3d floor_cov(const Eigen::Vector3d& c) {
  return c.cwiseMax(1e-12);
}

const Eigen::Vector3d kAnchorSigmas{0.1, 0.1, 0.05};

}  // namespace

Dataset generate_manhattan(const ManhattanConfig& cfg) {
  if (cfg.pose_count < 2) throw Unsupported("pose count must be at least 2");
  if (cfg.grid_size < 2) throw Unsupported("grid needs at least 2x2 vertices");
  if (cfg.step_length <= 0.0) throw Unsupported("step length must be positive");
  if (cfg.ambiguity < 0.0 || cfg.ambiguity > 1.0)
    throw Unsupported("ambiguity probability outside [0, 1]");
  if (cfg.landmark_count < 0) throw Unsupported("negative landmark count");

  RngStream rng(cfg.seed);
  const int g = cfg.grid_size;
  const double span = (g - 1) * cfg.step_length;

  std::vector<Eigen::Vector2d> verts(cfg.pose_count);
  if (cfg.trajectory == TrajectoryKind::Lawnmower) {
    // Serpentine sweep over the vertices, reflecting at the ends so longer
    // runs walk back the way they came.
    const int period = g * g;
    const int m = 2 * period - 2;
    for (int k = 0; k < cfg.pose_count; ++k) {
      int r = k % m;
      int idx = r < period ? r : m - r;
      int row = idx / g, col = idx % g;
      if (row % 2 == 1) col = g - 1 - col;
      verts[k] = {col * cfg.step_length, row * cfg.step_length};
    }
  } else {
    Eigen::Vector2i cell(0, 0);
    verts[0] = {0.0, 0.0};
    const int dx[] = {1, -1, 0, 0};
    const int dy[] = {0, 0, 1, -1};
    for (int k = 1; k < cfg.pose_count; ++k) {
      std::vector<Eigen::Vector2i> moves;
      for (int m2 = 0; m2 < 4; ++m2) {
        Eigen::Vector2i c(cell.x() + dx[m2], cell.y() + dy[m2]);
        if (c.x() >= 0 && c.x() < g && c.y() >= 0 && c.y() < g)
          moves.push_back(c);
      }
      cell = moves[rng.uniform_int(static_cast<int>(moves.size()))];
      verts[k] = {cell.x() * cfg.step_length, cell.y() * cfg.step_length};
    }
  }

  std::vector<Pose2> truth(cfg.pose_count);
  for (int k = 0; k < cfg.pose_count; ++k) {
    Eigen::Vector2d delta = k + 1 < cfg.pose_count ? verts[k + 1] - verts[k]
                                                   : verts[k] - verts[k - 1];
    truth[k] = Pose2(verts[k].x(), verts[k].y(),
                     std::atan2(delta.y(), delta.x()));
  }

  // Landmarks go anywhere in the one-cell-inflated bounding box that keeps
  // a cell of clearance to the trajectory; the clearance relaxes if the box
  // is too crowded to satisfy it.
  std::vector<Eigen::Vector2d> lms;
  for (int j = 0; j < cfg.landmark_count; ++j) {
    double clearance = cfg.step_length;
    for (int attempt = 1;; ++attempt) {
      Eigen::Vector2d p(rng.uniform(-cfg.step_length, span + cfg.step_length),
                        rng.uniform(-cfg.step_length, span + cfg.step_length));
      bool ok = true;
      for (const auto& v : verts)
        if ((p - v).norm() < clearance) ok = false;
      for (const auto& l : lms)
        if ((p - l).norm() < clearance) ok = false;
      if (ok) {
        lms.push_back(p);
        break;
      }
      if (attempt % 1000 == 0) clearance *= 0.9;
    }
  }

  const double radius =
      cfg.sensing_radius > 0.0 ? cfg.sensing_radius : span * std::sqrt(2.0);

  Dataset d;
  DatasetBuilder builder(d);
  std::set<int> sighted;
  for (int k = 0; k < cfg.pose_count; ++k) {
    builder.begin_step();
    if (k == 0) {
      builder.add(PriorFactor{pose_var(0), truth[0].vec(), kAnchorSigmas});
    } else {
      Pose2 measured = noisy_relative(truth[k - 1], truth[k], cfg.odom_cov, rng);
      builder.add(OdometryFactor{pose_var(k - 1), pose_var(k), measured,
                                 floor_cov(cfg.odom_cov)});
    }

    int target = -1;
    double best = radius;
    for (int j = 0; j < static_cast<int>(lms.size()); ++j) {
      double dist = (lms[j] - verts[k]).norm();
      if (dist < best) {
        best = dist;
        target = j;
      }
    }
    if (target < 0) continue;
    double z = best + rng.normal(0.0, cfg.range_sigma);
    bool eligible = sighted.count(target) > 0 && sighted.size() >= 2;
    if (eligible && rng.uniform() < cfg.ambiguity) {
      std::vector<VariableId> candidates;
      for (int j : sighted) candidates.push_back(point_var(j));
      builder.add(AmbiguousRangeFactor{pose_var(k), candidates, z,
                                       floor_sigma(cfg.range_sigma)});
    } else {
      builder.add(RangeFactor{pose_var(k), point_var(target), z,
                              floor_sigma(cfg.range_sigma)});
    }
    sighted.insert(target);
  }

  for (int k = 0; k < cfg.pose_count; ++k)
    d.truth[pose_var(k).name] = truth[k].vec();
  // Short runs may never sight a landmark; truth only covers variables the
  // factors actually mention.
  for (int j : sighted) d.truth[point_var(j).name] = lms[j];
  return d;
}

Dataset generate_small_loop(std::uint64_t seed, bool with_ambiguity,
                            double range_sigma) {
  RngStream rng(seed);
  const std::vector<Eigen::Vector2d> pts = {{0, 0},  {2, 0},  {2, -2},
                                            {2, -4}, {0, -4}, {0, -2}};
  std::vector<Pose2> truth(pts.size());
  for (size_t k = 0; k < pts.size(); ++k) {
    Eigen::Vector2d delta =
        k + 1 < pts.size() ? pts[k + 1] - pts[k] : pts[k] - pts[k - 1];
    truth[k] = Pose2(pts[k].x(), pts[k].y(), std::atan2(delta.y(), delta.x()));
  }
  const Eigen::Vector2d l1(1.0, 1.5), l2(3.0, -3.0);
  const Eigen::Vector3d odom_cov(4e-4, 4e-4, 1e-4);

  struct RangePlan {
    int step;
    int pose;
    int landmark;  // 1 or 2
    bool ambiguous;
  };
  const std::vector<RangePlan> plan = {
      {0, 0, 1, false}, {1, 1, 1, false},        {2, 2, 1, false},
      {3, 3, 1, false}, {3, 3, 2, false},        {4, 4, 2, with_ambiguity},
      {5, 5, 2, with_ambiguity}, {5, 5, 1, with_ambiguity}};

  Dataset d;
  DatasetBuilder builder(d);
  size_t next_range = 0;
  for (int k = 0; k < static_cast<int>(pts.size()); ++k) {
    builder.begin_step();
    if (k == 0) {
      builder.add(PriorFactor{pose_var(0), truth[0].vec(),
                              Eigen::Vector3d(0.05, 0.05, 0.02)});
    } else {
      builder.add(OdometryFactor{pose_var(k - 1), pose_var(k),
                                 noisy_relative(truth[k - 1], truth[k],
                                                odom_cov, rng),
                                 odom_cov});
    }
    for (; next_range < plan.size() && plan[next_range].step == k;
         ++next_range) {
      const auto& r = plan[next_range];
      const Eigen::Vector2d& lm = r.landmark == 1 ? l1 : l2;
      double z = (lm - pts[r.pose]).norm() + rng.normal(0.0, range_sigma);
      if (r.ambiguous) {
        builder.add(AmbiguousRangeFactor{pose_var(r.pose),
                                         {point_var(1), point_var(2)},
                                         z,
                                         range_sigma});
      } else {
        builder.add(RangeFactor{pose_var(r.pose), point_var(r.landmark), z,
                                range_sigma});
      }
    }
  }
  for (size_t k = 0; k < truth.size(); ++k)
    d.truth[pose_var(static_cast<int>(k)).name] = truth[k].vec();
  d.truth[point_var(1).name] = l1;
  d.truth[point_var(2).name] = l2;
  return d;
}

namespace {

std::string kind_token(VarKind k) {
  return k == VarKind::Pose2 ? "POSE2" : "POINT2";
}

void write_values(std::ostream& os, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << v[i];
}

}  // namespace

void write_dataset(const Dataset& d, std::ostream& os) {
  os << std::setprecision(17);
  std::set<std::string> declared;
  auto declare = [&](const VariableId& v) {
    if (declared.insert(v.name).second)
      os << "VAR " << v.name << ' ' << kind_token(v.kind) << '\n';
  };
  for (const auto& step : d.steps) {
    for (const auto& fp : step) {
      for (const auto& v : factor_variables(*fp)) declare(v);
      std::visit(
          [&](const auto& f) {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, PriorFactor>) {
              os << "PRIOR " << f.var.name;
              write_values(os, f.mean);
              os << " SIGMAS";
              write_values(os, f.sigmas);
              os << '\n';
            } else if constexpr (std::is_same_v<T, OdometryFactor>) {
              os << "ODOM " << f.from.name << ' ' << f.to.name;
              write_values(os, f.measured.vec());
              os << " COV";
              write_values(os, f.cov);
              os << '\n';
            } else if constexpr (std::is_same_v<T, RangeFactor>) {
              os << "RANGE " << f.pose.name << ' ' << f.landmark.name << ' '
                 << f.measured << " SIGMA " << f.sigma << '\n';
            } else if constexpr (std::is_same_v<T, AmbiguousRangeFactor>) {
              os << "AMB_RANGE " << f.pose.name << ' ' << f.measured
                 << " SIGMA " << f.sigma << " CANDIDATES";
              for (const auto& c : f.candidates) os << ' ' << c.name;
              os << '\n';
            } else {
              throw Unsupported("separator densities are not serializable");
            }
          },
          *fp);
    }
    os << "STEP\n";
  }
  for (const auto& [name, value] : d.truth) {
    os << "TRUTH " << name;
    write_values(os, value);
    os << '\n';
  }
}

void write_dataset_file(const Dataset& d, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open '" + path + "' for writing");
  write_dataset(d, os);
}

Dataset read_dataset(std::istream& is) {
  Dataset d;
  d.steps.emplace_back();
  std::map<std::string, VarKind> kinds;
  int line_no = 0;

  auto fail = [&](const std::string& msg) -> void {
    throw ParseError("line " + std::to_string(line_no) + ": " + msg);
  };
  auto parse_num = [&](const std::string& tok) {
    try {
      size_t pos = 0;
      double v = std::stod(tok, &pos);
      if (pos != tok.size()) fail("bad number '" + tok + "'");
      return v;
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      fail("bad number '" + tok + "'");
      return 0.0;
    }
  };
  auto var_of = [&](const std::string& name) {
    auto it = kinds.find(name);
    if (it == kinds.end()) fail("undeclared variable '" + name + "'");
    return VariableId{name, it->second};
  };
  auto add_factor = [&](Factor f) {
    try {
      d.steps.back().push_back(make_factor(std::move(f)));
    } catch (const Error& e) {
      fail(e.what());
    }
  };

  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;

    const std::string& kw = tok[0];
    if (kw == "VAR") {
      if (tok.size() != 3) fail("VAR expects a name and a kind");
      VarKind kind;
      if (tok[2] == "POSE2")
        kind = VarKind::Pose2;
      else if (tok[2] == "POINT2")
        kind = VarKind::Point2;
      else {
        fail("unknown kind '" + tok[2] + "'");
        continue;
      }
      auto [it, fresh] = kinds.emplace(tok[1], kind);
      if (!fresh && it->second != kind)
        fail("variable '" + tok[1] + "' redeclared with a new kind");
      if (fresh) d.variables.push_back({tok[1], kind});
    } else if (kw == "PRIOR") {
      if (tok.size() < 2) fail("PRIOR expects a variable");
      VariableId v = var_of(tok[1]);
      const size_t need = 2 + v.dim() + 1 + v.dim();
      if (tok.size() != need || tok[2 + v.dim()] != "SIGMAS")
        fail("PRIOR expects " + std::to_string(v.dim()) +
             " values, SIGMAS, and " + std::to_string(v.dim()) + " sigmas");
      Eigen::VectorXd mean(v.dim()), sigmas(v.dim());
      for (int i = 0; i < v.dim(); ++i) mean[i] = parse_num(tok[2 + i]);
      for (int i = 0; i < v.dim(); ++i)
        sigmas[i] = parse_num(tok[3 + v.dim() + i]);
      add_factor(PriorFactor{v, mean, sigmas});
    } else if (kw == "ODOM") {
      if (tok.size() != 10 || tok[6] != "COV")
        fail("ODOM expects two poses, three values, COV, three entries");
      VariableId from = var_of(tok[1]), to = var_of(tok[2]);
      Pose2 measured(parse_num(tok[3]), parse_num(tok[4]), parse_num(tok[5]));
      Eigen::Vector3d cov(parse_num(tok[7]), parse_num(tok[8]),
                          parse_num(tok[9]));
      add_factor(OdometryFactor{from, to, measured, cov});
    } else if (kw == "RANGE") {
      if (tok.size() != 6 || tok[4] != "SIGMA")
        fail("RANGE expects pose, landmark, value, SIGMA, sigma");
      add_factor(RangeFactor{var_of(tok[1]), var_of(tok[2]),
                             parse_num(tok[3]), parse_num(tok[5])});
    } else if (kw == "AMB_RANGE") {
      if (tok.size() < 7 || tok[3] != "SIGMA" || tok[5] != "CANDIDATES")
        fail("AMB_RANGE expects pose, value, SIGMA, sigma, CANDIDATES, list");
      std::vector<VariableId> candidates;
      for (size_t i = 6; i < tok.size(); ++i)
        candidates.push_back(var_of(tok[i]));
      add_factor(AmbiguousRangeFactor{var_of(tok[1]), candidates,
                                      parse_num(tok[2]), parse_num(tok[4])});
    } else if (kw == "STEP") {
      if (tok.size() != 1) fail("STEP takes no arguments");
      d.steps.emplace_back();
    } else if (kw == "TRUTH") {
      if (tok.size() < 2) fail("TRUTH expects a variable");
      VariableId v = var_of(tok[1]);
      if (tok.size() != 2 + static_cast<size_t>(v.dim()))
        fail("TRUTH expects " + std::to_string(v.dim()) + " values");
      Eigen::VectorXd value(v.dim());
      for (int i = 0; i < v.dim(); ++i) value[i] = parse_num(tok[2 + i]);
      d.truth[v.name] = value;
    } else {
      fail("unknown record '" + kw + "'");
    }
  }
  if (!d.steps.empty() && d.steps.back().empty()) d.steps.pop_back();
  return d;
}

Dataset read_dataset_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open '" + path + "'");
  return read_dataset(is);
}

RangeBiasModel calibrate_ranges(
    const std::vector<std::pair<double, double>>& pairs) {
  const int n = static_cast<int>(pairs.size());
  if (n < 3) throw RankDeficient("need at least 3 calibration pairs");
  double mean_d = 0.0, mean_e = 0.0;
  for (const auto& [t, m] : pairs) {
    mean_d += t;
    mean_e += m - t;
  }
  mean_d /= n;
  mean_e /= n;
  double sxx = 0.0, sxe = 0.0;
  for (const auto& [t, m] : pairs) {
    sxx += (t - mean_d) * (t - mean_d);
    sxe += (t - mean_d) * (m - t - mean_e);
  }
  if (sxx < 1e-12) throw RankDeficient("true distances do not vary");

  RangeBiasModel model;
  model.slope = sxe / sxx;
  model.intercept = mean_e - model.slope * mean_d;
  if (std::abs(1.0 + model.slope) < 1e-9)
    throw RankDeficient("fitted slope of -1 cannot be inverted");
  double ssr = 0.0;
  for (const auto& [t, m] : pairs) {
    double r = (m - t) - (model.slope * t + model.intercept);
    ssr += r * r;
  }
  model.residual_sigma = std::max(std::sqrt(ssr / (n - 2)), 1e-9);
  return model;
}

namespace {

struct RawLine {
  int number;
  std::vector<std::string> tokens;
};

std::vector<RawLine> read_rows(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open '" + path + "'");
  std::vector<RawLine> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    std::istringstream ls(line);
    RawLine row{line_no, {}};
    for (std::string t; ls >> t;) row.tokens.push_back(t);
    if (!row.tokens.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

double field(const std::string& path, const RawLine& row, size_t i) {
  try {
    size_t pos = 0;
    double v = std::stod(row.tokens[i], &pos);
    if (pos == row.tokens[i].size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError(path + " line " + std::to_string(row.number) +
                   ": bad number '" + row.tokens[i] + "'");
}

}  // namespace

Dataset load_range_odometry(const std::string& odometry_path,
                            const std::string& range_path, double range_sigma,
                            const RangeBiasModel* bias) {
  auto odom_rows = read_rows(odometry_path);
  auto range_rows = read_rows(range_path);

  struct Motion {
    double time, dx, dtheta;
  };
  std::vector<Motion> motions;
  for (const auto& row : odom_rows) {
    if (row.tokens.size() != 3)
      throw ParseError(odometry_path + " line " + std::to_string(row.number) +
                       ": expected <time> <dx> <dtheta>");
    Motion m{field(odometry_path, row, 0), field(odometry_path, row, 1),
             field(odometry_path, row, 2)};
    if (!motions.empty() && m.time < motions.back().time)
      throw ParseError(odometry_path + " line " + std::to_string(row.number) +
                       ": timestamps are not sorted");
    motions.push_back(m);
  }

  struct Sighting {
    double time;
    long id;  // -1 for anonymous
    double range;
  };
  std::vector<Sighting> sightings;
  std::set<long> ids;
  for (const auto& row : range_rows) {
    if (row.tokens.size() != 3)
      throw ParseError(range_path + " line " + std::to_string(row.number) +
                       ": expected <time> <landmark_id|-> <range>");
    Sighting s{field(range_path, row, 0), -1, field(range_path, row, 2)};
    const std::string& id = row.tokens[1];
    if (id != "-") {
      try {
        size_t pos = 0;
        s.id = std::stol(id, &pos, 10);
        if (pos != id.size() || s.id < 0) throw std::invalid_argument(id);
      } catch (const std::exception&) {
        throw UnknownLandmarkId(range_path + " line " +
                                std::to_string(row.number) + ": '" + id + "'");
      }
      ids.insert(s.id);
    }
    sightings.push_back(s);
  }

  std::vector<VariableId> landmarks;
  for (long id : ids)
    landmarks.push_back({"L" + std::to_string(id), VarKind::Point2});

  // Range rows attach to the latest pose reached by their timestamp.
  auto pose_at = [&](double t) {
    int k = 0;
    while (k < static_cast<int>(motions.size()) && motions[k].time <= t) ++k;
    return k;
  };

  Dataset d;
  DatasetBuilder builder(d);
  const Eigen::Vector3d default_cov(0.04, 0.0016, 0.0004);
  for (int k = 0; k <= static_cast<int>(motions.size()); ++k) {
    builder.begin_step();
    if (k == 0) {
      builder.add(PriorFactor{pose_var(0), Eigen::Vector3d::Zero(),
                              kAnchorSigmas});
    } else {
      const Motion& m = motions[k - 1];
      builder.add(OdometryFactor{pose_var(k - 1), pose_var(k),
                                 Pose2(m.dx, 0.0, m.dtheta), default_cov});
    }
    for (const auto& s : sightings) {
      if (pose_at(s.time) != k) continue;
      double r = bias ? bias->correct(s.range) : s.range;
      if (s.id < 0) {
        if (landmarks.empty())
          throw UnknownLandmarkId(
              "anonymous range but no identified landmarks in " + range_path);
        builder.add(
            AmbiguousRangeFactor{pose_var(k), landmarks, r, range_sigma});
      } else {
        builder.add(RangeFactor{pose_var(k),
                                {"L" + std::to_string(s.id), VarKind::Point2},
                                r,
                                range_sigma});
      }
    }
  }
  return d;
}

}  // namespace flowsam
