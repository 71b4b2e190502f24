#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>
#include <stdexcept>

#include "flowsam/dataset.hpp"
#include "flowsam/factor_graph.hpp"
#include "flowsam/geometry.hpp"
#include "flowsam/metrics.hpp"
#include "flowsam/rng.hpp"
#include "flowsam/session.hpp"

namespace py = pybind11;
using namespace flowsam;

namespace {

VariableId var_id(const std::string& name, int dim) {
  if (dim != 2 && dim != 3) throw std::invalid_argument("variable dim must be 2 or 3");
  return {name, dim == 3 ? VarKind::Pose2 : VarKind::Point2};
}

std::vector<Factor> unwrap_steps(const Dataset& d, int step) {
  std::vector<Factor> out;
  for (const FactorPtr& f : d.steps.at(static_cast<std::size_t>(step)))
    out.push_back(*f);
  return out;
}

SampleSet draw_sample_set(const Session& s, int n, std::uint64_t seed) {
  RngStream rng(seed);
  return {s.graph().variables(), s.sample_posterior_matrix(n, rng)};
}

}  // namespace

PYBIND11_MODULE(_flowsam, m) {
  m.doc() = "Incremental non-Gaussian factor-graph inference with normalizing flows";

  py::class_<Pose2>(m, "Pose2")
      .def(py::init<>())
      .def(py::init<double, double, double>(), py::arg("x"), py::arg("y"),
           py::arg("theta"))
      .def_readwrite("x", &Pose2::x)
      .def_readwrite("y", &Pose2::y)
      .def_readwrite("theta", &Pose2::theta)
      .def("compose", &Pose2::compose)
      .def("inverse", &Pose2::inverse)
      .def("vec", &Pose2::vec)
      .def("__repr__", [](const Pose2& p) {
        std::ostringstream os;
        os << "Pose2(" << p.x << ", " << p.y << ", " << p.theta << ")";
        return os.str();
      });

  py::enum_<VarKind>(m, "VarKind")
      .value("Pose2", VarKind::Pose2)
      .value("Point2", VarKind::Point2);

  py::class_<VariableId>(m, "VariableId")
      .def(py::init<const std::string&, VarKind>(), py::arg("name"),
           py::arg("kind"))
      .def_readwrite("name", &VariableId::name)
      .def_readwrite("kind", &VariableId::kind)
      .def("dim", &VariableId::dim)
      .def("__repr__", [](const VariableId& v) {
        return "VariableId('" + v.name + "', " +
               (v.kind == VarKind::Pose2 ? "Pose2" : "Point2") + ")";
      });

  py::class_<PriorFactor>(m, "PriorFactor")
      .def_readwrite("var", &PriorFactor::var)
      .def_readwrite("mean", &PriorFactor::mean)
      .def_readwrite("sigmas", &PriorFactor::sigmas)
      .def("__repr__", [](const PriorFactor& f) { return factor_label(f); });

  py::class_<OdometryFactor>(m, "OdometryFactor")
      .def_readwrite("from_", &OdometryFactor::from)
      .def_readwrite("to", &OdometryFactor::to)
      .def_readwrite("measured", &OdometryFactor::measured)
      .def_readwrite("cov", &OdometryFactor::cov)
      .def("__repr__", [](const OdometryFactor& f) { return factor_label(f); });

  py::class_<RangeFactor>(m, "RangeFactor")
      .def_readwrite("pose", &RangeFactor::pose)
      .def_readwrite("landmark", &RangeFactor::landmark)
      .def_readwrite("measured", &RangeFactor::measured)
      .def_readwrite("sigma", &RangeFactor::sigma)
      .def("__repr__", [](const RangeFactor& f) { return factor_label(f); });

  py::class_<AmbiguousRangeFactor>(m, "AmbiguousRangeFactor")
      .def_readwrite("pose", &AmbiguousRangeFactor::pose)
      .def_readwrite("candidates", &AmbiguousRangeFactor::candidates)
      .def_readwrite("measured", &AmbiguousRangeFactor::measured)
      .def_readwrite("sigma", &AmbiguousRangeFactor::sigma)
      .def("__repr__",
           [](const AmbiguousRangeFactor& f) { return factor_label(f); });

  py::class_<SeparatorDensityFactor>(m, "SeparatorDensityFactor")
      .def("__repr__",
           [](const SeparatorDensityFactor& f) { return factor_label(f); });

  m.def(
      "prior",
      [](const std::string& name, const Eigen::VectorXd& mean,
         const Eigen::VectorXd& sigmas) {
        PriorFactor f;
        f.var = var_id(name, static_cast<int>(mean.size()));
        f.mean = mean;
        f.sigmas = sigmas;
        return f;
      },
      py::arg("name"), py::arg("mean"), py::arg("sigmas"),
      "Gaussian prior; a 3-vector mean declares a pose, a 2-vector a point.");
  m.def(
      "odometry",
      [](const std::string& from, const std::string& to, const Pose2& measured,
         const Eigen::Vector3d& cov) {
        OdometryFactor f;
        f.from = {from, VarKind::Pose2};
        f.to = {to, VarKind::Pose2};
        f.measured = measured;
        f.cov = cov;
        return f;
      },
      py::arg("from_"), py::arg("to"), py::arg("measured"), py::arg("cov"),
      "Relative pose measurement with diagonal tangent covariance.");
  m.def(
      "range_measurement",
      [](const std::string& pose, const std::string& landmark, double measured,
         double sigma) {
        RangeFactor f;
        f.pose = {pose, VarKind::Pose2};
        f.landmark = {landmark, VarKind::Point2};
        f.measured = measured;
        f.sigma = sigma;
        return f;
      },
      py::arg("pose"), py::arg("landmark"), py::arg("measured"),
      py::arg("sigma"));
  m.def(
      "ambiguous_range",
      [](const std::string& pose, const std::vector<std::string>& candidates,
         double measured, double sigma) {
        AmbiguousRangeFactor f;
        f.pose = {pose, VarKind::Pose2};
        for (const auto& c : candidates) f.candidates.push_back({c, VarKind::Point2});
        f.measured = measured;
        f.sigma = sigma;
        return f;
      },
      py::arg("pose"), py::arg("candidates"), py::arg("measured"),
      py::arg("sigma"),
      "Range whose landmark is one of the candidates, equally likely a priori.");

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("sample_count", &TrainConfig::sample_count)
      .def_readwrite("knots", &TrainConfig::knots)
      .def_readwrite("hidden", &TrainConfig::hidden)
      .def_readwrite("step_size", &TrainConfig::step_size)
      .def_readwrite("window", &TrainConfig::window)
      .def_readwrite("rel_tol", &TrainConfig::rel_tol)
      .def_readwrite("max_iterations", &TrainConfig::max_iterations)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<UpdateStats>(m, "UpdateStats")
      .def_readonly("step", &UpdateStats::step)
      .def_readonly("cliques", &UpdateStats::cliques)
      .def_readonly("retrained", &UpdateStats::retrained)
      .def_readonly("reused", &UpdateStats::reused)
      .def_readonly("fit_iterations", &UpdateStats::fit_iterations)
      .def("__repr__", [](const UpdateStats& s) {
        std::ostringstream os;
        os << "UpdateStats(step=" << s.step << ", cliques=" << s.cliques
           << ", retrained=" << s.retrained << ", reused=" << s.reused
           << ", fit_iterations=" << s.fit_iterations << ")";
        return os.str();
      });

  py::class_<Session>(m, "Session")
      .def(py::init<TrainConfig, std::uint64_t, int>(),
           py::arg("config") = TrainConfig{}, py::arg("seed") = 0,
           py::arg("threads") = 1)
      .def("update",
           static_cast<UpdateStats (Session::*)(std::vector<Factor>)>(
               &Session::update),
           py::arg("factors"),
           py::call_guard<py::gil_scoped_release>(),
           "Adds factors, re-eliminates and retrains the affected cliques.")
      .def(
          "sample",
          [](const Session& s, int n, std::uint64_t seed) {
            RngStream rng(seed);
            return s.sample_posterior_matrix(n, rng);
          },
          py::arg("n"), py::arg("seed") = 0,
          py::call_guard<py::gil_scoped_release>(),
          "Joint posterior draws, one column per dimension.")
      .def("column_labels", &Session::column_labels)
      .def("posterior_log_density", &Session::posterior_log_density,
           py::arg("assignment"))
      .def("tree_outline", [](const Session& s) { return s.tree().outline(); })
      .def("variables", [](const Session& s) { return s.graph().variables(); })
      .def("total_dim", [](const Session& s) { return s.graph().total_dim(); })
      .def_property_readonly("step", &Session::step)
      .def_property_readonly("fit_count", &Session::fit_count)
      .def_property_readonly("config", &Session::config);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("truth", &Dataset::truth)
      .def_readonly("variables", &Dataset::variables)
      .def_property_readonly(
          "num_steps",
          [](const Dataset& d) { return static_cast<int>(d.steps.size()); })
      .def("step", &unwrap_steps, py::arg("index"),
           "Factors delivered at the given step.");

  py::class_<ManhattanConfig>(m, "ManhattanConfig")
      .def(py::init<>())
      .def_readwrite("grid_size", &ManhattanConfig::grid_size)
      .def_readwrite("step_length", &ManhattanConfig::step_length)
      .def_readwrite("pose_count", &ManhattanConfig::pose_count)
      .def_readwrite("landmark_count", &ManhattanConfig::landmark_count)
      .def_readwrite("range_sigma", &ManhattanConfig::range_sigma)
      .def_readwrite("odom_cov", &ManhattanConfig::odom_cov)
      .def_readwrite("ambiguity", &ManhattanConfig::ambiguity)
      .def_readwrite("sensing_radius", &ManhattanConfig::sensing_radius)
      .def_readwrite("seed", &ManhattanConfig::seed);

  m.def("generate_manhattan", &generate_manhattan,
        py::arg("config") = ManhattanConfig{},
        "Grid-world range SLAM scenario.");
  m.def("generate_small_loop", &generate_small_loop, py::arg("seed") = 0,
        py::arg("with_ambiguity") = true, py::arg("range_sigma") = 0.2,
        "Six-pose loop whose early range pair leaves a bimodal landmark.");
  m.def("read_dataset", &read_dataset_file, py::arg("path"));
  m.def("write_dataset", &write_dataset_file, py::arg("dataset"),
        py::arg("path"));

  py::class_<RangeBiasModel>(m, "RangeBiasModel")
      .def(py::init<>())
      .def_readwrite("slope", &RangeBiasModel::slope)
      .def_readwrite("intercept", &RangeBiasModel::intercept)
      .def_readwrite("residual_sigma", &RangeBiasModel::residual_sigma)
      .def("correct", &RangeBiasModel::correct, py::arg("measured"));

  m.def("calibrate_ranges", &calibrate_ranges, py::arg("pairs"),
        "Affine bias fit from (true, measured) distance pairs.");
  m.def(
      "load_range_odometry",
      [](const std::string& odometry_path, const std::string& range_path,
         double range_sigma, const RangeBiasModel* bias) {
        return load_range_odometry(odometry_path, range_path, range_sigma,
                                   bias);
      },
      py::arg("odometry_path"), py::arg("range_path"),
      py::arg("range_sigma") = 1.0, py::arg("bias") = nullptr,
      "Timestamped dead-reckoning + range log, one step per key pose.");

  py::class_<SampleSet>(m, "SampleSet")
      .def_readonly("variables", &SampleSet::variables)
      .def_readonly("samples", &SampleSet::samples)
      .def("columns", &SampleSet::columns, py::arg("name"));

  m.def("sample_set", &draw_sample_set, py::arg("session"), py::arg("n"),
        py::arg("seed") = 0,
        "Posterior draws from the session wrapped with their layout.");
  m.def(
      "reference_posterior",
      [](const Session& s, int n, std::uint64_t seed) {
        RngStream rng(seed);
        return reference_posterior(s.graph(), n, rng);
      },
      py::arg("session"), py::arg("n"), py::arg("seed") = 0,
      py::call_guard<py::gil_scoped_release>(),
      "Importance-sampling oracle over the session's graph.");
  m.def("mmd", &mmd, py::arg("a"), py::arg("b"), py::arg("bandwidth") = 0.0);
  m.def("rmse", &rmse, py::arg("samples"), py::arg("truth"));
  m.def(
      "association_belief",
      [](const SampleSet& samples, const Session& s) {
        std::map<std::string, double> out;
        for (const auto& [hyp, p] : association_belief(samples, s.graph()))
          out[hyp.label()] = p;
        return out;
      },
      py::arg("samples"), py::arg("session"),
      "Posterior probability of each joint data association.");
}
