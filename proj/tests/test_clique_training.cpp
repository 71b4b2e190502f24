#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <flowsam/bayes_tree.hpp>
#include <flowsam/clique_training.hpp>
#include <flowsam/errors.hpp>
#include <flowsam/factor_graph.hpp>

#include "test_util.hpp"

using namespace flowsam;

namespace {

VariableId pose(const std::string& n) { return {n, VarKind::Pose2}; }
VariableId point(const std::string& n) { return {n, VarKind::Point2}; }

FactorPtr pose_prior(const std::string& n, double x, double y, double t,
                     double sx, double sy, double st) {
  Eigen::VectorXd mean(3), sig(3);
  mean << x, y, t;
  sig << sx, sy, st;
  return make_factor(PriorFactor{pose(n), mean, sig});
}

FactorPtr odom(const std::string& a, const std::string& b, double dx,
               double dy, double dt, const Eigen::Vector3d& cov) {
  return make_factor(OdometryFactor{pose(a), pose(b), Pose2(dx, dy, dt), cov});
}

FactorPtr range(const std::string& p, const std::string& l, double m,
                double sigma) {
  return make_factor(RangeFactor{pose(p), point(l), m, sigma});
}

// Prior, odometry to a second pose, and two sightings of one landmark; the
// second sighting closes a loop.
FactorGraph loop_graph() {
  FactorGraph g;
  g.add(pose_prior("X0", 0, 0, 0, 0.05, 0.05, 0.02));
  g.add(odom("X0", "X1", 1, 0, 0, Eigen::Vector3d(0.01, 0.01, 0.004)));
  g.add(range("X0", "L1", 2.0, 0.1));
  g.add(range("X1", "L1", 1.5, 0.1));
  return g;
}

}  // namespace

TEST_SUITE("clique") {

TEST_CASE("prior-only graphs simulate independent draws") {
  FactorGraph g;
  g.add(pose_prior("X0", 1.0, 2.0, 0.5, 0.1, 0.2, 0.05));
  RngStream rng(31);
  TrainingBatch batch = simulate_training_samples(g, 4000, rng);
  CHECK(batch.observations.empty());
  CHECK(batch.obs_dim() == 0);
  CHECK(batch.separator.empty());
  REQUIRE(batch.frontals.size() == 1);
  CHECK(batch.frontals[0].name == "X0");
  REQUIRE(batch.samples.rows() == 4000);
  REQUIRE(batch.samples.cols() == 3);
  Eigen::VectorXd mean = testutil::col_mean(batch.samples);
  Eigen::VectorXd sd = testutil::col_std(batch.samples);
  CHECK(std::abs(mean[0] - 1.0) < 0.02);
  CHECK(std::abs(mean[1] - 2.0) < 0.02);
  CHECK(std::abs(mean[2] - 0.5) < 0.01);
  CHECK(testutil::rel_err(sd[0], 0.1) < 0.05);
  CHECK(testutil::rel_err(sd[1], 0.2) < 0.05);
  CHECK(testutil::rel_err(sd[2], 0.05) < 0.05);
  CHECK(batch.column_labels() ==
        std::vector<std::string>{"X0.x", "X0.y", "X0.theta"});
  CHECK(batch.angular() == std::vector<bool>{false, false, true});
}

TEST_CASE("binary factors forward-simulate the unknown endpoint") {
  FactorGraph g;
  g.add(pose_prior("X0", 0, 0, 0, 0.01, 0.01, 0.01));
  g.add(odom("X0", "X1", 2, 0, 0, Eigen::Vector3d(0.04, 0.04, 0.01)));
  RngStream rng(32);
  TrainingBatch batch = simulate_training_samples(g, 4000, rng);
  CHECK(batch.obs_dim() == 0);  // acyclic: nothing loops back
  REQUIRE(batch.samples.cols() == 6);
  Eigen::VectorXd mean = testutil::col_mean(batch.samples);
  Eigen::VectorXd sd = testutil::col_std(batch.samples);
  CHECK(std::abs(mean[3] - 2.0) < 0.02);
  CHECK(std::abs(mean[4]) < 0.02);
  CHECK(std::abs(mean[5]) < 0.01);
  CHECK(testutil::rel_err(sd[3], std::sqrt(0.01 * 0.01 + 0.04)) < 0.1);
}

TEST_CASE("loop closures become virtual observations") {
  FactorGraph g = loop_graph();
  RngStream rng(33);
  TrainingBatch batch = simulate_training_samples(g, 3000, rng);
  REQUIRE(batch.observations.size() == 1);
  const ObservationBlock& o = batch.observations[0];
  CHECK(o.label == "range(X1,L1)");
  CHECK(o.dim == 1);
  CHECK(o.measured[0] == 1.5);
  CHECK(o.angular == std::vector<bool>{false});
  // Columns: observation, then X0, X1, L1 in declaration order.
  REQUIRE(batch.samples.cols() == 1 + 3 + 3 + 2);
  CHECK(batch.column_labels()[0] == "range(X1,L1).r");
  CHECK(batch.measured().size() == 1);

  // The observation column is the simulated X1-L1 distance plus noise.
  Eigen::VectorXd resid(batch.samples.rows());
  for (Eigen::Index r = 0; r < batch.samples.rows(); ++r) {
    double dx = batch.samples(r, 7) - batch.samples(r, 4);
    double dy = batch.samples(r, 8) - batch.samples(r, 5);
    resid[r] = batch.samples(r, 0) - std::hypot(dx, dy);
  }
  double rm = resid.mean();
  double rs = std::sqrt((resid.array() - rm).square().mean());
  CHECK(std::abs(rm) < 0.01);
  CHECK(testutil::rel_err(rs, 0.1) < 0.1);
}

TEST_CASE("a repeated prior is treated as a re-observation") {
  FactorGraph g;
  g.add(pose_prior("X0", 0, 0, 0, 0.1, 0.1, 0.05));
  g.add(pose_prior("X0", 0.3, -0.1, 0.2, 0.2, 0.2, 0.1));
  RngStream rng(34);
  TrainingBatch batch = simulate_training_samples(g, 500, rng);
  REQUIRE(batch.observations.size() == 1);
  CHECK(batch.observations[0].label == "prior(X0)");
  CHECK(batch.observations[0].dim == 3);
  Eigen::VectorXd want(3);
  want << 0.3, -0.1, 0.2;
  CHECK((batch.measured() - want).cwiseAbs().maxCoeff() == 0.0);
  CHECK(batch.samples.cols() == 6);
}

TEST_CASE("ambiguous ranges always observe") {
  FactorGraph g;
  g.add(make_factor(AmbiguousRangeFactor{
      pose("X0"), {point("L1"), point("L2")}, 2.2, 0.1}));
  g.add(pose_prior("X0", 0, 0, 0, 0.05, 0.05, 0.02));
  g.add(range("X0", "L1", 2.0, 0.1));
  g.add(range("X0", "L2", 3.0, 0.1));
  RngStream rng(35);
  TrainingBatch batch = simulate_training_samples(g, 2000, rng);
  REQUIRE(batch.observations.size() == 1);
  CHECK(batch.observations[0].label == "amb_range(X0)");
  CHECK(batch.observations[0].measured[0] == 2.2);
  // The virtual observation mixes both candidate distances.
  double lo = batch.samples.col(0).minCoeff();
  double hi = batch.samples.col(0).maxCoeff();
  CHECK(lo < 2.5);
  CHECK(hi > 2.5);
  CHECK(batch.samples.allFinite());
}

TEST_CASE("factor order does not matter for seeding") {
  std::vector<FactorPtr> fs = loop_graph().factors();
  FactorGraph g;
  g.add(fs[3]);
  g.add(fs[2]);
  g.add(fs[1]);
  g.add(fs[0]);
  RngStream rng(36);
  TrainingBatch batch = simulate_training_samples(g, 200, rng);
  CHECK(batch.samples.allFinite());
  REQUIRE(batch.observations.size() == 1);
  // With ranges queued ahead of the odometry, the X0 sighting seeds L1 and
  // the X1 sighting closes the loop once the odometry has run.
  CHECK(batch.observations[0].label == "range(X1,L1)");
}

TEST_CASE("unseedable and stalled graphs are rejected") {
  RngStream rng(37);
  {
    FactorGraph g;
    g.add(odom("X0", "X1", 1, 0, 0, Eigen::Vector3d(0.01, 0.01, 0.01)));
    CHECK_THROWS_AS(simulate_training_samples(g, 100, rng), UnseedableClique);
  }
  {
    FactorGraph g;
    g.add(pose_prior("X0", 0, 0, 0, 0.1, 0.1, 0.1));
    g.add(odom("X1", "X2", 1, 0, 0, Eigen::Vector3d(0.01, 0.01, 0.01)));
    CHECK_THROWS_AS(simulate_training_samples(g, 100, rng), StalledQueue);
  }
  {
    FactorGraph g;
    g.add(pose_prior("X0", 0, 0, 0, 0.1, 0.1, 0.1));
    g.add(make_factor(
        AmbiguousRangeFactor{pose("X0"), {point("L1")}, 1.0, 0.1}));
    CHECK_THROWS_AS(simulate_training_samples(g, 100, rng), UnseedableClique);
  }
  {
    FactorGraph g = loop_graph();
    CHECK_THROWS_AS(simulate_training_samples(g, 0, rng), DegenerateSamples);
    CHECK_THROWS_AS(simulate_training_samples(g, 100, rng, -1),
                    LayoutMismatch);
    CHECK_THROWS_AS(simulate_training_samples(g, 100, rng, 5),
                    LayoutMismatch);
  }
}

TEST_CASE("the separator count splits declared variables") {
  FactorGraph g;
  g.declare(pose("X1"));
  g.add(pose_prior("X1", 1, 0, 0, 0.1, 0.1, 0.05));
  g.add(odom("X1", "X0", -1, 0, 0, Eigen::Vector3d(0.01, 0.01, 0.004)));
  RngStream rng(38);
  TrainingBatch batch = simulate_training_samples(g, 300, rng, 1);
  REQUIRE(batch.separator.size() == 1);
  CHECK(batch.separator[0].name == "X1");
  REQUIRE(batch.frontals.size() == 1);
  CHECK(batch.frontals[0].name == "X0");
  CHECK(batch.sep_dim() == 3);
  CHECK(batch.frontal_dim() == 3);
  CHECK(batch.column_labels()[0] == "X1.x");
  CHECK(batch.column_labels()[3] == "X0.x");
}

TEST_CASE("separator densities seed their variables") {
  // A trained joint over (X1, L1): L1 sits two units right of X1.
  RngStream fit_rng(39);
  Eigen::MatrixXd joint(600, 5);
  for (int i = 0; i < 600; ++i) {
    double x = 1.0 + 0.1 * fit_rng.normal();
    double y = 0.1 * fit_rng.normal();
    double t = 0.1 * fit_rng.normal();
    joint.row(i) << x, y, t, x + 2.0 + 0.05 * fit_rng.normal(),
        y + 0.05 * fit_rng.normal();
  }
  TrainConfig cfg;
  cfg.max_iterations = 150;
  TriangularMap map = fit_triangular_map(
      joint, {false, false, true, false, false}, cfg);
  FactorPtr density = make_factor(
      SeparatorDensityFactor{{pose("X1"), point("L1")}, map});

  SUBCASE("a density alone seeds the whole block") {
    FactorGraph g;
    g.add(density);
    RngStream rng(40);
    TrainingBatch batch = simulate_training_samples(g, 2000, rng);
    CHECK(batch.obs_dim() == 0);
    REQUIRE(batch.samples.cols() == 5);
    Eigen::VectorXd mean = testutil::col_mean(batch.samples);
    CHECK(std::abs(mean[0] - 1.0) < 0.1);
    CHECK(std::abs(mean[3] - 3.0) < 0.1);
    CHECK(std::abs(mean[4]) < 0.1);
  }

  SUBCASE("a seeded prefix is completed conditionally") {
    FactorGraph g;
    g.add(pose_prior("X1", 1, 0, 0, 0.02, 0.02, 0.02));
    g.add(density);
    RngStream rng(41);
    TrainingBatch batch = simulate_training_samples(g, 2000, rng);
    REQUIRE(batch.samples.cols() == 5);
    Eigen::VectorXd mean = testutil::col_mean(batch.samples);
    CHECK(std::abs(mean[0] - 1.0) < 0.01);  // the prior's tight draw
    CHECK(std::abs(mean[3] - 3.0) < 0.1);
    // Conditional draws track their own row's prefix.
    Eigen::VectorXd gap =
        batch.samples.col(3) - batch.samples.col(0);
    double gm = gap.mean();
    double gs = std::sqrt((gap.array() - gm).square().mean());
    CHECK(std::abs(gm - 2.0) < 0.05);
    CHECK(gs < 0.15);
  }

  SUBCASE("seeded variables after unseeded ones are rejected") {
    FactorGraph g;
    Eigen::VectorXd lm(2), ls(2);
    lm << 3.0, 0.0;
    ls << 0.05, 0.05;
    g.declare(pose("X1"));
    g.add(make_factor(PriorFactor{point("L1"), lm, ls}));
    g.add(density);
    RngStream rng(42);
    CHECK_THROWS_AS(simulate_training_samples(g, 100, rng), UnseedableClique);
  }

  SUBCASE("a fully seeded density has nothing to add") {
    FactorGraph g;
    g.add(pose_prior("X1", 1, 0, 0, 0.1, 0.1, 0.1));
    Eigen::VectorXd lm(2), ls(2);
    lm << 3.0, 0.0;
    ls << 0.05, 0.05;
    g.add(make_factor(PriorFactor{point("L1"), lm, ls}));
    g.add(density);
    RngStream rng(43);
    CHECK_THROWS_AS(simulate_training_samples(g, 100, rng), UnseedableClique);
  }
}

TEST_CASE("training conditions on the recorded measurements") {
  FactorGraph g;
  g.add(pose_prior("X0", 0, 0, 0, 0.1, 0.1, 0.05));
  g.add(range("X0", "L1", 2.0, 0.1));
  g.add(range("X0", "L1", 3.0, 0.1));
  RngStream rng(44);
  TrainingBatch batch = simulate_training_samples(g, 800, rng);
  REQUIRE(batch.obs_dim() == 1);
  REQUIRE(batch.samples.cols() == 6);

  TrainConfig cfg;
  cfg.max_iterations = 120;
  CliqueSampler cs = train_clique(batch, cfg);
  CHECK(cs.separator.empty());
  REQUIRE(cs.frontals.size() == 2);
  CHECK(cs.conditional.dim() == 5);  // observation conditioned away
  CHECK(cs.separator_density.empty());
  CHECK(cs.diagnostics.iterations > 0);
  RngStream srng(45);
  Eigen::MatrixXd draws = cs.conditional.sample(50, srng);
  CHECK(draws.cols() == 5);
  CHECK(draws.allFinite());
  Eigen::VectorXd none(0);
  CHECK_THROWS_AS(separator_log_density(cs, none), EmptySeparator);

  TrainingBatch bad = batch;
  bad.samples = batch.samples.leftCols(5);
  CHECK_THROWS_AS(train_clique(bad, cfg), LayoutMismatch);
}

TEST_CASE("a gaussian chain clique matches direct simulation") {
  FactorGraph g;
  g.declare(pose("X1"));
  g.add(pose_prior("X0", 0, 0, 0, 0.05, 0.05, 0.02));
  g.add(odom("X0", "X1", 1, 0, 0, Eigen::Vector3d(0.01, 0.01, 0.004)));
  RngStream rng(46);
  // X1 was declared up front, so the first declared variable (the separator
  // block) is X1 even though the prior seeds X0.
  TrainingBatch batch = simulate_training_samples(g, 2000, rng, 1);
  REQUIRE(batch.separator.size() == 1);
  CHECK(batch.separator[0].name == "X1");

  TrainConfig cfg;
  CliqueSampler cs = train_clique(batch, cfg);
  REQUIRE(!cs.separator_density.empty());

  RngStream srng(47);
  Eigen::MatrixXd sep = cs.separator_density.sample(2000, srng);
  Eigen::VectorXd mean = testutil::col_mean(sep);
  Eigen::VectorXd sd = testutil::col_std(sep);
  CHECK(std::abs(mean[0] - 1.0) < 0.03);
  CHECK(std::abs(mean[1]) < 0.03);
  CHECK(std::abs(mean[2]) < 0.02);
  CHECK(testutil::rel_err(sd[0], std::sqrt(0.05 * 0.05 + 0.01)) < 0.15);
  CHECK(testutil::rel_err(sd[2], std::sqrt(0.02 * 0.02 + 0.004)) < 0.15);

  // Conditioning the frontal on the separator's mean recentres X0 at zero.
  Eigen::VectorXd s(3);
  s << 1.0, 0.0, 0.0;
  Eigen::MatrixXd rows = s.transpose().replicate(1000, 1);
  RngStream frng(48);
  Eigen::MatrixXd fr = sample_frontals(cs, rows, frng);
  REQUIRE(fr.cols() == 3);
  Eigen::VectorXd fmean = testutil::col_mean(fr);
  CHECK(std::abs(fmean[0]) < 0.03);
  CHECK(std::abs(fmean[1]) < 0.03);
  CHECK(std::abs(fmean[2]) < 0.02);

  RngStream orng(49);
  Eigen::VectorXd one = sample_frontals(cs, s, orng);
  CHECK(one.size() == 3);
  CHECK(separator_log_density(cs, s) ==
        doctest::Approx(cs.separator_density.log_density(s)));

  Eigen::VectorXd wrong(2);
  wrong << 0, 0;
  CHECK_THROWS_AS(sample_frontals(cs, wrong, orng), LayoutMismatch);
  Eigen::MatrixXd wrongm(5, 2);
  wrongm.setZero();
  CHECK_THROWS_AS(sample_frontals(cs, wrongm, orng), LayoutMismatch);
}

TEST_CASE("a linear conditional is recovered from raw samples") {
  Eigen::Matrix2d A;
  A << 0.7, 0.2, -0.3, 0.5;
  Eigen::Vector2d b(0.4, -0.2);
  RngStream rng(50);
  TrainingBatch batch;
  batch.separator = {point("S")};
  batch.frontals = {point("F")};
  batch.samples.resize(3000, 4);
  for (int i = 0; i < 3000; ++i) {
    Eigen::Vector2d s(rng.normal(), rng.normal());
    Eigen::Vector2d f =
        A * s + b + 0.1 * Eigen::Vector2d(rng.normal(), rng.normal());
    batch.samples.row(i) << s[0], s[1], f[0], f[1];
  }
  TrainConfig cfg;
  CliqueSampler cs = train_clique(batch, cfg);

  Eigen::Vector2d star(0.8, -0.5);
  Eigen::MatrixXd rows = star.transpose().replicate(1500, 1);
  RngStream srng(51);
  Eigen::MatrixXd fr = sample_frontals(cs, rows, srng);
  Eigen::Vector2d want = A * star + b;
  Eigen::VectorXd got = testutil::col_mean(fr);
  CHECK(std::abs(got[0] - want[0]) < 0.05);
  CHECK(std::abs(got[1] - want[1]) < 0.05);

  RngStream mrng(52);
  Eigen::MatrixXd sep = cs.separator_density.sample(2000, mrng);
  Eigen::VectorXd sm = testutil::col_mean(sep);
  Eigen::VectorXd ss = testutil::col_std(sep);
  CHECK(std::abs(sm[0]) < 0.08);
  CHECK(std::abs(sm[1]) < 0.08);
  CHECK(testutil::rel_err(ss[0], 1.0) < 0.1);
  CHECK(testutil::rel_err(ss[1], 1.0) < 0.1);
}

TEST_CASE("batches dump as labeled delimited text") {
  TrainingBatch batch;
  ObservationBlock o;
  o.label = "range(X1,L1)";
  o.dim = 1;
  o.measured = Eigen::VectorXd::Constant(1, 1.5);
  o.angular = {false};
  batch.observations.push_back(o);
  batch.separator = {pose("X1")};
  batch.frontals = {point("L1")};
  batch.samples.resize(2, 6);
  batch.samples << 1.5, 1, 0, 0.25, 3, 0, 1.25, 1.1, -0.1, 0.5, 2.9, 0.2;

  std::ostringstream os;
  dump_training_batch(batch, os);
  std::istringstream is(os.str());
  std::string header, row1, row2, extra;
  REQUIRE(std::getline(is, header));
  REQUIRE(std::getline(is, row1));
  REQUIRE(std::getline(is, row2));
  CHECK(!std::getline(is, extra));
  CHECK(header ==
        "range(X1,L1).r\tX1.x\tX1.y\tX1.theta\tL1.x\tL1.y");
  CHECK(row1.substr(0, 4) == "1.5\t");
  CHECK(row2.find("0.5") != std::string::npos);
}

TEST_CASE("simulation is reproducible per stream") {
  FactorGraph g = loop_graph();
  RngStream a(53), b(53), c(54);
  TrainingBatch ba = simulate_training_samples(g, 400, a);
  TrainingBatch bb = simulate_training_samples(g, 400, b);
  TrainingBatch bc = simulate_training_samples(g, 400, c);
  CHECK((ba.samples - bb.samples).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ba.samples - bc.samples).cwiseAbs().maxCoeff() > 0.0);
}

}  // TEST_SUITE
