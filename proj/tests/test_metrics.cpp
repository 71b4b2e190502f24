#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <flowsam/errors.hpp>
#include <flowsam/geometry.hpp>
#include <flowsam/metrics.hpp>

#include "test_util.hpp"

using namespace flowsam;

namespace {

VariableId pose(const std::string& n) { return {n, VarKind::Pose2}; }
VariableId point(const std::string& n) { return {n, VarKind::Point2}; }

Factor point_prior(const std::string& n, double x, double y, double s) {
  Eigen::VectorXd mean(2), sig(2);
  mean << x, y;
  sig << s, s;
  return PriorFactor{point(n), mean, sig};
}

Factor pose_prior(const std::string& n, double x, double y, double t,
                  double sx, double sy, double st) {
  Eigen::VectorXd mean(3), sig(3);
  mean << x, y, t;
  sig << sx, sy, st;
  return PriorFactor{pose(n), mean, sig};
}

SampleSet constant_set(const std::vector<VariableId>& vars,
                       const Eigen::VectorXd& row, int n) {
  SampleSet out;
  out.variables = vars;
  out.samples = row.transpose().replicate(n, 1);
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("two priors fuse like a conjugate update") {
  FactorGraph g;
  g.add(point_prior("L0", 0, 0, 1.0));
  g.add(point_prior("L0", 2, 2, 1.0));
  RngStream rng(80);
  SampleSet ref = reference_posterior(g, 4000, rng);
  REQUIRE(ref.samples.cols() == 2);
  Eigen::VectorXd mean = testutil::col_mean(ref.samples);
  Eigen::VectorXd sd = testutil::col_std(ref.samples);
  for (int d = 0; d < 2; ++d) {
    CHECK(std::abs(mean[d] - 1.0) < 0.05);
    CHECK(std::abs(sd[d] * sd[d] - 0.5) < 0.05);
  }
}

TEST_CASE("a prior-only reference keeps the prior moments") {
  FactorGraph g;
  g.add(pose_prior("X0", 1, 2, 0.5, 0.1, 0.2, 0.05));
  RngStream rng(81);
  SampleSet ref = reference_posterior(g, 5000, rng);
  Eigen::VectorXd mean = testutil::col_mean(ref.samples);
  Eigen::VectorXd sd = testutil::col_std(ref.samples);
  CHECK(std::abs(mean[0] - 1.0) < 0.02);
  CHECK(std::abs(mean[1] - 2.0) < 0.02);
  CHECK(std::abs(mean[2] - 0.5) < 0.01);
  CHECK(testutil::rel_err(sd[0], 0.1) < 0.05);
  CHECK(testutil::rel_err(sd[1], 0.2) < 0.05);
  CHECK(testutil::rel_err(sd[2], 0.05) < 0.05);

  RngStream a(82), b(82);
  SampleSet r1 = reference_posterior(g, 200, a);
  SampleSet r2 = reference_posterior(g, 200, b);
  CHECK((r1.samples - r2.samples).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a single range spreads the landmark over a ring") {
  FactorGraph g;
  g.add(pose_prior("X0", 0, 0, 0, 0.01, 0.01, 0.01));
  g.add(RangeFactor{pose("X0"), point("L1"), 5.0, 0.1});
  RngStream rng(83);
  SampleSet ref = reference_posterior(g, 4000, rng);
  Eigen::MatrixXd l = ref.columns("L1");
  int on_ring = 0;
  int quadrant[4] = {0, 0, 0, 0};
  for (int i = 0; i < l.rows(); ++i) {
    double r = std::hypot(l(i, 0), l(i, 1));
    if (std::abs(r - 5.0) < 0.35) ++on_ring;
    quadrant[(l(i, 0) >= 0 ? 0 : 1) + (l(i, 1) >= 0 ? 0 : 2)] += 1;
  }
  CHECK(on_ring > 0.98 * l.rows());
  for (int q = 0; q < 4; ++q) CHECK(quadrant[q] > 0.15 * l.rows());
}

TEST_CASE("an odometry chain matches direct simulation") {
  FactorGraph g;
  g.add(pose_prior("X0", 0, 0, 0, 0.1, 0.1, 0.05));
  g.add(OdometryFactor{pose("X0"), pose("X1"), Pose2(1, 0, 0),
                       Eigen::Vector3d(0.01, 0.01, 0.004)});
  RngStream rng(84);
  SampleSet ref = reference_posterior(g, 4000, rng);

  RngStream sim(85);
  Eigen::MatrixXd truth(20000, 6);
  for (int i = 0; i < 20000; ++i) {
    Pose2 x0(sim.normal(0, 0.1), sim.normal(0, 0.1), sim.normal(0, 0.05));
    Eigen::Vector3d xi(sim.normal(0, 0.1), sim.normal(0, 0.1),
                       sim.normal(0, std::sqrt(0.004)));
    Pose2 x1 = x0.compose(Pose2(1, 0, 0)).compose(se2_exp(xi));
    truth.row(i) << x0.x, x0.y, x0.theta, x1.x, x1.y, x1.theta;
  }
  Eigen::VectorXd got_mean = testutil::col_mean(ref.samples);
  Eigen::VectorXd want_mean = testutil::col_mean(truth);
  Eigen::VectorXd got_sd = testutil::col_std(ref.samples);
  Eigen::VectorXd want_sd = testutil::col_std(truth);
  for (int c = 0; c < 6; ++c) {
    CHECK(std::abs(got_mean[c] - want_mean[c]) < 0.03);
    CHECK(testutil::rel_err(got_sd[c], want_sd[c]) < 0.1);
  }
}

TEST_CASE("the reference sampler rejects what it cannot handle") {
  RngStream rng(86);
  {
    FactorGraph g;  // 3 poses + 2 landmarks = 13 dimensions
    g.add(pose_prior("X0", 0, 0, 0, 1, 1, 1));
    g.add(pose_prior("X1", 0, 0, 0, 1, 1, 1));
    g.add(pose_prior("X2", 0, 0, 0, 1, 1, 1));
    g.add(point_prior("L0", 0, 0, 1));
    g.add(point_prior("L1", 0, 0, 1));
    CHECK_THROWS_AS(reference_posterior(g, 100, rng), DimensionTooLarge);
  }
  {
    FactorGraph g;  // irreconcilable priors starve the weights
    g.add(point_prior("L0", 0, 0, 0.001));
    g.add(point_prior("L0", 10, 10, 0.001));
    CHECK_THROWS_AS(reference_posterior(g, 200, rng), DegenerateWeights);
  }
  {
    FactorGraph g;
    g.add(pose_prior("X0", 0, 0, 0, 1, 1, 1));
    CHECK_THROWS_AS(reference_posterior(g, 0, rng), DegenerateSamples);
    g.declare(point("L9"));
    CHECK_THROWS_AS(reference_posterior(g, 100, rng), UnseedableClique);
  }
  {
    FactorGraph g;
    g.add(pose_prior("X0", 0, 0, 0, 1, 1, 1));
    g.add(OdometryFactor{pose("X1"), pose("X2"), Pose2(1, 0, 0),
                         Eigen::Vector3d(0.01, 0.01, 0.01)});
    CHECK_THROWS_AS(reference_posterior(g, 100, rng), StalledQueue);
  }
  {
    FactorGraph g;
    CHECK_THROWS_AS(reference_posterior(g, 100, rng), DegenerateSamples);
  }
}

TEST_CASE("mmd separates what it should and nothing else") {
  RngStream rng(87);
  SampleSet a, b;
  a.variables = b.variables = {point("P")};
  a.samples.resize(500, 2);
  b.samples.resize(500, 2);
  for (int i = 0; i < 500; ++i) {
    a.samples.row(i) << rng.normal(), rng.normal();
    b.samples.row(i) << rng.normal(), rng.normal();
  }
  CHECK(mmd(a, a) <= 1e-12);
  CHECK(mmd(a, b) == doctest::Approx(mmd(b, a)));
  CHECK(mmd(a, b) < 0.1);

  // Distant point masses max out the kernel statistic.
  SampleSet z = constant_set({point("P")}, Eigen::Vector2d(0, 0), 100);
  SampleSet far = constant_set({point("P")}, Eigen::Vector2d(10, 0), 100);
  CHECK(mmd(z, far, 0.5) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));

  SampleSet renamed = b;
  renamed.variables = {point("Q")};
  CHECK_THROWS_AS(mmd(a, renamed), LayoutMismatch);
  SampleSet wider = b;
  wider.variables = {pose("P")};
  wider.samples.conservativeResize(500, 3);
  CHECK_THROWS_AS(mmd(a, wider), LayoutMismatch);
}

TEST_CASE("rmse averages positional mean error over variables") {
  Assignment truth;
  truth["A"] = Eigen::Vector2d(0, 0);
  truth["B"] = Eigen::Vector2d(0, 1);
  truth["X"] = Eigen::Vector3d(0, 0, 0);

  SampleSet one = constant_set({point("A")}, Eigen::Vector2d(3, 4), 50);
  CHECK(rmse(one, truth) == doctest::Approx(5.0));

  SampleSet two;
  two.variables = {point("A"), point("B")};
  Eigen::VectorXd row(4);
  row << 1, 0, 0, 0;  // A off by 1, B off by 1
  two = constant_set(two.variables, row, 50);
  CHECK(rmse(two, truth) == doctest::Approx(1.0));

  // Heading error does not count; only the position does.
  SampleSet posed = constant_set({pose("X")}, Eigen::Vector3d(0, 0, 2.5), 10);
  CHECK(rmse(posed, truth) == doctest::Approx(0.0));

  // Projection reorders columns without changing the result.
  CHECK(rmse(two.project({"B", "A"}), truth) == doctest::Approx(1.0));

  Assignment missing;
  missing["A"] = Eigen::Vector2d(0, 0);
  CHECK_THROWS_AS(rmse(two, missing), MissingVariable);
  SampleSet empty;
  CHECK_THROWS_AS(rmse(empty, truth), MissingVariable);
}

TEST_CASE("association beliefs follow the likelihood ratio") {
  std::vector<VariableId> vars = {pose("X0"), point("L1"), point("L2")};

  SUBCASE("symmetric geometry splits the belief") {
    Eigen::VectorXd row(7);
    row << 0, 0, 0, 2, 0, -2, 0;
    SampleSet s = constant_set(vars, row, 200);
    FactorGraph g;
    g.add(AmbiguousRangeFactor{pose("X0"), {point("L1"), point("L2")}, 2.0,
                               0.1});
    auto belief = association_belief(s, g);
    REQUIRE(belief.size() == 2);
    CHECK(belief.at({{"L1"}}) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(belief.at({{"L2"}}) == doctest::Approx(0.5).epsilon(1e-9));
    auto marg = association_marginals(s, g);
    REQUIRE(marg.size() == 1);
    CHECK(marg[0].at("L1") == doctest::Approx(0.5).epsilon(1e-9));
  }

  SUBCASE("a two-sigma gap produces the logistic split") {
    Eigen::VectorXd row(7);
    row << 0, 0, 0, 2.0, 0, 2.2, 0;
    SampleSet s = constant_set(vars, row, 1);
    FactorGraph g;
    g.add(AmbiguousRangeFactor{pose("X0"), {point("L1"), point("L2")}, 2.0,
                               0.1});
    auto belief = association_belief(s, g);
    double want = 1.0 / (1.0 + std::exp(-2.0));  // resid 0 vs resid 2 sigma
    CHECK(belief.at({{"L1"}}) == doctest::Approx(want).epsilon(1e-9));
    CHECK(belief.at({{"L1"}}) == doctest::Approx(0.880797077978).epsilon(1e-9));
  }

  SUBCASE("joint hypotheses multiply and stay normalized") {
    Eigen::VectorXd row(7);
    row << 0, 0, 0, 2, 0, -2.1, 0;
    SampleSet s = constant_set(vars, row, 64);
    FactorGraph g;
    g.add(AmbiguousRangeFactor{pose("X0"), {point("L1"), point("L2")}, 2.0,
                               0.1});
    g.add(AmbiguousRangeFactor{pose("X0"), {point("L1"), point("L2")}, 2.1,
                               0.1});
    auto belief = association_belief(s, g);
    REQUIRE(belief.size() == 4);
    double total = 0.0;
    for (const auto& [hyp, p] : belief) {
      CHECK(hyp.chosen.size() == 2);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    auto marg = association_marginals(s, g);
    REQUIRE(marg.size() == 2);
    double m0 = belief.at({{"L1", "L1"}}) + belief.at({{"L1", "L2"}});
    CHECK(marg[0].at("L1") == doctest::Approx(m0).epsilon(1e-9));
    AssociationHypothesis h;
    h.chosen = {"L1", "L2"};
    CHECK(h.label() == "L1,L2");
  }

  SUBCASE("errors are typed") {
    Eigen::VectorXd row(7);
    row << 0, 0, 0, 2, 0, -2, 0;
    SampleSet s = constant_set(vars, row, 4);
    FactorGraph plain;
    plain.add(pose_prior("X0", 0, 0, 0, 1, 1, 1));
    CHECK_THROWS_AS(association_belief(s, plain), NoAmbiguousFactors);

    FactorGraph many;
    for (int k = 0; k < 17; ++k)
      many.add(AmbiguousRangeFactor{pose("X0"), {point("L1"), point("L2")},
                                    2.0, 0.1});
    CHECK_THROWS_AS(association_belief(s, many), Unsupported);
  }
}

TEST_CASE("metrics records append as key-value blocks") {
  StepMetrics m;
  m.step = 3;
  m.runtime_seconds = 0.123456789;
  m.rmse = 1.5;
  m.mmd = 0.25;
  m.beliefs = {{"L1,L2", 0.75}, {"L2,L2", 0.25}};
  std::ostringstream os;
  append_metrics(os, m);
  CHECK(os.str() ==
        "step 3\nruntime 0.123457\nrmse 1.5\nmmd 0.25\n"
        "belief L1,L2 0.75\nbelief L2,L2 0.25\n\n");

  StepMetrics bare;
  bare.step = 1;
  bare.runtime_seconds = 2.0;
  std::ostringstream os2;
  append_metrics(os2, bare);
  CHECK(os2.str() == "step 1\nruntime 2\n\n");
}

TEST_CASE("sample sets are indexed by variable name") {
  SampleSet s;
  s.variables = {pose("X0"), point("L1")};
  s.samples.resize(3, 5);
  s.samples << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15;
  CHECK(s.col_offset("X0") == 0);
  CHECK(s.col_offset("L1") == 3);
  CHECK(s.columns("L1")(1, 0) == 9.0);
  CHECK_THROWS_AS(s.col_offset("Z"), MissingVariable);
  CHECK_THROWS_AS(s.columns("Z"), MissingVariable);

  SampleSet proj = s.project({"L1"});
  REQUIRE(proj.variables.size() == 1);
  CHECK(proj.samples.cols() == 2);
  CHECK(proj.samples(0, 0) == 4.0);
  CHECK_THROWS_AS(s.project({"Q"}), MissingVariable);

  Assignment a1, a2;
  a1["X0"] = Eigen::Vector3d(1, 2, 3);
  a1["L1"] = Eigen::Vector2d(4, 5);
  a2["X0"] = Eigen::Vector3d(6, 7, 8);
  a2["L1"] = Eigen::Vector2d(9, 10);
  SampleSet from = sample_set_from(s.variables, {a1, a2});
  CHECK(from.samples.rows() == 2);
  CHECK(from.samples(1, 4) == 10.0);
}

}  // TEST_SUITE
