#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <flowsam/errors.hpp>
#include <flowsam/geometry.hpp>
#include <flowsam/session.hpp>

#include "test_util.hpp"

using namespace flowsam;

namespace {

VariableId pose(const std::string& n) { return {n, VarKind::Pose2}; }
VariableId point(const std::string& n) { return {n, VarKind::Point2}; }

Factor pose_prior(const std::string& n, double x, double y, double t,
                  double sx, double sy, double st) {
  Eigen::VectorXd mean(3), sig(3);
  mean << x, y, t;
  sig << sx, sy, st;
  return PriorFactor{pose(n), mean, sig};
}

Factor odom(const std::string& a, const std::string& b, double dx, double dy,
            double dt, const Eigen::Vector3d& cov) {
  return OdometryFactor{pose(a), pose(b), Pose2(dx, dy, dt), cov};
}

Factor range(const std::string& p, const std::string& l, double m,
             double sigma) {
  return RangeFactor{pose(p), point(l), m, sigma};
}

TrainConfig cheap(int samples = 800, int iterations = 200) {
  TrainConfig cfg;
  cfg.sample_count = samples;
  cfg.max_iterations = iterations;
  return cfg;
}

const Eigen::Vector3d kOdomCov(0.01, 0.01, 0.004);

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("a prior-only session trains one clique") {
  // The density value at the mode biases upward on small training sets, so
  // this test trains on more draws than the rest of the suite.
  Session s(cheap(3000, 300), 3);
  UpdateStats stats =
      s.update({pose_prior("X0", 1.0, 2.0, 0.5, 0.1, 0.2, 0.05)});
  CHECK(stats.step == 1);
  CHECK(stats.cliques == 1);
  CHECK(stats.retrained == 1);
  CHECK(stats.reused == 0);
  CHECK(stats.fit_iterations > 0);
  CHECK(s.step() == 1);
  CHECK(s.fit_count() == 1);
  CHECK(s.column_labels() ==
        std::vector<std::string>{"X0.x", "X0.y", "X0.theta"});

  RngStream rng(60);
  Eigen::MatrixXd draws = s.sample_posterior_matrix(3000, rng);
  REQUIRE(draws.cols() == 3);
  Eigen::VectorXd mean = testutil::col_mean(draws);
  Eigen::VectorXd sd = testutil::col_std(draws);
  CHECK(std::abs(mean[0] - 1.0) < 0.03);
  CHECK(std::abs(mean[1] - 2.0) < 0.03);
  CHECK(std::abs(mean[2] - 0.5) < 0.015);
  CHECK(testutil::rel_err(sd[0], 0.1) < 0.1);
  CHECK(testutil::rel_err(sd[1], 0.2) < 0.1);
  CHECK(testutil::rel_err(sd[2], 0.05) < 0.1);

  RngStream arng(61);
  std::vector<Assignment> as = s.sample_posterior(5, arng);
  REQUIRE(as.size() == 5);
  CHECK(as[0].at("X0").size() == 3);

  Assignment at_mean;
  at_mean["X0"] = (Eigen::VectorXd(3) << 1.0, 2.0, 0.5).finished();
  double peak = -1.5 * std::log(2 * M_PI) - std::log(0.1 * 0.2 * 0.05);
  CHECK(std::abs(s.posterior_log_density(at_mean) - peak) < 0.2);

  Assignment far = at_mean;
  far["X0"] = (Eigen::VectorXd(3) << 2.0, 4.0, 0.5).finished();
  CHECK(s.posterior_log_density(far) < s.posterior_log_density(at_mean));
}

TEST_CASE("batch and incremental updates sample identically") {
  TrainConfig cfg = cheap(800, 250);
  std::vector<Factor> all{
      pose_prior("X0", 0, 0, 0, 0.05, 0.05, 0.02),
      odom("X0", "X1", 1, 0, 0, kOdomCov),
      range("X0", "L1", 2.0, 0.1),
      range("X1", "L1", 1.5, 0.1),
  };

  Session batch(cfg, 7);
  UpdateStats bs = batch.update(all);
  CHECK(bs.cliques == 1);  // everything merges into one clique
  CHECK(bs.retrained == 1);

  Session incr(cfg, 7);
  UpdateStats s1 = incr.update({all[0], all[1]});
  CHECK(s1.cliques == 1);
  UpdateStats s2 = incr.update({all[2], all[3]});
  CHECK(s2.step == 2);
  CHECK(s2.cliques == 1);
  CHECK(s2.retrained == 1);
  CHECK(incr.fit_count() == 2);

  CHECK(batch.tree().outline() == incr.tree().outline());
  CHECK(batch.tree().clique(0).signature == incr.tree().clique(0).signature);

  // Training keys off the clique content, so equal trees sample equal draws.
  RngStream ra(99), rb(99);
  Eigen::MatrixXd da = batch.sample_posterior_matrix(400, ra);
  Eigen::MatrixXd db = incr.sample_posterior_matrix(400, rb);
  REQUIRE(da.rows() == db.rows());
  CHECK((da - db).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a pose chain posterior matches direct simulation") {
  TrainConfig cfg = cheap(1200, 400);
  Session s(cfg, 11);
  s.update({pose_prior("X0", 0, 0, 0, 0.05, 0.05, 0.02),
            odom("X0", "X1", 1, 0, 0, kOdomCov),
            odom("X1", "X2", 1, 0, 0, kOdomCov)});
  CHECK(s.tree().size() == 2);

  RngStream rng(62);
  Eigen::MatrixXd draws = s.sample_posterior_matrix(2500, rng);
  REQUIRE(draws.cols() == 9);

  // Direct forward simulation of the same generative chain.
  RngStream sim(63);
  Eigen::MatrixXd truth(20000, 9);
  for (int i = 0; i < 20000; ++i) {
    Pose2 x0(sim.normal(0, 0.05), sim.normal(0, 0.05), sim.normal(0, 0.02));
    auto step = [&](const Pose2& from) {
      Eigen::Vector3d xi(sim.normal(0, 0.1), sim.normal(0, 0.1),
                         sim.normal(0, std::sqrt(0.004)));
      return from.compose(Pose2(1, 0, 0)).compose(se2_exp(xi));
    };
    Pose2 x1 = step(x0), x2 = step(x1);
    truth.row(i) << x0.x, x0.y, x0.theta, x1.x, x1.y, x1.theta, x2.x, x2.y,
        x2.theta;
  }
  Eigen::VectorXd got_mean = testutil::col_mean(draws);
  Eigen::VectorXd want_mean = testutil::col_mean(truth);
  Eigen::VectorXd got_sd = testutil::col_std(draws);
  Eigen::VectorXd want_sd = testutil::col_std(truth);
  for (int c = 0; c < 9; ++c) {
    CHECK(std::abs(got_mean[c] - want_mean[c]) < 0.05);
    CHECK(testutil::rel_err(got_sd[c], want_sd[c]) < 0.2);
  }

  // Ancestral log density is finite wherever the sampler itself lands.
  RngStream arng(64);
  for (const Assignment& a : s.sample_posterior(5, arng)) {
    double lp = s.posterior_log_density(a);
    CHECK(std::isfinite(lp));
    CHECK(lp > -50.0);
  }
}

TEST_CASE("downstream cliques ignore upstream-only changes") {
  TrainConfig cfg = cheap(600, 150);
  std::vector<Factor> base{pose_prior("X0", 0, 0, 0, 0.05, 0.05, 0.02),
                           odom("X0", "X1", 1, 0, 0, kOdomCov)};
  Session a(cfg, 5), b(cfg, 5);
  a.update({base[0], base[1], odom("X1", "X2", 1, 0, 0, kOdomCov)});
  b.update({base[0], base[1], odom("X1", "X2", 0, 1, 1.2, kOdomCov)});

  int la = a.tree().clique_of("X0");
  int lb = b.tree().clique_of("X0");
  CHECK(a.tree().clique(la).signature == b.tree().clique(lb).signature);

  // Equal subtree, equal seed: the trained leaf is bit-identical even though
  // the factor above the separator changed.
  const CliqueSampler& ca = *a.tree().clique(la).trained;
  const CliqueSampler& cb = *b.tree().clique(lb).trained;
  RngStream pr(65);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd v(6);
    for (int d = 0; d < 6; ++d) v[d] = pr.uniform(-2, 2);
    CHECK(ca.conditional.log_density(v) == cb.conditional.log_density(v));
  }
  CHECK(a.tree().clique(a.tree().clique_of("X2")).signature !=
        b.tree().clique(b.tree().clique_of("X2")).signature);
}

TEST_CASE("only cliques on the changed path retrain") {
  TrainConfig cfg = cheap(600, 150);
  Session s(cfg, 13);
  UpdateStats s1 = s.update({pose_prior("X0", 0, 0, 0, 0.05, 0.05, 0.02),
                             odom("X0", "X1", 1, 0, 0, kOdomCov),
                             odom("X1", "X2", 1, 0, 0, kOdomCov),
                             range("X0", "L1", 2.0, 0.1),
                             range("X1", "L1", 1.5, 0.1)});
  CHECK(s1.cliques == 2);
  CHECK(s1.retrained == 2);
  CHECK(s1.reused == 0);

  UpdateStats s2 = s.update({range("X2", "L2", 1.8, 0.1)});
  CHECK(s2.cliques == 3);
  CHECK(s2.retrained == 2);  // new root and new mid clique
  CHECK(s2.reused == 1);     // the [X0 : ...] leaf is untouched
  CHECK(s.fit_count() == 4);
  CHECK(s.graph().factors().size() == 6);

  RngStream rng(66);
  Eigen::MatrixXd draws = s.sample_posterior_matrix(200, rng);
  CHECK(draws.cols() == s.graph().total_dim());
  CHECK(draws.allFinite());
}

TEST_CASE("threaded training matches single-threaded bit for bit") {
  TrainConfig cfg = cheap(500, 120);
  std::vector<Factor> factors{
      pose_prior("X0", 0, 0, 0, 0.1, 0.1, 0.05),
      odom("X0", "X1", 1, 0, 0, kOdomCov),
      pose_prior("Y0", 5, 5, 1, 0.1, 0.1, 0.05),
      odom("Y0", "Y1", -1, 0, 0, kOdomCov),
  };
  Session serial(cfg, 21, 1), pooled(cfg, 21, 3);
  serial.update(factors);
  pooled.update(factors);
  CHECK(serial.tree().roots().size() == 2);
  CHECK(serial.tree().outline() == pooled.tree().outline());
  RngStream ra(67), rb(67);
  Eigen::MatrixXd da = serial.sample_posterior_matrix(300, ra);
  Eigen::MatrixXd db = pooled.sample_posterior_matrix(300, rb);
  CHECK((da - db).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("failed updates leave the session untouched") {
  Session s(cheap(400, 100), 17);
  s.update({pose_prior("X0", 0, 0, 0, 0.1, 0.1, 0.05)});
  REQUIRE(s.step() == 1);

  // No factor seeds the new chain, so training must fail and roll back.
  CHECK_THROWS_AS(s.update({odom("X5", "X6", 1, 0, 0, kOdomCov)}),
                  UnseedableClique);
  CHECK(s.step() == 1);
  CHECK(s.graph().factors().size() == 1);
  CHECK(s.tree().size() == 1);
  CHECK(!s.graph().has("X5"));

  // Invalid factors are rejected before anything is eliminated.
  CHECK_THROWS_AS(
      s.update({PriorFactor{pose("X9"), Eigen::VectorXd::Zero(2),
                            Eigen::VectorXd::Ones(2)}}),
      Unsupported);
  CHECK(s.step() == 1);

  RngStream rng(68);
  CHECK(s.sample_posterior_matrix(50, rng).allFinite());
}

TEST_CASE("headings near the wrap stay in range") {
  Session s(cheap(1000, 300), 19);
  s.update({pose_prior("X0", 0, 0, 3.1, 0.05, 0.05, 0.15),
            odom("X0", "X1", 0.5, 0, 0.2, kOdomCov)});
  RngStream rng(69);
  Eigen::MatrixXd draws = s.sample_posterior_matrix(2000, rng);
  REQUIRE(draws.cols() == 6);
  CHECK(draws.allFinite());
  for (int c : {2, 5}) {
    CHECK(draws.col(c).minCoeff() >= -M_PI);
    CHECK(draws.col(c).maxCoeff() < M_PI);
  }
  // Some mass sits on each side of the cut once the noise pushes past pi.
  int above = 0, below = 0;
  for (int i = 0; i < draws.rows(); ++i)
    (draws(i, 5) > 0 ? above : below) += 1;
  CHECK(above > 100);
  CHECK(below > 100);

  RngStream arng(70);
  for (const Assignment& a : s.sample_posterior(3, arng))
    CHECK(std::isfinite(s.posterior_log_density(a)));
}

TEST_CASE("sampling an untrained session fails cleanly") {
  Session s(cheap(), 1);
  RngStream rng(71);
  // No cliques at all: an empty matrix is fine, assignments are empty.
  Eigen::MatrixXd draws = s.sample_posterior_matrix(10, rng);
  CHECK(draws.cols() == 0);
  CHECK(s.graph().variables().empty());
}

}  // TEST_SUITE
