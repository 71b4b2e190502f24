#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "flowsam/factor_graph.hpp"

namespace flowsam {

// Ground truth plus the per-step factor batches fed to a session.
struct Dataset {
  Assignment truth;
  std::vector<std::vector<FactorPtr>> steps;
  std::vector<VariableId> variables;  // declaration order
};

enum class TrajectoryKind { Lawnmower, Random };

struct ManhattanConfig {
  int grid_size = 4;          // grid vertices per side
  double step_length = 10.0;  // meters between adjacent vertices
  TrajectoryKind trajectory = TrajectoryKind::Lawnmower;
  int pose_count = 16;
  int landmark_count = 3;
  double range_sigma = 2.0;
  Eigen::Vector3d odom_cov{0.04, 0.0016, 0.0004};
  double ambiguity = 0.40;      // chance an eligible range loses its id
  double sensing_radius = 0.0;  // <= 0 selects the grid diagonal
  std::uint64_t seed = 0;
};

// Grid-world range SLAM scenario: noisy odometry along the trajectory and
// the nearest in-radius landmark ranged at every pose. A range to an
// already-sighted landmark turns ambiguous with the configured probability,
// with all landmarks sighted so far as candidates.
Dataset generate_manhattan(const ManhattanConfig& cfg);

// Six-pose loop with two landmarks (five odometry and eight range
// measurements): the first two ranges leave L1 bimodal, the third resolves
// it. With ambiguity on, the three ranges of the last two steps carry
// candidates {L1, L2}; their true targets are L2, L2, L1 in factor order.
Dataset generate_small_loop(std::uint64_t seed = 0, bool with_ambiguity = true,
                            double range_sigma = 0.2);

Dataset read_dataset(std::istream& is);
Dataset read_dataset_file(const std::string& path);
void write_dataset(const Dataset& d, std::ostream& os);
void write_dataset_file(const Dataset& d, const std::string& path);

// Affine range-bias fit: measured - true regressed on true distance.
struct RangeBiasModel {
  double slope = 0.0;
  double intercept = 0.0;     // meters
  double residual_sigma = 1;  // meters

  // Inverts measured = (1 + slope) * true + intercept.
  double correct(double measured) const {
    return (measured - intercept) / (1.0 + slope);
  }
};

// pairs are (true distance, measured distance).
RangeBiasModel calibrate_ranges(
    const std::vector<std::pair<double, double>>& pairs);

// Timestamped dead-reckoning + range log, grouped into one step per key
// pose. Odometry rows: <time> <dx> <dtheta>. Range rows: <time>
// <landmark_id|-> <range>; '-' means an anonymous range over all landmarks
// seen in the file. An origin prior anchors the first pose.
Dataset load_range_odometry(const std::string& odometry_path,
                            const std::string& range_path,
                            double range_sigma = 1.0,
                            const RangeBiasModel* bias = nullptr);

}  // namespace flowsam
