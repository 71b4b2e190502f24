// Command-line front end: run incremental sessions over dataset files,
// generate benchmark datasets, and convert range/odometry logs.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowsam/dataset.hpp"
#include "flowsam/errors.hpp"
#include "flowsam/metrics.hpp"
#include "flowsam/rng.hpp"
#include "flowsam/session.hpp"

namespace {

struct RunConfig {
  std::string input;
  std::string out;
  int train_samples = 2000;
  int samples = 2000;
  int knots = 9;
  int hidden = 8;
  std::uint64_t seed = 0;
  bool reference = false;
  bool metrics = false;
  int threads = 1;
};

constexpr int kReferenceDimCap = 12;
constexpr std::size_t kBeliefLineCap = 64;

void write_samples_csv(const std::string& path,
                       const std::vector<std::string>& labels,
                       const Eigen::MatrixXd& samples) {
  std::ofstream os(path);
  if (!os)
    throw flowsam::ParseError("cannot open '" + path + "' for writing");
  os << std::setprecision(17);
  for (std::size_t i = 0; i < labels.size(); ++i)
    os << (i ? "," : "") << labels[i];
  os << '\n';
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    for (Eigen::Index c = 0; c < samples.cols(); ++c)
      os << (c ? "," : "") << samples(r, c);
    os << '\n';
  }
}

bool truth_covers(const flowsam::Assignment& truth,
                  const std::vector<flowsam::VariableId>& variables) {
  if (truth.empty()) return false;
  for (const auto& v : variables)
    if (!truth.count(v.name)) return false;
  return true;
}

bool has_ambiguous(const flowsam::FactorGraph& graph) {
  for (const auto& fp : graph.factors())
    if (std::holds_alternative<flowsam::AmbiguousRangeFactor>(*fp))
      return true;
  return false;
}

std::vector<std::pair<std::string, double>> belief_lines(
    const flowsam::SampleSet& draws, const flowsam::FactorGraph& graph) {
  auto belief = flowsam::association_belief(draws, graph);
  std::vector<std::pair<std::string, double>> lines;
  lines.reserve(belief.size());
  for (const auto& [hyp, p] : belief) lines.emplace_back(hyp.label(), p);
  if (lines.size() > kBeliefLineCap) {
    std::sort(lines.begin(), lines.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    lines.resize(kBeliefLineCap);
  }
  return lines;
}

int run_session(const RunConfig& cfg, int& step_context) {
  flowsam::Dataset dataset = flowsam::read_dataset_file(cfg.input);
  std::filesystem::create_directories(cfg.out);

  flowsam::TrainConfig train;
  train.sample_count = cfg.train_samples;
  train.knots = cfg.knots;
  train.hidden = cfg.hidden;
  flowsam::Session session(train, cfg.seed, cfg.threads);

  const std::string metrics_path = cfg.out + "/metrics.txt";
  if (cfg.metrics) {
    // Each run starts its metrics file fresh; records append per step.
    std::ofstream ms(metrics_path, std::ios::trunc);
    if (!ms)
      throw flowsam::ParseError("cannot open '" + metrics_path +
                                "' for writing");
  }
  const std::uint64_t base = flowsam::mix64(cfg.seed);
  double total_runtime = 0.0;
  int total_fits = 0;

  for (std::size_t k = 0; k < dataset.steps.size(); ++k) {
    step_context = static_cast<int>(k);
    auto t0 = std::chrono::steady_clock::now();
    flowsam::UpdateStats stats = session.update(dataset.steps[k]);
    flowsam::RngStream draw_rng(
        flowsam::hash_combine(flowsam::hash_combine(base, 0xd4a3), k));
    Eigen::MatrixXd draws = session.sample_posterior_matrix(cfg.samples,
                                                            draw_rng);
    auto t1 = std::chrono::steady_clock::now();
    double runtime = std::chrono::duration<double>(t1 - t0).count();
    total_runtime += runtime;
    total_fits += stats.retrained;

    write_samples_csv(cfg.out + "/step_" + std::to_string(k) + "_samples.csv",
                      session.column_labels(), draws);

    if (!cfg.metrics) continue;
    flowsam::StepMetrics m;
    m.step = static_cast<int>(k);
    m.runtime_seconds = total_runtime;
    flowsam::SampleSet sample_set{session.graph().variables(), draws};
    if (truth_covers(dataset.truth, sample_set.variables))
      m.rmse = flowsam::rmse(sample_set, dataset.truth);
    if (cfg.reference && session.graph().total_dim() <= kReferenceDimCap) {
      flowsam::RngStream ref_rng(
          flowsam::hash_combine(flowsam::hash_combine(base, 0x0e7f), k));
      flowsam::SampleSet reference =
          flowsam::reference_posterior(session.graph(), cfg.samples, ref_rng);
      m.mmd = flowsam::mmd(sample_set, reference);
    }
    if (has_ambiguous(session.graph()))
      m.beliefs = belief_lines(sample_set, session.graph());

    std::ofstream ms(metrics_path, std::ios::app);
    if (!ms)
      throw flowsam::ParseError("cannot open '" + metrics_path +
                                "' for writing");
    flowsam::append_metrics(ms, m);
  }

  step_context = -1;
  {
    std::ofstream ts(cfg.out + "/tree.txt");
    ts << session.tree().outline();
  }
  if (cfg.metrics) {
    std::ofstream ms(metrics_path, std::ios::app);
    ms << "summary\n"
       << "steps " << dataset.steps.size() << '\n'
       << "variables " << session.graph().variables().size() << '\n'
       << "cliques " << session.tree().size() << '\n'
       << "fits " << total_fits << '\n'
       << std::setprecision(6) << "runtime " << total_runtime << "\n\n";
  }
  return 0;
}

struct GenerateConfig {
  std::string kind = "manhattan";
  std::string out;
  flowsam::ManhattanConfig manhattan;
  std::string trajectory = "lawnmower";
  double range_sigma = -1.0;  // < 0 keeps the per-kind default
};

int run_generate(GenerateConfig& cfg) {
  flowsam::Dataset d;
  if (cfg.kind == "manhattan") {
    cfg.manhattan.trajectory = cfg.trajectory == "random"
                                   ? flowsam::TrajectoryKind::Random
                                   : flowsam::TrajectoryKind::Lawnmower;
    if (cfg.range_sigma > 0.0) cfg.manhattan.range_sigma = cfg.range_sigma;
    d = flowsam::generate_manhattan(cfg.manhattan);
  } else if (cfg.kind == "small-loop") {
    d = flowsam::generate_small_loop(
        cfg.manhattan.seed, cfg.manhattan.ambiguity > 0.0,
        cfg.range_sigma > 0.0 ? cfg.range_sigma : 0.2);
  } else {
    throw flowsam::Unsupported("unknown dataset kind '" + cfg.kind + "'");
  }
  flowsam::write_dataset_file(d, cfg.out);
  return 0;
}

struct ConvertConfig {
  std::string odometry;
  std::string ranges;
  std::string out;
  std::string calibration;
  double range_sigma = 1.0;
};

int run_convert(const ConvertConfig& cfg) {
  flowsam::RangeBiasModel bias;
  bool use_bias = false;
  if (!cfg.calibration.empty()) {
    std::ifstream cs(cfg.calibration);
    if (!cs)
      throw flowsam::ParseError("cannot open '" + cfg.calibration + "'");
    std::vector<std::pair<double, double>> pairs;
    double t, m;
    while (cs >> t >> m) pairs.emplace_back(t, m);
    bias = flowsam::calibrate_ranges(pairs);
    use_bias = true;
  }
  flowsam::Dataset d = flowsam::load_range_odometry(
      cfg.odometry, cfg.ranges, cfg.range_sigma, use_bias ? &bias : nullptr);
  flowsam::write_dataset_file(d, cfg.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental non-Gaussian factor-graph inference"};
  app.set_config("--config", "", "Config file with key=value lines");

  RunConfig run;
  app.add_option("--input", run.input, "Dataset file to solve");
  app.add_option("--out", run.out, "Output directory");
  app.add_option("--train-samples", run.train_samples,
                 "Training samples per clique")
      ->check(CLI::PositiveNumber);
  app.add_option("--samples", run.samples, "Posterior samples per step")
      ->check(CLI::PositiveNumber);
  app.add_option("--knots", run.knots, "Spline knots per dimension")
      ->check(CLI::PositiveNumber);
  app.add_option("--hidden", run.hidden, "Hidden units per conditioner")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", run.seed, "Master RNG seed");
  app.add_flag("--reference", run.reference,
               "Score samples against the importance-sampling reference");
  app.add_flag("--metrics", run.metrics, "Append per-step metrics records");
  app.add_option("--threads", run.threads, "Parallel clique-training threads")
      ->check(CLI::PositiveNumber);

  GenerateConfig gen;
  CLI::App* generate = app.add_subcommand("generate", "Write a dataset file");
  generate->add_option("--kind", gen.kind, "manhattan or small-loop");
  generate->add_option("--out", gen.out, "Output dataset file")->required();
  generate->add_option("--grid", gen.manhattan.grid_size,
                       "Grid vertices per side");
  generate->add_option("--step-length", gen.manhattan.step_length,
                       "Grid edge length (m)");
  generate->add_option("--trajectory", gen.trajectory,
                       "lawnmower or random");
  generate->add_option("--poses", gen.manhattan.pose_count, "Pose count");
  generate->add_option("--landmarks", gen.manhattan.landmark_count,
                       "Landmark count");
  generate->add_option("--range-sigma", gen.range_sigma,
                       "Range noise sigma (m)");
  generate->add_option("--ambiguity", gen.manhattan.ambiguity,
                       "Ambiguous-association probability");
  generate->add_option("--sensing-radius", gen.manhattan.sensing_radius,
                       "Range sensing radius (m), <= 0 for grid diagonal");
  generate->add_option("--seed", gen.manhattan.seed, "Generator seed");

  ConvertConfig conv;
  CLI::App* convert =
      app.add_subcommand("convert", "Convert range/odometry logs");
  convert->add_option("--odometry", conv.odometry, "Odometry rows file")
      ->required();
  convert->add_option("--ranges", conv.ranges, "Range rows file")->required();
  convert->add_option("--out", conv.out, "Output dataset file")->required();
  convert->add_option("--range-sigma", conv.range_sigma,
                      "Range noise sigma (m)");
  convert->add_option("--calibration", conv.calibration,
                      "File of 'true measured' pairs for bias correction");

  CLI11_PARSE(app, argc, argv);

  int step_context = -1;
  try {
    if (generate->parsed()) return run_generate(gen);
    if (convert->parsed()) return run_convert(conv);
    if (run.input.empty() || run.out.empty()) {
      std::cerr << "--input and --out are required; see --help" << std::endl;
      return 2;
    }
    return run_session(run, step_context);
  } catch (const flowsam::Error& e) {
    std::cerr << e.what();
    if (step_context >= 0) std::cerr << " (step " << step_context << ")";
    std::cerr << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
