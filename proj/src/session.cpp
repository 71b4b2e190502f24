#include "flowsam/session.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "flowsam/errors.hpp"

namespace flowsam {

Session::Session(TrainConfig cfg, std::uint64_t seed, int threads)
    : cfg_(cfg), seed_(seed), threads_(std::max(1, threads)) {}

UpdateStats Session::update(std::vector<Factor> new_factors) {
  std::vector<FactorPtr> ptrs;
  ptrs.reserve(new_factors.size());
  for (auto& f : new_factors) ptrs.push_back(make_factor(std::move(f)));
  return update(ptrs);
}

void Session::train_clique_at(BayesTree& tree, int ci) const {
  Clique& c = tree.clique(ci);
  FactorGraph local = clique_factor_graph(tree, ci);

  std::uint64_t salt = c.signature;
  for (const auto& v : c.frontals) salt = hash_combine(salt, v.name);
  RngStream stream(hash_combine(mix64(seed_), salt));

  TrainConfig cfg = cfg_;
  cfg.seed = hash_combine(mix64(seed_), hash_combine(salt, 0xF17));
  TrainingBatch batch = simulate_training_samples(
      local, cfg.sample_count, stream, static_cast<int>(c.separator.size()));
  c.trained = train_clique(batch, cfg);
  if (c.parent >= 0)
    c.separator_density = make_factor(SeparatorDensityFactor{
        c.separator, c.trained->separator_density});
}

UpdateStats Session::update(const std::vector<FactorPtr>& new_factors) {
  FactorGraph graph = graph_;
  for (const auto& f : new_factors) graph.add(f);
  std::vector<std::string> ordering = graph.elimination_ordering();

  UpdateResult r = incremental_update(tree_, new_factors, ordering);

  // Leaf-to-root training over the changed cliques; same-depth cliques are
  // independent once their children are done and may train in parallel.
  std::vector<int> depth(r.tree.size(), 0);
  int max_depth = 0;
  for (int ci : r.tree.root_to_leaf_order()) {
    int p = r.tree.clique(ci).parent;
    depth[ci] = p < 0 ? 0 : depth[p] + 1;
    max_depth = std::max(max_depth, depth[ci]);
  }
  std::vector<std::vector<int>> levels(max_depth + 1);
  for (int ci : r.changed) levels[depth[ci]].push_back(ci);

  int fit_iterations = 0;
  for (int d = max_depth; d >= 0; --d) {
    auto& level = levels[d];
    if (level.empty()) continue;
    if (threads_ <= 1 || level.size() == 1) {
      for (int ci : level) train_clique_at(r.tree, ci);
    } else {
      std::atomic<size_t> next{0};
      std::exception_ptr error;
      std::mutex error_mutex;
      auto worker = [&]() {
        for (;;) {
          size_t i = next.fetch_add(1);
          if (i >= level.size()) return;
          try {
            train_clique_at(r.tree, level[i]);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      };
      std::vector<std::thread> pool;
      int nthreads = std::min<size_t>(threads_, level.size());
      pool.reserve(nthreads);
      for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
      if (error) std::rethrow_exception(error);
    }
    for (int ci : level)
      fit_iterations += r.tree.clique(ci).trained->diagnostics.iterations;
  }

  graph_ = std::move(graph);
  tree_ = std::move(r.tree);
  step_ += 1;
  fits_ += static_cast<int>(r.changed.size());

  UpdateStats stats;
  stats.step = step_;
  stats.cliques = tree_.size();
  stats.retrained = static_cast<int>(r.changed.size());
  stats.reused = stats.cliques - stats.retrained;
  stats.fit_iterations = fit_iterations;
  return stats;
}

std::vector<Assignment> Session::sample_posterior(int n, RngStream& rng) const {
  std::map<std::string, Eigen::MatrixXd> drawn;
  for (int ci : tree_.root_to_leaf_order()) {
    const Clique& c = tree_.clique(ci);
    if (!c.trained) throw UntrainedClique("clique has no trained sampler");

    int sep_dim = 0;
    for (const auto& v : c.separator) sep_dim += v.dim();
    Eigen::MatrixXd s(n, sep_dim);
    int at = 0;
    for (const auto& v : c.separator) {
      s.middleCols(at, v.dim()) = drawn.at(v.name);
      at += v.dim();
    }
    Eigen::MatrixXd f = sample_frontals(*c.trained, s, rng);
    at = 0;
    for (const auto& v : c.frontals) {
      Eigen::MatrixXd block = f.middleCols(at, v.dim());
      if (v.kind == VarKind::Pose2)
        for (int row = 0; row < n; ++row)
          block(row, 2) = wrap_angle(block(row, 2));
      drawn[v.name] = std::move(block);
      at += v.dim();
    }
  }

  std::vector<Assignment> out(n);
  for (const auto& v : graph_.variables()) {
    const Eigen::MatrixXd& m = drawn.at(v.name);
    for (int row = 0; row < n; ++row) out[row][v.name] = m.row(row);
  }
  return out;
}

Eigen::MatrixXd Session::sample_posterior_matrix(int n, RngStream& rng) const {
  std::vector<Assignment> draws = sample_posterior(n, rng);
  Eigen::MatrixXd m(n, graph_.total_dim());
  for (int row = 0; row < n; ++row) {
    int col = 0;
    for (const auto& v : graph_.variables()) {
      m.row(row).segment(col, v.dim()) = draws[row].at(v.name);
      col += v.dim();
    }
  }
  return m;
}

std::vector<std::string> Session::column_labels() const {
  static const char* kDims[] = {"x", "y", "theta"};
  std::vector<std::string> out;
  for (const auto& v : graph_.variables())
    for (int d = 0; d < v.dim(); ++d)
      out.push_back(v.name + "." + kDims[d]);
  return out;
}

double Session::posterior_log_density(const Assignment& a) const {
  double total = 0.0;
  for (int ci : tree_.root_to_leaf_order()) {
    const Clique& c = tree_.clique(ci);
    if (!c.trained) throw UntrainedClique("clique has no trained sampler");

    int sep_dim = 0, frontal_dim = 0;
    for (const auto& v : c.separator) sep_dim += v.dim();
    for (const auto& v : c.frontals) frontal_dim += v.dim();
    Eigen::VectorXd s(sep_dim), f(frontal_dim);
    int at = 0;
    for (const auto& v : c.separator) {
      s.segment(at, v.dim()) = assignment_at(a, v.name);
      at += v.dim();
    }
    at = 0;
    for (const auto& v : c.frontals) {
      f.segment(at, v.dim()) = assignment_at(a, v.name);
      at += v.dim();
    }
    const TriangularMap& cond = c.trained->conditional;
    total += sep_dim > 0 ? cond.condition(s).log_density(f)
                         : cond.log_density(f);
  }
  return total;
}

}  // namespace flowsam
