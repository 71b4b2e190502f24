#include "flowsam/bayes_tree.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "flowsam/errors.hpp"

namespace flowsam {

namespace {

std::vector<std::string> names_of(const std::vector<VariableId>& vars) {
  std::vector<std::string> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.name);
  return out;
}

std::uint64_t clique_signature(const Clique& c,
                               const std::vector<std::uint64_t>& child_sigs) {
  std::uint64_t h = mix64(0x5eedba5e);
  for (const auto& v : c.frontals) {
    h = hash_combine(h, v.name);
    h = hash_combine(h, v.kind == VarKind::Pose2 ? 2 : 3);
  }
  h = hash_combine(h, 0xF5);  // frontal/separator boundary
  for (const auto& v : c.separator) {
    h = hash_combine(h, v.name);
    h = hash_combine(h, v.kind == VarKind::Pose2 ? 2 : 3);
  }
  std::vector<std::uint64_t> fh;
  fh.reserve(c.factors.size());
  for (const auto& f : c.factors) fh.push_back(factor_hash(*f));
  std::sort(fh.begin(), fh.end());
  for (auto x : fh) h = hash_combine(h, x);
  std::vector<std::uint64_t> cs = child_sigs;
  std::sort(cs.begin(), cs.end());
  h = hash_combine(h, 0xC5);  // factor/children boundary
  for (auto x : cs) h = hash_combine(h, x);
  return h;
}

}  // namespace

std::vector<std::string> Clique::frontal_names() const {
  return names_of(frontals);
}

std::vector<std::string> Clique::separator_names() const {
  return names_of(separator);
}

int BayesTree::clique_of(const std::string& name) const {
  auto it = frontal_index_.find(name);
  if (it == frontal_index_.end())
    throw MissingVariable("'" + name + "' is not frontal in any clique");
  return it->second;
}

std::vector<int> BayesTree::leaf_to_root_order() const {
  std::vector<int> out = root_to_leaf_order();
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<int> BayesTree::root_to_leaf_order() const {
  std::vector<int> out;
  out.reserve(cliques_.size());
  std::vector<int> stack(roots_.rbegin(), roots_.rend());
  while (!stack.empty()) {
    int c = stack.back();
    stack.pop_back();
    out.push_back(c);
    const auto& kids = cliques_[c].children;
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

std::vector<FactorPtr> BayesTree::all_factors() const {
  std::vector<FactorPtr> out;
  for (const auto& c : cliques_)
    out.insert(out.end(), c.factors.begin(), c.factors.end());
  return out;
}

std::string BayesTree::outline() const {
  std::ostringstream os;
  struct Item {
    int clique;
    int depth;
  };
  std::vector<Item> stack;
  for (auto it = roots_.rbegin(); it != roots_.rend(); ++it)
    stack.push_back({*it, 0});
  while (!stack.empty()) {
    Item item = stack.back();
    stack.pop_back();
    const Clique& c = cliques_[item.clique];
    for (int i = 0; i < item.depth; ++i) os << "  ";
    bool first = true;
    for (const auto& v : c.frontals) {
      if (!first) os << ' ';
      os << v.name;
      first = false;
    }
    os << " :";
    for (const auto& v : c.separator) os << ' ' << v.name;
    os << '\n';
    for (auto it = c.children.rbegin(); it != c.children.rend(); ++it)
      stack.push_back({*it, item.depth + 1});
  }
  return os.str();
}

BayesTree eliminate(const FactorGraph& graph,
                    const std::vector<std::string>& ordering) {
  const auto& vars = graph.variables();
  if (ordering.size() != vars.size())
    throw IncompleteOrdering("ordering lists " +
                             std::to_string(ordering.size()) + " of " +
                             std::to_string(vars.size()) + " variables");
  std::map<std::string, int> order_index;
  for (int i = 0; i < static_cast<int>(ordering.size()); ++i) {
    if (!graph.has(ordering[i]))
      throw IncompleteOrdering("unknown variable '" + ordering[i] + "'");
    if (!order_index.emplace(ordering[i], i).second)
      throw IncompleteOrdering("duplicate variable '" + ordering[i] + "'");
  }

  const int n = static_cast<int>(ordering.size());

  // Elimination game on symbolic scopes (sorted order indices).
  struct Sym {
    std::vector<int> scope;
    bool active = true;
  };
  std::vector<Sym> sym;
  sym.reserve(graph.factors().size() + n);
  for (const auto& f : graph.factors()) {
    std::set<int> s;
    for (const auto& v : factor_variables(*f)) s.insert(order_index.at(v.name));
    sym.push_back({{s.begin(), s.end()}, true});
  }
  std::vector<std::vector<int>> parents(n);
  for (int v = 0; v < n; ++v) {
    std::set<int> scope;
    for (auto& s : sym) {
      if (!s.active ||
          !std::binary_search(s.scope.begin(), s.scope.end(), v))
        continue;
      scope.insert(s.scope.begin(), s.scope.end());
      s.active = false;
    }
    scope.erase(v);
    parents[v].assign(scope.begin(), scope.end());
    if (!parents[v].empty()) sym.push_back({parents[v], true});
  }

  // Conditionals in reverse order form the tree: merge into the clique of
  // the earliest-eliminated parent when the parent set matches its scope.
  BayesTree tree;
  std::vector<int> clique_of_var(n, -1);
  std::vector<std::vector<int>> scope_idx;  // per clique, sorted
  for (int v = n - 1; v >= 0; --v) {
    const VariableId& var = graph.variable(ordering[v]);
    const auto& P = parents[v];
    if (P.empty()) {
      int idx = static_cast<int>(tree.cliques_.size());
      tree.cliques_.push_back({});
      tree.cliques_[idx].frontals = {var};
      tree.roots_.push_back(idx);
      scope_idx.push_back({v});
      clique_of_var[v] = idx;
      continue;
    }
    int target = clique_of_var[P.front()];
    if (P == scope_idx[target]) {
      auto& c = tree.cliques_[target];
      c.frontals.insert(c.frontals.begin(), var);
      scope_idx[target].insert(scope_idx[target].begin(), v);
      clique_of_var[v] = target;
    } else {
      int idx = static_cast<int>(tree.cliques_.size());
      tree.cliques_.push_back({});
      auto& c = tree.cliques_[idx];
      c.frontals = {var};
      for (int p : P) c.separator.push_back(graph.variable(ordering[p]));
      c.parent = target;
      tree.cliques_[target].children.push_back(idx);
      std::vector<int> s = P;
      s.insert(s.begin(), v);
      scope_idx.push_back(std::move(s));
      clique_of_var[v] = idx;
    }
  }

  // Children were appended while walking the ordering backwards.
  for (auto& c : tree.cliques_)
    std::reverse(c.children.begin(), c.children.end());
  std::reverse(tree.roots_.begin(), tree.roots_.end());

  for (const auto& f : graph.factors()) {
    int vmin = n;
    for (const auto& v : factor_variables(*f))
      vmin = std::min(vmin, order_index.at(v.name));
    tree.cliques_[clique_of_var[vmin]].factors.push_back(f);
  }
  // Canonical factor order, independent of insertion history.
  for (auto& c : tree.cliques_) {
    std::stable_sort(c.factors.begin(), c.factors.end(),
                     [](const FactorPtr& a, const FactorPtr& b) {
                       return factor_hash(*a) < factor_hash(*b);
                     });
  }

  for (int ci : tree.leaf_to_root_order()) {
    auto& c = tree.cliques_[ci];
    std::vector<std::uint64_t> child_sigs;
    for (int k : c.children) child_sigs.push_back(tree.cliques_[k].signature);
    c.signature = clique_signature(c, child_sigs);
  }

  for (int ci = 0; ci < tree.size(); ++ci)
    for (const auto& v : tree.cliques_[ci].frontals)
      tree.frontal_index_[v.name] = ci;
  return tree;
}

UpdateResult incremental_update(const BayesTree& tree,
                                const std::vector<FactorPtr>& new_factors,
                                const std::vector<std::string>& ordering) {
  FactorGraph graph;
  for (const auto& f : tree.all_factors()) graph.add(f);
  for (const auto& f : new_factors) graph.add(f);

  UpdateResult out{eliminate(graph, ordering), {}};

  std::map<std::uint64_t, std::vector<int>> reusable;
  for (int i = 0; i < tree.size(); ++i) {
    const auto& c = tree.clique(i);
    if (c.trained) reusable[c.signature].push_back(i);
  }
  for (int i : out.tree.leaf_to_root_order()) {
    auto& c = out.tree.clique(i);
    auto it = reusable.find(c.signature);
    if (it != reusable.end() && !it->second.empty()) {
      const Clique& old = tree.clique(it->second.back());
      it->second.pop_back();
      c.trained = old.trained;
      c.separator_density = old.separator_density;
    } else {
      out.changed.push_back(i);
    }
  }
  return out;
}

FactorGraph clique_factor_graph(const BayesTree& tree, int clique_index) {
  const Clique& c = tree.clique(clique_index);
  FactorGraph g;
  for (const auto& v : c.separator) g.declare(v);
  for (const auto& v : c.frontals) g.declare(v);

  // Child densities in signature order so the local graph does not depend
  // on how the tree was reached.
  std::vector<int> kids = c.children;
  std::sort(kids.begin(), kids.end(), [&](int a, int b) {
    return tree.clique(a).signature < tree.clique(b).signature;
  });
  for (int k : kids) {
    const Clique& child = tree.clique(k);
    if (!child.separator_density) {
      std::string tag;
      for (const auto& v : child.frontals) tag += (tag.empty() ? "" : " ") + v.name;
      throw UntrainedChild("child clique [" + tag + "] has no separator density");
    }
    g.add(child.separator_density);
  }
  for (const auto& f : c.factors) g.add(f);
  return g;
}

bool running_intersection_holds(const BayesTree& tree) {
  std::map<std::string, std::set<int>> containing;
  for (int i = 0; i < tree.size(); ++i) {
    const auto& c = tree.clique(i);
    for (const auto& v : c.frontals) containing[v.name].insert(i);
    for (const auto& v : c.separator) containing[v.name].insert(i);
  }
  for (const auto& [name, set] : containing) {
    int external_parents = 0;
    for (int i : set) {
      int p = tree.clique(i).parent;
      if (p < 0 || set.count(p) == 0) ++external_parents;
    }
    if (external_parents != 1) return false;
  }
  return true;
}

}  // namespace flowsam
