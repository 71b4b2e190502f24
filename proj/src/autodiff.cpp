#include "flowsam/autodiff.hpp"

#include <cassert>
#include <cmath>

namespace flowsam::ad {

Tape::Tape(int batch_size) : n_(batch_size) {}

int Tape::push(Node node, int out_size) {
  node.value = Batch::Zero(out_size);
  node.grad = Batch::Zero(out_size);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::param(double init) {
  Node node;
  node.op = Op::Param;
  int id = push(std::move(node), 1);
  nodes_[id].value[0] = init;
  params_.push_back(id);
  return id;
}

int Tape::data(const Batch& values) {
  Node node;
  node.op = Op::Data;
  int id = push(std::move(node), static_cast<int>(values.size()));
  nodes_[id].value = values;
  return id;
}

namespace {
int joint_size(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  return static_cast<int>(std::max(a.size(), b.size()));
}
}  // namespace

int Tape::add(int a, int b) {
  Node node;
  node.op = Op::Add;
  node.a = a;
  node.b = b;
  return push(std::move(node), joint_size(nodes_[a].value, nodes_[b].value));
}

int Tape::sub(int a, int b) {
  Node node;
  node.op = Op::Sub;
  node.a = a;
  node.b = b;
  return push(std::move(node), joint_size(nodes_[a].value, nodes_[b].value));
}

int Tape::mul(int a, int b) {
  Node node;
  node.op = Op::Mul;
  node.a = a;
  node.b = b;
  return push(std::move(node), joint_size(nodes_[a].value, nodes_[b].value));
}

int Tape::tanh(int a) {
  Node node;
  node.op = Op::Tanh;
  node.a = a;
  return push(std::move(node), static_cast<int>(nodes_[a].value.size()));
}

int Tape::lin_comb(const std::vector<int>& weights,
                   const std::vector<int>& inputs, int bias) {
  assert(weights.size() == inputs.size());
  Node node;
  node.op = Op::LinComb;
  node.b = bias;
  node.list = weights;
  node.list.insert(node.list.end(), inputs.begin(), inputs.end());
  int sz = static_cast<int>(nodes_[bias].value.size());
  for (int id : node.list)
    sz = std::max(sz, static_cast<int>(nodes_[id].value.size()));
  return push(std::move(node), sz);
}

int Tape::spline_nll(const std::vector<int>& raw, const Batch& u,
                     const SplineSpec& spec) {
  assert(static_cast<int>(raw.size()) == spec.raw_size());
  Node node;
  node.op = Op::SplineNll;
  node.list = raw;
  node.u = u;
  node.bin.assign(u.size(), -1);
  node.spec = spec;
  return push(std::move(node), static_cast<int>(u.size()));
}

namespace {

// broadcast helpers: x(i) works for size-1 and size-n arrays
inline double at(const Batch& v, Eigen::Index i) {
  return v.size() == 1 ? v[0] : v[i];
}

}  // namespace

void Tape::forward() {
  const int raw_cap = 128;
  double raw_buf[raw_cap];
  for (auto& node : nodes_) {
    switch (node.op) {
      case Op::Param:
      case Op::Data:
        break;
      case Op::Add: {
        const Batch& a = nodes_[node.a].value;
        const Batch& b = nodes_[node.b].value;
        if (a.size() == b.size())
          node.value = a + b;
        else if (a.size() == 1)
          node.value = a[0] + b;
        else
          node.value = a + b[0];
        break;
      }
      case Op::Sub: {
        const Batch& a = nodes_[node.a].value;
        const Batch& b = nodes_[node.b].value;
        if (a.size() == b.size())
          node.value = a - b;
        else if (a.size() == 1)
          node.value = a[0] - b;
        else
          node.value = a - b[0];
        break;
      }
      case Op::Mul: {
        const Batch& a = nodes_[node.a].value;
        const Batch& b = nodes_[node.b].value;
        if (a.size() == b.size())
          node.value = a * b;
        else if (a.size() == 1)
          node.value = a[0] * b;
        else
          node.value = a * b[0];
        break;
      }
      case Op::Tanh:
        node.value = nodes_[node.a].value.tanh();
        break;
      case Op::LinComb: {
        const size_t m = node.list.size() / 2;
        const Batch& bias = nodes_[node.b].value;
        if (bias.size() == node.value.size())
          node.value = bias;
        else
          node.value.setConstant(bias[0]);
        for (size_t i = 0; i < m; ++i) {
          const Batch& w = nodes_[node.list[i]].value;
          const Batch& x = nodes_[node.list[m + i]].value;
          if (w.size() == 1 && x.size() == node.value.size())
            node.value += w[0] * x;
          else if (w.size() == 1 && x.size() == 1)
            node.value += w[0] * x[0];
          else
            node.value += w * x;  // both batch
        }
        break;
      }
      case Op::SplineNll: {
        const int nr = node.spec.raw_size();
        assert(nr <= raw_cap);
        const bool all_scalar = [&] {
          for (int id : node.list)
            if (nodes_[id].value.size() != 1) return false;
          return true;
        }();
        DecodedSpline dec;
        if (all_scalar) {
          for (int j = 0; j < nr; ++j) raw_buf[j] = nodes_[node.list[j]].value[0];
          dec = decode_spline(node.spec, raw_buf);
        }
        for (Eigen::Index i = 0; i < node.u.size(); ++i) {
          if (!all_scalar) {
            for (int j = 0; j < nr; ++j)
              raw_buf[j] = at(nodes_[node.list[j]].value, i);
            dec = decode_spline(node.spec, raw_buf);
          }
          double slope = 1.0;
          int bin = -1;
          double y = spline_forward(dec, node.u[i], &slope, &bin);
          node.bin[i] = bin;
          node.value[i] = 0.5 * y * y - std::log(slope);
        }
        break;
      }
    }
  }
}

void Tape::accum(int id, const Batch& delta) {
  Batch& g = nodes_[id].grad;
  if (g.size() == delta.size())
    g += delta;
  else
    g[0] += delta.sum();
}

void Tape::backward(const std::vector<int>& loss_nodes, double seed) {
  for (auto& node : nodes_) node.grad.setZero();
  for (int id : loss_nodes) nodes_[id].grad += seed;

  const int raw_cap = 128;
  double raw_buf[raw_cap];
  double graw_buf[raw_cap];

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& node = nodes_[id];
    if ((node.grad == 0.0).all()) continue;
    switch (node.op) {
      case Op::Param:
      case Op::Data:
        break;
      case Op::Add:
        accum(node.a, node.grad);
        accum(node.b, node.grad);
        break;
      case Op::Sub:
        accum(node.a, node.grad);
        accum(node.b, -node.grad);
        break;
      case Op::Mul: {
        const Batch& a = nodes_[node.a].value;
        const Batch& b = nodes_[node.b].value;
        if (b.size() == 1)
          accum(node.a, node.grad * b[0]);
        else
          accum(node.a, node.grad * b);
        if (a.size() == 1)
          accum(node.b, node.grad * a[0]);
        else
          accum(node.b, node.grad * a);
        break;
      }
      case Op::Tanh:
        accum(node.a, node.grad * (1.0 - node.value.square()));
        break;
      case Op::LinComb: {
        const size_t m = node.list.size() / 2;
        accum(node.b, node.grad);
        for (size_t i = 0; i < m; ++i) {
          const Batch& w = nodes_[node.list[i]].value;
          const Batch& x = nodes_[node.list[m + i]].value;
          if (x.size() == 1)
            accum(node.list[i], node.grad * x[0]);
          else
            accum(node.list[i], node.grad * x);
          if (w.size() == 1)
            accum(node.list[m + i], node.grad * w[0]);
          else
            accum(node.list[m + i], node.grad * w);
        }
        break;
      }
      case Op::SplineNll: {
        const int nr = node.spec.raw_size();
        const bool all_scalar = [&] {
          for (int pid : node.list)
            if (nodes_[pid].value.size() != 1) return false;
          return true;
        }();
        DecodedSpline dec;
        if (all_scalar) {
          for (int j = 0; j < nr; ++j) raw_buf[j] = nodes_[node.list[j]].value[0];
          dec = decode_spline(node.spec, raw_buf);
          std::fill(graw_buf, graw_buf + nr, 0.0);
          for (Eigen::Index i = 0; i < node.u.size(); ++i)
            spline_nll_backward(node.spec, raw_buf, dec, node.u[i], node.bin[i],
                                node.grad.size() == 1 ? node.grad[0]
                                                      : node.grad[i],
                                graw_buf);
          for (int j = 0; j < nr; ++j) nodes_[node.list[j]].grad[0] += graw_buf[j];
        } else {
          for (Eigen::Index i = 0; i < node.u.size(); ++i) {
            for (int j = 0; j < nr; ++j)
              raw_buf[j] = at(nodes_[node.list[j]].value, i);
            dec = decode_spline(node.spec, raw_buf);
            std::fill(graw_buf, graw_buf + nr, 0.0);
            spline_nll_backward(node.spec, raw_buf, dec, node.u[i], node.bin[i],
                                node.grad.size() == 1 ? node.grad[0]
                                                      : node.grad[i],
                                graw_buf);
            for (int j = 0; j < nr; ++j) {
              Batch& g = nodes_[node.list[j]].grad;
              if (g.size() == 1)
                g[0] += graw_buf[j];
              else
                g[i] += graw_buf[j];
            }
          }
        }
        break;
      }
    }
  }
}

}  // namespace flowsam::ad
