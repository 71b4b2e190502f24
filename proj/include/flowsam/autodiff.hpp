#pragma once

#include <Eigen/Core>
#include <vector>

#include "flowsam/spline.hpp"

namespace flowsam::ad {

using Batch = Eigen::ArrayXd;

// Reverse-mode tape over batched values. Every node holds either a scalar
// (size-1 array, broadcast against the batch) or one value per sample.
// The graph is built once; forward()/backward() are then re-run in place
// each optimizer iteration without allocation.
class Tape {
 public:
  explicit Tape(int batch_size);

  // leaves
  int param(double init);            // trainable scalar
  int data(const Batch& values);     // constant batch (or size-1) input

  // elementwise ops
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int tanh(int a);

  // out = bias + sum_i weights[i] * inputs[i]
  int lin_comb(const std::vector<int>& weights, const std::vector<int>& inputs,
               int bias);

  // Per-sample 0.5*y^2 - ln(dy/du) for a rational-quadratic spline whose raw
  // parameter block is given by `raw` nodes (3K-1 of them) evaluated at the
  // constant points u. Tail samples contribute a constant.
  int spline_nll(const std::vector<int>& raw, const Batch& u,
                 const SplineSpec& spec);

  void forward();
  // Zeroes grads, seeds each loss node with `seed` per sample, runs the
  // reverse sweep.
  void backward(const std::vector<int>& loss_nodes, double seed);

  int batch_size() const { return n_; }
  const Batch& value(int id) const { return nodes_[id].value; }
  const std::vector<int>& params() const { return params_; }
  double param_value(int id) const { return nodes_[id].value[0]; }
  void set_param_value(int id, double v) { nodes_[id].value[0] = v; }
  double param_grad(int id) const { return nodes_[id].grad[0]; }

 private:
  enum class Op { Param, Data, Add, Sub, Mul, Tanh, LinComb, SplineNll };

  struct Node {
    Op op;
    int a = -1, b = -1;
    Batch value, grad;
    // LinComb: first half weights, second half inputs, b = bias node.
    // SplineNll: the raw parameter nodes.
    std::vector<int> list;
    Batch u;                    // SplineNll evaluation points
    std::vector<int> bin;       // SplineNll active bin per sample
    SplineSpec spec;
  };

  int push(Node node, int out_size);
  void accum(int id, const Batch& delta);

  int n_;
  std::vector<Node> nodes_;
  std::vector<int> params_;
};

}  // namespace flowsam::ad
