/*
 * Copyright 2026 The FreqDebias Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

// Minimal reverse-mode automatic differentiation over dense row-major
// double arrays. A Tape records every operation in execution order;
// backward() replays the recorded rules in exact reverse order.
//
// Tensors are lightweight handles (tape pointer + node id). All tensors of
// one tape must be used from a single thread.

namespace freqdebias::ad {

using Shape = std::vector<int>;
using Array = Eigen::ArrayXd;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Persistent trainable value living outside any tape. Gradients accumulate
// into `grad` on every backward pass until zero_grad() is called.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Shape shape);
  Parameter(std::string name, Shape shape, Array value);

  std::string name;
  Shape shape;
  Array value;
  Array grad;

  void zero_grad() { grad.setZero(value.size()); }
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  int dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::size_t size() const;
  const Array& value() const;
  // Empty array when the node never received a gradient.
  const Array& grad() const;
  double item() const;

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Called with the tape and the id of the op's output node.
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf without gradient.
  Tensor constant(Shape shape, Array value);
  Tensor constant(Shape shape, double fill);
  Tensor scalar(double v) { return constant({1}, v); }
  // Leaf whose gradient is kept on the tape (useful for input gradients).
  Tensor variable(Shape shape, Array value);
  // Leaf bound to a Parameter; backward() adds into parameter.grad.
  Tensor parameter(Parameter& p);

  // Loss must hold exactly one element.
  void backward(const Tensor& loss);
  void zero_grad();

  // When disabled, operations compute values but record no backward rule.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_ops() const { return ops_.size(); }

  // Used by operation implementations.
  Tensor record(Shape shape, Array value, const std::vector<Tensor>& inputs,
                BackwardFn backward);
  const Shape& shape_of(int id) const { return nodes_[id].shape; }
  const Array& value_of(int id) const { return nodes_[id].value; }
  const Array& grad_of(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Zero-initialises the gradient buffer on first access.
  Array& grad_buffer(int id);

 private:
  struct Node {
    Shape shape;
    Array value;
    Array grad;
    bool requires_grad = false;
    bool leaf = true;
    Parameter* param = nullptr;
  };
  struct Op {
    int output;
    BackwardFn backward;
  };

  Tensor push(Node node);

  std::vector<Node> nodes_;
  std::vector<Op> ops_;
  bool recording_ = true;
};

// ---------------------------------------------------------------------------
// Elementwise arithmetic (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator/(const Tensor& a, double s) { return scale(a, 1.0 / s); }
Tensor operator/(double s, const Tensor& a);

// Elementwise functions.
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]
// Sum over one axis; the axis is removed from the shape.
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);
// Inner product of two equally shaped tensors -> [1].
Tensor dot(const Tensor& a, const Tensor& b);
// Row-wise inner product of two [N, D] tensors -> [N].
Tensor rowwise_dot(const Tensor& a, const Tensor& b);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank 2 only
// Repeats `a` `count` times along a new leading axis: [S...] -> [count, S...].
Tensor expand(const Tensor& a, int count);
// Gathers entries along axis 0.
Tensor take(const Tensor& a, const std::vector<int>& indices);
// Concatenation along axis 1 of rank-4 [N, C, H, W] tensors.
Tensor concat_channels(const std::vector<Tensor>& parts);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,N]

// Convolution on [N, C, H, W] with weights [O, C, k, k] and bias [O].
// Zero padding k/2 keeps the spatial size for stride 1; stride 2 halves it.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride = 1);
Tensor conv2d(const Tensor& x, const Tensor& weight, int stride = 1);
Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor avg_pool2(const Tensor& x);       // [N,C,H,W] -> [N,C,H/2,W/2]
Tensor global_avg_pool(const Tensor& x); // [N,C,H,W] -> [N,C]

// Softmax / log-softmax along the last axis with temperature tau.
Tensor softmax(const Tensor& a, double tau = 1.0);
Tensor log_softmax(const Tensor& a, double tau = 1.0);
// L2 normalisation along the last axis (rank 1 or 2).
Tensor l2_normalize(const Tensor& a, double eps = 1e-12);

// Per-row instance normalisation of [N, P] restricted to a binary mask,
// followed by the affine map gamma * z + beta. Entries outside the mask are
// zero. gamma and beta have shape [1].
Tensor masked_instance_norm(const Tensor& x, const Array& mask,
                            const Tensor& gamma, const Tensor& beta,
                            double eps = 1e-5);

// Jensen-Shannon divergence between rows of two [N, P] probability tensors
// -> [N]. Uses 0 log 0 = 0.
Tensor js_divergence(const Tensor& p, const Tensor& q);

// Composite helpers.
// Mean cross-entropy of [N, K] logits against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
// Row-wise KL(softmax(a/tau) || softmax(b/tau)) for [N, K] logits -> [N].
Tensor kl_softmax(const Tensor& logits_p, const Tensor& logits_q, double tau);

// [N, K] indicator matrix, row-major.
Array one_hot(const std::vector<int>& labels, int classes);

}  // namespace freqdebias::ad
