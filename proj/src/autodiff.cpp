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

#include "freqdebias/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace freqdebias::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& op, const Shape& a, const Shape& b) {
  if (!ok) {
    throw ShapeError(op + ": incompatible shapes " + to_string(a) + " and " +
                     to_string(b));
  }
}

void require_rank(const Tensor& t, int rank, const std::string& op) {
  if (t.rank() != rank) {
    throw ShapeError(op + ": expected rank " + std::to_string(rank) +
                     ", got shape " + to_string(t.shape()));
  }
}

Tape& tape_of(const Tensor& a) {
  if (!a.valid()) throw std::invalid_argument("operation on an empty tensor");
  return *a.tape();
}

Tape& tape_of(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) {
    throw std::invalid_argument("tensors belong to different tapes");
  }
  return t;
}

// Number of rows when the last axis is treated as the feature axis.
std::pair<Eigen::Index, Eigen::Index> rows_cols(const Shape& s) {
  const Eigen::Index cols = s.empty() ? 1 : s.back();
  const Eigen::Index total = static_cast<Eigen::Index>(numel(s));
  return {cols == 0 ? 0 : total / cols, cols};
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Parameter::Parameter(std::string n, Shape s)
    : name(std::move(n)), shape(std::move(s)) {
  value.setZero(static_cast<Eigen::Index>(numel(shape)));
  grad.setZero(value.size());
}

Parameter::Parameter(std::string n, Shape s, Array v)
    : name(std::move(n)), shape(std::move(s)), value(std::move(v)) {
  if (static_cast<std::size_t>(value.size()) != numel(shape)) {
    throw ShapeError("parameter '" + name + "': value size does not match " +
                     to_string(shape));
  }
  grad.setZero(value.size());
}

// ---------------------------------------------------------------------------
// Tensor

const Shape& Tensor::shape() const { return tape_->shape_of(id_); }
int Tensor::dim(int axis) const { return shape().at(static_cast<std::size_t>(axis)); }
std::size_t Tensor::size() const { return numel(shape()); }
const Array& Tensor::value() const { return tape_->value_of(id_); }
const Array& Tensor::grad() const { return tape_->grad_of(id_); }

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
  }
  return value()(0);
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::constant(Shape shape, Array value) {
  if (static_cast<std::size_t>(value.size()) != numel(shape)) {
    throw ShapeError("constant: value size does not match " + to_string(shape));
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  return push(std::move(n));
}

Tensor Tape::constant(Shape shape, double fill) {
  Array v = Array::Constant(static_cast<Eigen::Index>(numel(shape)), fill);
  return constant(std::move(shape), std::move(v));
}

Tensor Tape::variable(Shape shape, Array value) {
  if (static_cast<std::size_t>(value.size()) != numel(shape)) {
    throw ShapeError("variable: value size does not match " + to_string(shape));
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Tensor Tape::parameter(Parameter& p) {
  Node n;
  n.shape = p.shape;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

Tensor Tape::record(Shape shape, Array value, const std::vector<Tensor>& inputs,
                    BackwardFn backward) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.leaf = false;
  if (recording_) {
    for (const auto& in : inputs) {
      if (nodes_[in.id()].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  Tensor out = push(std::move(n));
  if (nodes_[out.id()].requires_grad) {
    ops_.push_back(Op{out.id(), std::move(backward)});
  }
  return out;
}

Array& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad.setZero(n.value.size());
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: foreign tensor");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     to_string(loss.shape()));
  }
  if (ops_.empty() && !nodes_[loss.id()].leaf) {
    throw std::logic_error("backward: tape has no recorded operations");
  }
  for (auto& n : nodes_) {
    if (!n.requires_grad) continue;
    if (!n.leaf || n.param != nullptr) {
      n.grad.setZero(n.value.size());
    } else if (n.grad.size() != n.value.size()) {
      n.grad.setZero(n.value.size());
    }
  }
  grad_buffer(loss.id())(0) += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (nodes_[it->output].grad.size() == 0) continue;
    it->backward(*this, it->output);
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr) continue;
    if (n.param->grad.size() != n.param->value.size()) {
      n.param->grad.setZero(n.param->value.size());
    }
    n.param->grad += n.grad;
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) {
    if (n.grad.size()) n.grad.setZero();
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a, b);
  require(a.shape() == b.shape(), "add", a.shape(), b.shape());
  const int ia = a.id(), ib = b.id();
  return t.record(a.shape(), a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, int o) {
    const Array& g = tp.grad_of(o);
    if (tp.requires_grad(ia)) tp.grad_buffer(ia) += g;
    if (tp.requires_grad(ib)) tp.grad_buffer(ib) += g;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a, b);
  require(a.shape() == b.shape(), "sub", a.shape(), b.shape());
  const int ia = a.id(), ib = b.id();
  return t.record(a.shape(), a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, int o) {
    const Array& g = tp.grad_of(o);
    if (tp.requires_grad(ia)) tp.grad_buffer(ia) += g;
    if (tp.requires_grad(ib)) tp.grad_buffer(ib) -= g;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a, b);
  require(a.shape() == b.shape(), "mul", a.shape(), b.shape());
  const int ia = a.id(), ib = b.id();
  return t.record(a.shape(), a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, int o) {
    const Array& g = tp.grad_of(o);
    if (tp.requires_grad(ia)) tp.grad_buffer(ia) += g * tp.value_of(ib);
    if (tp.requires_grad(ib)) tp.grad_buffer(ib) += g * tp.value_of(ia);
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a, b);
  require(a.shape() == b.shape(), "div", a.shape(), b.shape());
  const int ia = a.id(), ib = b.id();
  return t.record(a.shape(), a.value() / b.value(), {a, b}, [ia, ib](Tape& tp, int o) {
    const Array& g = tp.grad_of(o);
    const Array& bv = tp.value_of(ib);
    if (tp.requires_grad(ia)) tp.grad_buffer(ia) += g / bv;
    if (tp.requires_grad(ib)) tp.grad_buffer(ib) -= g * tp.value_of(ia) / bv.square();
  });
}

Tensor scale(const Tensor& a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.shape(), a.value() * s, {a}, [ia, s](Tape& tp, int o) {
    tp.grad_buffer(ia) += tp.grad_of(o) * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.shape(), a.value() + s, {a}, [ia](Tape& tp, int o) {
    tp.grad_buffer(ia) += tp.grad_of(o);
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor operator/(double s, const Tensor& a) {
  return div(tape_of(a).constant(a.shape(), s), a);
}

// ---------------------------------------------------------------------------
// Elementwise functions

Tensor relu(const Tensor& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.shape(), a.value().max(0.0), {a}, [ia](Tape& tp, int o) {
    tp.grad_buffer(ia) += (tp.value_of(ia) > 0.0).select(tp.grad_of(o), 0.0);
  });
}

Tensor exp(const Tensor& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.shape(), a.value().exp(), {a}, [ia](Tape& tp, int o) {
    tp.grad_buffer(ia) += tp.grad_of(o) * tp.value_of(o);
  });
}

Tensor log(const Tensor& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.shape(), a.value().log(), {a}, [ia](Tape& tp, int o) {
    tp.grad_buffer(ia) += tp.grad_of(o) / tp.value_of(ia);
  });
}

Tensor sqrt(const Tensor& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.shape(), a.value().sqrt(), {a}, [ia](Tape& tp, int o) {
    tp.grad_buffer(ia) += tp.grad_of(o) * 0.5 / tp.value_of(o);
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Array v(1);
  v(0) = a.value().sum();
  return t.record({1}, std::move(v), {a}, [ia](Tape& tp, int o) {
    tp.grad_buffer(ia) += tp.grad_of(o)(0);
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Tensor sum_axis(const Tensor& a, int axis) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  if (axis < 0) axis += a.rank();
  if (axis < 0 || axis >= a.rank()) {
    throw ShapeError("sum_axis: axis out of range for " + to_string(s));
  }
  Eigen::Index pre = 1, post = 1;
  for (int i = 0; i < axis; ++i) pre *= s[i];
  for (int i = axis + 1; i < a.rank(); ++i) post *= s[i];
  const Eigen::Index mid = s[axis];
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i) if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  const Array& x = a.value();
  Array v = Array::Zero(pre * post);
  for (Eigen::Index p = 0; p < pre; ++p)
    for (Eigen::Index m = 0; m < mid; ++m)
      v.segment(p * post, post) += x.segment((p * mid + m) * post, post);

  const int ia = a.id();
  return t.record(out_shape, std::move(v), {a}, [ia, pre, mid, post](Tape& tp, int o) {
    const Array& g = tp.grad_of(o);
    Array& ga = tp.grad_buffer(ia);
    for (Eigen::Index p = 0; p < pre; ++p)
      for (Eigen::Index m = 0; m < mid; ++m)
        ga.segment((p * mid + m) * post, post) += g.segment(p * post, post);
  });
}

Tensor mean_axis(const Tensor& a, int axis) {
  const int ax = axis < 0 ? axis + a.rank() : axis;
  return scale(sum_axis(a, axis), 1.0 / a.dim(ax));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a, b);
  require(a.shape() == b.shape(), "dot", a.shape(), b.shape());
  const int ia = a.id(), ib = b.id();
  Array v(1);
  v(0) = (a.value() * b.value()).sum();
  return t.record({1}, std::move(v), {a, b}, [ia, ib](Tape& tp, int o) {
    const double g = tp.grad_of(o)(0);
    if (tp.requires_grad(ia)) tp.grad_buffer(ia) += g * tp.value_of(ib);
    if (tp.requires_grad(ib)) tp.grad_buffer(ib) += g * tp.value_of(ia);
  });
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a, b);
  require(a.shape() == b.shape() && a.rank() == 2, "rowwise_dot", a.shape(), b.shape());
  const Eigen::Index n = a.dim(0), d = a.dim(1);
  ConstRowMap am(a.value().data(), n, d), bm(b.value().data(), n, d);
  Array v = (am.array() * bm.array()).rowwise().sum();
  const int ia = a.id(), ib = b.id();
  return t.record({static_cast<int>(n)}, std::move(v), {a, b}, [ia, ib, n, d](Tape& tp, int o) {
    const Eigen::VectorXd g = tp.grad_of(o).matrix();
    ConstRowMap av(tp.value_of(ia).data(), n, d), bv(tp.value_of(ib).data(), n, d);
    if (tp.requires_grad(ia)) {
      RowMap ga(tp.grad_buffer(ia).data(), n, d);
      ga += g.asDiagonal() * bv;
    }
    if (tp.requires_grad(ib)) {
      RowMap gb(tp.grad_buffer(ib).data(), n, d);
      gb += g.asDiagonal() * av;
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  Tape& t = tape_of(a);
  require(numel(shape) == a.size(), "reshape", a.shape(), shape);
  const int ia = a.id();
  return t.record(std::move(shape), a.value(), {a}, [ia](Tape& tp, int o) {
    tp.grad_buffer(ia) += tp.grad_of(o);
  });
}

Tensor transpose(const Tensor& a) {
  Tape& t = tape_of(a);
  require_rank(a, 2, "transpose");
  const Eigen::Index r = a.dim(0), c = a.dim(1);
  Array v(r * c);
  RowMap(v.data(), c, r) = ConstRowMap(a.value().data(), r, c).transpose();
  const int ia = a.id();
  return t.record({static_cast<int>(c), static_cast<int>(r)}, std::move(v), {a},
                  [ia, r, c](Tape& tp, int o) {
                    RowMap(tp.grad_buffer(ia).data(), r, c) +=
                        ConstRowMap(tp.grad_of(o).data(), c, r).transpose();
                  });
}

Tensor expand(const Tensor& a, int count) {
  Tape& t = tape_of(a);
  if (count < 1) throw ShapeError("expand: count must be positive");
  Shape s{count};
  s.insert(s.end(), a.shape().begin(), a.shape().end());
  const Eigen::Index m = static_cast<Eigen::Index>(a.size());
  Array v = a.value().replicate(count, 1);
  const int ia = a.id();
  return t.record(std::move(s), std::move(v), {a}, [ia, m, count](Tape& tp, int o) {
    const Array& g = tp.grad_of(o);
    Array& ga = tp.grad_buffer(ia);
    for (int i = 0; i < count; ++i) ga += g.segment(i * m, m);
  });
}

Tensor take(const Tensor& a, const std::vector<int>& indices) {
  Tape& t = tape_of(a);
  if (a.rank() < 1) throw ShapeError("take: rank-0 tensor");
  const int n = a.dim(0);
  const Eigen::Index row = n == 0 ? 0 : static_cast<Eigen::Index>(a.size()) / n;
  Shape s = a.shape();
  s[0] = static_cast<int>(indices.size());
  Array v(static_cast<Eigen::Index>(indices.size()) * row);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= n) {
      throw std::out_of_range("take: index " + std::to_string(indices[i]) +
                              " out of range for " + to_string(a.shape()));
    }
    v.segment(static_cast<Eigen::Index>(i) * row, row) = a.value().segment(indices[i] * row, row);
  }
  const int ia = a.id();
  return t.record(std::move(s), std::move(v), {a}, [ia, indices, row](Tape& tp, int o) {
    const Array& g = tp.grad_of(o);
    Array& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < indices.size(); ++i)
      ga.segment(indices[i] * row, row) += g.segment(static_cast<Eigen::Index>(i) * row, row);
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Tape& t = tape_of(parts.front());
  const Shape& s0 = parts.front().shape();
  if (s0.size() != 4) throw ShapeError("concat_channels: expected rank 4, got " + to_string(s0));
  int channels = 0;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("tensors belong to different tapes");
    const Shape& s = p.shape();
    require(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
            "concat_channels", s0, s);
    channels += s[1];
  }
  const int n = s0[0];
  const Eigen::Index plane = static_cast<Eigen::Index>(s0[2]) * s0[3];
  Array v(static_cast<Eigen::Index>(n) * channels * plane);
  std::vector<int> ids, offsets, widths;
  int off = 0;
  for (const auto& p : parts) {
    const int c = p.dim(1);
    for (int i = 0; i < n; ++i)
      v.segment((static_cast<Eigen::Index>(i) * channels + off) * plane, c * plane) =
          p.value().segment(static_cast<Eigen::Index>(i) * c * plane, c * plane);
    ids.push_back(p.id());
    offsets.push_back(off);
    widths.push_back(c);
    off += c;
  }
  return t.record({n, channels, s0[2], s0[3]}, std::move(v), parts,
                  [ids, offsets, widths, n, channels, plane](Tape& tp, int o) {
                    const Array& g = tp.grad_of(o);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!tp.requires_grad(ids[k])) continue;
                      Array& gk = tp.grad_buffer(ids[k]);
                      const Eigen::Index c = widths[k];
                      for (int i = 0; i < n; ++i)
                        gk.segment(static_cast<Eigen::Index>(i) * c * plane, c * plane) +=
                            g.segment((static_cast<Eigen::Index>(i) * channels + offsets[k]) * plane,
                                      c * plane);
                    }
                  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a, b);
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul", a.shape(), b.shape());
  const Eigen::Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Array v(m * n);
  RowMap(v.data(), m, n).noalias() =
      ConstRowMap(a.value().data(), m, k) * ConstRowMap(b.value().data(), k, n);
  const int ia = a.id(), ib = b.id();
  return t.record({static_cast<int>(m), static_cast<int>(n)}, std::move(v), {a, b},
                  [ia, ib, m, k, n](Tape& tp, int o) {
                    ConstRowMap g(tp.grad_of(o).data(), m, n);
                    if (tp.requires_grad(ia))
                      RowMap(tp.grad_buffer(ia).data(), m, k).noalias() +=
                          g * ConstRowMap(tp.value_of(ib).data(), k, n).transpose();
                    if (tp.requires_grad(ib))
                      RowMap(tp.grad_buffer(ib).data(), k, n).noalias() +=
                          ConstRowMap(tp.value_of(ia).data(), m, k).transpose() * g;
                  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

namespace {

struct ConvGeometry {
  int n, c, h, w, o, k, stride, pad, ho, wo;
  Eigen::Index patch() const { return static_cast<Eigen::Index>(c) * k * k; }
  Eigen::Index out_plane() const { return static_cast<Eigen::Index>(ho) * wo; }
  Eigen::Index in_plane() const { return static_cast<Eigen::Index>(h) * w; }
};

void im2col(const double* x, const ConvGeometry& g, RowMat& cols) {
  cols.resize(g.patch(), g.out_plane());
  for (int ch = 0; ch < g.c; ++ch) {
    const double* plane = x + ch * g.in_plane();
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        double* row = cols.data() + ((static_cast<Eigen::Index>(ch) * g.k + ki) * g.k + kj) * g.out_plane();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ki - g.pad;
          double* dst = row + static_cast<Eigen::Index>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<Eigen::Index>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kj - g.pad;
            dst[ox] = (ix < 0 || ix >= g.w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const RowMat& cols, const ConvGeometry& g, double* dx) {
  for (int ch = 0; ch < g.c; ++ch) {
    double* plane = dx + ch * g.in_plane();
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const double* row = cols.data() + ((static_cast<Eigen::Index>(ch) * g.k + ki) * g.k + kj) * g.out_plane();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ki - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<Eigen::Index>(oy) * g.wo;
          double* dst = plane + static_cast<Eigen::Index>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kj - g.pad;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Tensor conv_impl(const Tensor& x, const Tensor& weight, const Tensor* bias, int stride) {
  Tape& t = tape_of(x, weight);
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  require(weight.dim(1) == x.dim(1) && weight.dim(2) == weight.dim(3), "conv2d", x.shape(),
          weight.shape());
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = g.k / 2;
  g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;
  if (bias != nullptr) {
    if (bias->tape() != &t) throw std::invalid_argument("tensors belong to different tapes");
    require(bias->rank() == 1 && bias->dim(0) == g.o, "conv2d bias", weight.shape(), bias->shape());
  }

  const Eigen::Index in_size = static_cast<Eigen::Index>(g.c) * g.in_plane();
  const Eigen::Index out_size = static_cast<Eigen::Index>(g.o) * g.out_plane();
  Array v(static_cast<Eigen::Index>(g.n) * out_size);
  ConstRowMap wm(weight.value().data(), g.o, g.patch());
  RowMat cols;
  for (int i = 0; i < g.n; ++i) {
    im2col(x.value().data() + i * in_size, g, cols);
    RowMap out(v.data() + i * out_size, g.o, g.out_plane());
    out.noalias() = wm * cols;
    if (bias != nullptr) out.colwise() += bias->value().matrix();
  }

  const int ix = x.id(), iw = weight.id(), ib = bias ? bias->id() : -1;
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return t.record({g.n, g.o, g.ho, g.wo}, std::move(v), inputs,
                  [ix, iw, ib, g, in_size, out_size](Tape& tp, int o) {
                    const Array& grad = tp.grad_of(o);
                    const bool need_x = tp.requires_grad(ix);
                    const bool need_w = tp.requires_grad(iw);
                    const bool need_b = ib >= 0 && tp.requires_grad(ib);
                    ConstRowMap wm(tp.value_of(iw).data(), g.o, g.patch());
                    RowMat cols, dcols;
                    for (int i = 0; i < g.n; ++i) {
                      ConstRowMap gy(grad.data() + i * out_size, g.o, g.out_plane());
                      if (need_w) {
                        im2col(tp.value_of(ix).data() + i * in_size, g, cols);
                        RowMap(tp.grad_buffer(iw).data(), g.o, g.patch()).noalias() +=
                            gy * cols.transpose();
                      }
                      if (need_b) tp.grad_buffer(ib).matrix() += gy.rowwise().sum();
                      if (need_x) {
                        dcols.noalias() = wm.transpose() * gy;
                        col2im(dcols, g, tp.grad_buffer(ix).data() + i * in_size);
                      }
                    }
                  });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
  return conv_impl(x, weight, &bias, stride);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, int stride) {
  return conv_impl(x, weight, nullptr, stride);
}

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 4 || weight.dim(2) != 1 || weight.dim(3) != 1) {
    throw ShapeError("conv1x1: expected [O, C, 1, 1] weights, got " + to_string(weight.shape()));
  }
  return conv_impl(x, weight, &bias, 1);
}

Tensor avg_pool2(const Tensor& x) {
  Tape& t = tape_of(x);
  require_rank(x, 4, "avg_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial size " + to_string(x.shape()));
  const int ho = h / 2, wo = w / 2;
  const Eigen::Index planes = static_cast<Eigen::Index>(n) * c;
  Array v(planes * ho * wo);
  const double* src = x.value().data();
  for (Eigen::Index p = 0; p < planes; ++p) {
    const double* in = src + p * h * w;
    double* out = v.data() + p * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        out[y * wo + xx] = 0.25 * (in[(2 * y) * w + 2 * xx] + in[(2 * y) * w + 2 * xx + 1] +
                                   in[(2 * y + 1) * w + 2 * xx] + in[(2 * y + 1) * w + 2 * xx + 1]);
  }
  const int ix = x.id();
  return t.record({n, c, ho, wo}, std::move(v), {x}, [ix, planes, h, w, ho, wo](Tape& tp, int o) {
    const double* g = tp.grad_of(o).data();
    double* gx = tp.grad_buffer(ix).data();
    for (Eigen::Index p = 0; p < planes; ++p) {
      const double* gp = g + p * ho * wo;
      double* dp = gx + p * h * w;
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          const double q = 0.25 * gp[y * wo + xx];
          dp[(2 * y) * w + 2 * xx] += q;
          dp[(2 * y) * w + 2 * xx + 1] += q;
          dp[(2 * y + 1) * w + 2 * xx] += q;
          dp[(2 * y + 1) * w + 2 * xx + 1] += q;
        }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  return mean_axis(reshape(x, {n, c, hw}), 2);
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

Array softmax_rows(const Array& a, Eigen::Index rows, Eigen::Index cols, double tau) {
  Array out(rows * cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto in = a.segment(r * cols, cols) / tau;
    const double mx = in.maxCoeff();
    Array e = (in - mx).exp();
    out.segment(r * cols, cols) = e / e.sum();
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& a, double tau) {
  Tape& t = tape_of(a);
  if (!(tau > 0)) throw std::invalid_argument("softmax: temperature must be positive");
  const auto [rows, cols] = rows_cols(a.shape());
  const int ia = a.id();
  return t.record(a.shape(), softmax_rows(a.value(), rows, cols, tau), {a},
                  [ia, rows, cols, tau](Tape& tp, int o) {
                    const Array& y = tp.value_of(o);
                    const Array& g = tp.grad_of(o);
                    Array& ga = tp.grad_buffer(ia);
                    for (Eigen::Index r = 0; r < rows; ++r) {
                      auto yr = y.segment(r * cols, cols);
                      auto gr = g.segment(r * cols, cols);
                      const double s = (yr * gr).sum();
                      ga.segment(r * cols, cols) += yr * (gr - s) / tau;
                    }
                  });
}

Tensor log_softmax(const Tensor& a, double tau) {
  Tape& t = tape_of(a);
  if (!(tau > 0)) throw std::invalid_argument("log_softmax: temperature must be positive");
  const auto [rows, cols] = rows_cols(a.shape());
  Array v(rows * cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    Array in = a.value().segment(r * cols, cols) / tau;
    const double mx = in.maxCoeff();
    const double lse = mx + std::log((in - mx).exp().sum());
    v.segment(r * cols, cols) = in - lse;
  }
  const int ia = a.id();
  return t.record(a.shape(), std::move(v), {a}, [ia, rows, cols, tau](Tape& tp, int o) {
    const Array& y = tp.value_of(o);
    const Array& g = tp.grad_of(o);
    Array& ga = tp.grad_buffer(ia);
    for (Eigen::Index r = 0; r < rows; ++r) {
      auto gr = g.segment(r * cols, cols);
      ga.segment(r * cols, cols) += (gr - y.segment(r * cols, cols).exp() * gr.sum()) / tau;
    }
  });
}

Tensor l2_normalize(const Tensor& a, double eps) {
  Tape& t = tape_of(a);
  if (a.rank() != 1 && a.rank() != 2) {
    throw ShapeError("l2_normalize: expected rank 1 or 2, got " + to_string(a.shape()));
  }
  const auto [rows, cols] = rows_cols(a.shape());
  Array v(rows * cols);
  Array norms(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    norms(r) = std::max(std::sqrt(a.value().segment(r * cols, cols).square().sum()), eps);
    v.segment(r * cols, cols) = a.value().segment(r * cols, cols) / norms(r);
  }
  const int ia = a.id();
  return t.record(a.shape(), std::move(v), {a}, [ia, rows, cols, norms](Tape& tp, int o) {
    const Array& y = tp.value_of(o);
    const Array& g = tp.grad_of(o);
    Array& ga = tp.grad_buffer(ia);
    for (Eigen::Index r = 0; r < rows; ++r) {
      auto yr = y.segment(r * cols, cols);
      auto gr = g.segment(r * cols, cols);
      ga.segment(r * cols, cols) += (gr - yr * (gr * yr).sum()) / norms(r);
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisation and divergences

Tensor masked_instance_norm(const Tensor& x, const Array& mask, const Tensor& gamma,
                            const Tensor& beta, double eps) {
  Tape& t = tape_of(x, gamma);
  if (beta.tape() != &t) throw std::invalid_argument("tensors belong to different tapes");
  require_rank(x, 2, "masked_instance_norm");
  require(mask.size() == static_cast<Eigen::Index>(x.size()), "masked_instance_norm mask",
          x.shape(), {static_cast<int>(mask.size())});
  require(gamma.size() == 1 && beta.size() == 1, "masked_instance_norm affine", gamma.shape(),
          beta.shape());
  const Eigen::Index rows = x.dim(0), cols = x.dim(1);
  const double gm = gamma.value()(0), bt = beta.value()(0);
  Array z = Array::Zero(rows * cols);
  Array inv_std = Array::Zero(rows);
  Array v = Array::Zero(rows * cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto m = mask.segment(r * cols, cols);
    const double count = m.sum();
    if (count <= 0) continue;
    auto xr = x.value().segment(r * cols, cols);
    const double mu = (m * xr).sum() / count;
    const double var = (m * (xr - mu).square()).sum() / count;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    z.segment(r * cols, cols) = m * (xr - mu) * inv_std(r);
    v.segment(r * cols, cols) = m * (gm * z.segment(r * cols, cols) + bt);
  }
  const int ix = x.id(), ig = gamma.id(), ibt = beta.id();
  return t.record(x.shape(), std::move(v), {x, gamma, beta},
                  [ix, ig, ibt, rows, cols, mask, z, inv_std](Tape& tp, int o) {
                    const Array& g = tp.grad_of(o);
                    const double gm = tp.value_of(ig)(0);
                    if (tp.requires_grad(ig)) tp.grad_buffer(ig)(0) += (g * z * mask).sum();
                    if (tp.requires_grad(ibt)) tp.grad_buffer(ibt)(0) += (g * mask).sum();
                    if (!tp.requires_grad(ix)) return;
                    Array& gx = tp.grad_buffer(ix);
                    for (Eigen::Index r = 0; r < rows; ++r) {
                      auto m = mask.segment(r * cols, cols);
                      const double count = m.sum();
                      if (count <= 0) continue;
                      auto zr = z.segment(r * cols, cols);
                      Array dz = m * g.segment(r * cols, cols) * gm;
                      const double mean_dz = dz.sum() / count;
                      const double mean_dzz = (dz * zr).sum() / count;
                      gx.segment(r * cols, cols) += m * inv_std(r) * (dz - mean_dz - zr * mean_dzz);
                    }
                  });
}

namespace {
// log(x / m) with m = (x + y) / 2, zero for x = 0. Written without the
// halved sum so a subnormal x cannot produce m = 0.
double js_log_ratio(double x, double y) {
  return x > 0 ? std::numbers::ln2 + std::log(x) - std::log(x + y) : 0.0;
}
}  // namespace

Tensor js_divergence(const Tensor& p, const Tensor& q) {
  Tape& t = tape_of(p, q);
  require(p.shape() == q.shape() && p.rank() == 2, "js_divergence", p.shape(), q.shape());
  const Eigen::Index rows = p.dim(0), cols = p.dim(1);
  Array v(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double acc = 0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double a = p.value()(r * cols + c), b = q.value()(r * cols + c);
      acc += 0.5 * a * js_log_ratio(a, b) + 0.5 * b * js_log_ratio(b, a);
    }
    v(r) = std::clamp(acc, 0.0, std::numbers::ln2);
  }
  const int ip = p.id(), iq = q.id();
  return t.record({static_cast<int>(rows)}, std::move(v), {p, q},
                  [ip, iq, rows, cols](Tape& tp, int o) {
                    const Array& g = tp.grad_of(o);
                    const Array& pv = tp.value_of(ip);
                    const Array& qv = tp.value_of(iq);
                    const bool need_p = tp.requires_grad(ip), need_q = tp.requires_grad(iq);
                    for (Eigen::Index r = 0; r < rows; ++r) {
                      for (Eigen::Index c = 0; c < cols; ++c) {
                        const Eigen::Index k = r * cols + c;
                        if (need_p) tp.grad_buffer(ip)(k) += g(r) * 0.5 * js_log_ratio(pv(k), qv(k));
                        if (need_q) tp.grad_buffer(iq)(k) += g(r) * 0.5 * js_log_ratio(qv(k), pv(k));
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Composites

Array one_hot(const std::vector<int>& labels, int classes) {
  Array out = Array::Zero(static_cast<Eigen::Index>(labels.size()) * classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw std::out_of_range("one_hot: label " + std::to_string(labels[i]) + " out of range");
    }
    out(static_cast<Eigen::Index>(i) * classes + labels[i]) = 1.0;
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  Tape& t = *logits.tape();
  Tensor target = t.constant({n, k}, one_hot(labels, k));
  return scale(sum(mul(log_softmax(logits), target)), -1.0 / n);
}

Tensor kl_softmax(const Tensor& logits_p, const Tensor& logits_q, double tau) {
  require(logits_p.shape() == logits_q.shape() && logits_p.rank() == 2, "kl_softmax",
          logits_p.shape(), logits_q.shape());
  Tensor lp = log_softmax(logits_p, tau);
  Tensor lq = log_softmax(logits_q, tau);
  return sum_axis(mul(exp(lp), sub(lp, lq)), 1);
}

}  // namespace freqdebias::ad
