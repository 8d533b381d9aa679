// src/autodiff.cpp
//
// Copyright 2026  The pmsspeech Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "pmsspeech/autodiff.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "pmsspeech/ctc.hpp"

namespace pms {

namespace {

enum Op : int {
  kInput,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRowwise,
  kSoftmax,
  kLogSoftmax,
  kLog,
  kExp,
  kGelu,
  kRelu,
  kLayerNorm,
  kConv1d,
  kGatherRows,
  kSliceCols,
  kConcatCols,
  kCosineRows,
  kPickPerRow,
  kSumAll,
  kMaskRows,
  kCtc
};

[[noreturn]] void shape_error(const char* op, const Mat& a, const Mat& b) {
  throw ValidationError(std::string(op) + ": incompatible shapes " + shape_string(a) +
                        " and " + shape_string(b));
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Var Tape::input(Mat value) {
  Node n;
  n.op = kInput;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= size()) throw ValidationError("Tape: invalid var handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::node_mut(Var v) {
  if (!v.valid() || v.id >= size()) throw ValidationError("Tape: invalid var handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Mat& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) throw ValidationError("Tape::grad: backward has not been run");
  return n.grad;
}

Mat& Tape::leaf_value(Var v) {
  Node& n = node_mut(v);
  if (n.op != kInput) throw ValidationError("Tape::leaf_value: not a leaf node");
  return n.value;
}

namespace {

// Shared by the plain and masked softmax paths; `allowed == nullptr` means
// every position participates.
void softmax_forward(const Mat& a, const BoolMat* allowed, Mat* out) {
  out->resize(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < a.cols(); ++j)
      if ((!allowed || (*allowed)(i, j)) && a(i, j) > mx) mx = a(i, j);
    if (mx == -std::numeric_limits<double>::infinity())
      throw ValidationError("softmax_rows: row " + std::to_string(i) +
                            " has no allowed positions");
    double denom = 0.0;
    for (Index j = 0; j < a.cols(); ++j) {
      if (!allowed || (*allowed)(i, j)) {
        const double e = std::exp(a(i, j) - mx);
        (*out)(i, j) = e;
        denom += e;
      } else {
        (*out)(i, j) = 0.0;
      }
    }
    for (Index j = 0; j < a.cols(); ++j) (*out)(i, j) /= denom;
  }
}

}  // namespace

void Tape::recompute() {
  for (Node& n : nodes_) {
    if (n.op == kInput) continue;
    compute_node(&n);
  }
}

void Tape::compute_node(Node* np) {
  Node& n = *np;
  auto in = [&](int k) -> const Mat& { return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].value; };
  switch (n.op) {
    case kInput:
      break;
    case kMatmul:
      n.value.noalias() = in(0) * in(1);
      break;
    case kTranspose:
      n.value = in(0).transpose();
      break;
    case kAdd:
      n.value = in(0) + in(1);
      break;
    case kSub:
      n.value = in(0) - in(1);
      break;
    case kMul:
      n.value = in(0).cwiseProduct(in(1));
      break;
    case kScale:
      n.value = n.alpha * in(0);
      break;
    case kAddRowwise:
      n.value = in(0).rowwise() + in(1).row(0);
      break;
    case kSoftmax:
      softmax_forward(in(0), n.mask.get(), &n.value);
      break;
    case kLogSoftmax: {
      const Mat& a = in(0);
      n.value.resize(a.rows(), a.cols());
      for (Index i = 0; i < a.rows(); ++i) {
        const double mx = a.row(i).maxCoeff();
        double s = 0.0;
        for (Index j = 0; j < a.cols(); ++j) s += std::exp(a(i, j) - mx);
        const double lse = mx + std::log(s);
        for (Index j = 0; j < a.cols(); ++j) n.value(i, j) = a(i, j) - lse;
      }
      break;
    }
    case kLog: {
      const Mat& a = in(0);
      if ((a.array() <= 0.0).any())
        throw ValidationError("log: input has non-positive entries");
      n.value = a.array().log().matrix();
      break;
    }
    case kExp:
      n.value = in(0).array().exp().matrix();
      break;
    case kGelu: {
      const Mat& a = in(0);
      n.value.resize(a.rows(), a.cols());
      for (Index i = 0; i < a.size(); ++i) {
        const double x = a(i);
        n.value(i) = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
      }
      break;
    }
    case kRelu:
      n.value = in(0).cwiseMax(0.0);
      break;
    case kLayerNorm: {
      const Mat& a = in(0);
      const Mat& gain = in(1);
      const Mat& bias = in(2);
      const Index cols = a.cols();
      n.value.resize(a.rows(), cols);
      n.saved_a.resize(a.rows(), cols);  // xhat
      n.saved_b.resize(a.rows(), 1);     // inv_std
      for (Index i = 0; i < a.rows(); ++i) {
        const double mean = a.row(i).mean();
        double var = 0.0;
        for (Index j = 0; j < cols; ++j) {
          const double d = a(i, j) - mean;
          var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv_std = 1.0 / std::sqrt(var + n.alpha);
        n.saved_b(i, 0) = inv_std;
        for (Index j = 0; j < cols; ++j) {
          const double xh = (a(i, j) - mean) * inv_std;
          n.saved_a(i, j) = xh;
          n.value(i, j) = xh * gain(0, j) + bias(0, j);
        }
      }
      break;
    }
    case kConv1d: {
      const Mat& x = in(0);
      const Mat& w = in(1);
      const int k = n.i0;
      const int stride = n.i1;
      const Index cin = x.cols();
      const Index t_out = (x.rows() - k) / stride + 1;
      Mat& xcol = n.saved_a;
      xcol.resize(t_out, static_cast<Index>(k) * cin);
      for (Index t = 0; t < t_out; ++t)
        for (int j = 0; j < k; ++j)
          xcol.block(t, static_cast<Index>(j) * cin, 1, cin) =
              x.block(t * stride + j, 0, 1, cin);
      n.value.noalias() = xcol * w.transpose();
      break;
    }
    case kGatherRows: {
      const Mat& a = in(0);
      n.value.resize(static_cast<Index>(n.idx.size()), a.cols());
      for (std::size_t i = 0; i < n.idx.size(); ++i)
        n.value.row(static_cast<Index>(i)) = a.row(n.idx[i]);
      break;
    }
    case kSliceCols:
      n.value = in(0).middleCols(n.i0, n.i1);
      break;
    case kConcatCols: {
      Index cols = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) cols += in(static_cast<int>(k)).cols();
      n.value.resize(in(0).rows(), cols);
      Index off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Mat& part = in(static_cast<int>(k));
        n.value.middleCols(off, part.cols()) = part;
        off += part.cols();
      }
      break;
    }
    case kCosineRows: {
      const Mat& x = in(0);
      const Mat& e = in(1);
      Mat& inv_nx = n.saved_a;
      Mat& inv_ne = n.saved_b;
      inv_nx.resize(x.rows(), 1);
      inv_ne.resize(e.rows(), 1);
      for (Index i = 0; i < x.rows(); ++i) {
        const double norm = x.row(i).norm();
        if (norm < 1e-15)
          throw ValidationError("cosine_rows: zero-norm row " + std::to_string(i) +
                                " in left operand (similarity undefined)");
        inv_nx(i, 0) = 1.0 / norm;
      }
      for (Index c = 0; c < e.rows(); ++c) {
        const double norm = e.row(c).norm();
        if (norm < 1e-15)
          throw ValidationError("cosine_rows: zero-norm row " + std::to_string(c) +
                                " in right operand (similarity undefined)");
        inv_ne(c, 0) = 1.0 / norm;
      }
      n.value.noalias() = x * e.transpose();
      for (Index i = 0; i < n.value.rows(); ++i)
        for (Index c = 0; c < n.value.cols(); ++c)
          n.value(i, c) *= inv_nx(i, 0) * inv_ne(c, 0);
      break;
    }
    case kPickPerRow: {
      const Mat& a = in(0);
      n.value.resize(a.rows(), 1);
      for (Index i = 0; i < a.rows(); ++i) n.value(i, 0) = a(i, n.idx[static_cast<std::size_t>(i)]);
      break;
    }
    case kSumAll:
      n.value.resize(1, 1);
      n.value(0, 0) = in(0).sum();
      break;
    case kMaskRows: {
      n.value = in(0);
      const Mat& emb = in(1);
      for (int r : n.idx) n.value.row(r) = emb.row(0);
      break;
    }
    case kCtc: {
      const CtcForwardResult res = ctc_forward_backward(in(0), n.idx);
      n.value.resize(1, 1);
      n.value(0, 0) = res.loss;
      n.saved_a = res.grad_log_probs;
      break;
    }
    default:
      throw ValidationError("Tape: unknown op kind");
  }
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.rows() != 1 || ln.value.cols() != 1)
    throw ValidationError("Tape::backward: loss must be 1x1, got " + shape_string(ln.value));
  const int last = loss.id;
  for (int i = 0; i <= last; ++i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  nodes_[static_cast<std::size_t>(last)].grad(0, 0) = 1.0;

  for (int id = last; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == kInput) continue;
    const Mat& g = n.grad;
    auto in = [&](int k) -> Node& {
      return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])];
    };
    switch (n.op) {
      case kMatmul:
        in(0).grad.noalias() += g * in(1).value.transpose();
        in(1).grad.noalias() += in(0).value.transpose() * g;
        break;
      case kTranspose:
        in(0).grad += g.transpose();
        break;
      case kAdd:
        in(0).grad += g;
        in(1).grad += g;
        break;
      case kSub:
        in(0).grad += g;
        in(1).grad -= g;
        break;
      case kMul:
        in(0).grad += g.cwiseProduct(in(1).value);
        in(1).grad += g.cwiseProduct(in(0).value);
        break;
      case kScale:
        in(0).grad += n.alpha * g;
        break;
      case kAddRowwise:
        in(0).grad += g;
        in(1).grad.row(0) += g.colwise().sum();
        break;
      case kSoftmax: {
        const Mat& y = n.value;
        Mat& ga = in(0).grad;
        for (Index i = 0; i < y.rows(); ++i) {
          const double s = g.row(i).dot(y.row(i));
          ga.row(i) += (y.row(i).array() * (g.row(i).array() - s)).matrix();
        }
        break;
      }
      case kLogSoftmax: {
        const Mat& y = n.value;
        Mat& ga = in(0).grad;
        for (Index i = 0; i < y.rows(); ++i) {
          const double s = g.row(i).sum();
          ga.row(i) += g.row(i) - s * y.row(i).array().exp().matrix();
        }
        break;
      }
      case kLog:
        in(0).grad += g.cwiseQuotient(in(0).value);
        break;
      case kExp:
        in(0).grad += g.cwiseProduct(n.value);
        break;
      case kGelu: {
        const Mat& a = in(0).value;
        Mat& ga = in(0).grad;
        for (Index i = 0; i < a.size(); ++i) {
          const double x = a(i);
          const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
          ga(i) += g(i) * (cdf + x * pdf);
        }
        break;
      }
      case kRelu: {
        const Mat& a = in(0).value;
        Mat& ga = in(0).grad;
        for (Index i = 0; i < a.size(); ++i)
          if (a(i) > 0.0) ga(i) += g(i);
        break;
      }
      case kLayerNorm: {
        const Mat& xhat = n.saved_a;
        const Mat& inv_std = n.saved_b;
        const Mat& gain = in(1).value;
        const Index cols = xhat.cols();
        in(2).grad.row(0) += g.colwise().sum();
        in(1).grad.row(0) += g.cwiseProduct(xhat).colwise().sum();
        Mat& gx = in(0).grad;
        for (Index i = 0; i < xhat.rows(); ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (Index j = 0; j < cols; ++j) {
            const double dxh = g(i, j) * gain(0, j);
            m1 += dxh;
            m2 += dxh * xhat(i, j);
          }
          m1 /= static_cast<double>(cols);
          m2 /= static_cast<double>(cols);
          for (Index j = 0; j < cols; ++j) {
            const double dxh = g(i, j) * gain(0, j);
            gx(i, j) += inv_std(i, 0) * (dxh - m1 - xhat(i, j) * m2);
          }
        }
        break;
      }
      case kConv1d: {
        const Mat& xcol = n.saved_a;
        const Mat& w = in(1).value;
        const int k = n.i0;
        const int stride = n.i1;
        const Index cin = in(0).value.cols();
        in(1).grad.noalias() += g.transpose() * xcol;
        const Mat dxcol = g * w;
        Mat& gx = in(0).grad;
        for (Index t = 0; t < dxcol.rows(); ++t)
          for (int j = 0; j < k; ++j)
            gx.block(t * stride + j, 0, 1, cin) +=
                dxcol.block(t, static_cast<Index>(j) * cin, 1, cin);
        break;
      }
      case kGatherRows: {
        Mat& ga = in(0).grad;
        for (std::size_t i = 0; i < n.idx.size(); ++i)
          ga.row(n.idx[i]) += g.row(static_cast<Index>(i));
        break;
      }
      case kSliceCols:
        in(0).grad.middleCols(n.i0, n.i1) += g;
        break;
      case kConcatCols: {
        Index off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          Node& part = in(static_cast<int>(k));
          part.grad += g.middleCols(off, part.value.cols());
          off += part.value.cols();
        }
        break;
      }
      case kCosineRows: {
        const Mat& x = in(0).value;
        const Mat& e = in(1).value;
        const Mat& y = n.value;
        const Mat& inv_nx = n.saved_a;
        const Mat& inv_ne = n.saved_b;
        Mat& gx = in(0).grad;
        Mat& ge = in(1).grad;
        // dX = diag(inv_nx) * (G .* inv_ne^T) * E  -  diag(rowdot(G,Y) .* inv_nx^2) * X
        Mat gscaled = g;
        for (Index c = 0; c < gscaled.cols(); ++c) gscaled.col(c) *= inv_ne(c, 0);
        Mat tmp = gscaled * e;
        for (Index i = 0; i < x.rows(); ++i) {
          const double rd = g.row(i).dot(y.row(i));
          gx.row(i) += inv_nx(i, 0) * tmp.row(i) -
                       (rd * inv_nx(i, 0) * inv_nx(i, 0)) * x.row(i);
        }
        // dE = diag(inv_ne) * (G^T .* inv_nx^T) * X  -  diag(coldot(G,Y) .* inv_ne^2) * E
        Mat grow = g;
        for (Index i = 0; i < grow.rows(); ++i) grow.row(i) *= inv_nx(i, 0);
        Mat tmpe = grow.transpose() * x;
        for (Index c = 0; c < e.rows(); ++c) {
          const double cd = g.col(c).dot(y.col(c));
          ge.row(c) += inv_ne(c, 0) * tmpe.row(c) -
                       (cd * inv_ne(c, 0) * inv_ne(c, 0)) * e.row(c);
        }
        break;
      }
      case kPickPerRow: {
        Mat& ga = in(0).grad;
        for (Index i = 0; i < n.value.rows(); ++i)
          ga(i, n.idx[static_cast<std::size_t>(i)]) += g(i, 0);
        break;
      }
      case kSumAll:
        in(0).grad.array() += g(0, 0);
        break;
      case kMaskRows: {
        Mat masked_g = g;
        for (int r : n.idx) {
          in(1).grad.row(0) += g.row(r);
          masked_g.row(r).setZero();
        }
        in(0).grad += masked_g;
        break;
      }
      case kCtc:
        in(0).grad += g(0, 0) * n.saved_a;
        break;
      default:
        throw ValidationError("Tape: unknown op kind in backward");
    }
  }
}

int Tape::emit(Node node) {
  compute_node(&node);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

// ---- Builders --------------------------------------------------------------

namespace {

Tape::Node make_node(int op, std::initializer_list<Var> inputs) {
  Tape::Node n;
  n.op = op;
  for (Var v : inputs) {
    if (!v.valid()) throw ValidationError("autodiff: invalid var argument");
    n.inputs.push_back(v.id);
  }
  return n;
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  return Var{t.emit(make_node(kMatmul, {a, b}))};
}

Var transpose(Tape& t, Var a) { return Var{t.emit(make_node(kTranspose, {a}))}; }

Var add(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("add", av, bv);
  return Var{t.emit(make_node(kAdd, {a, b}))};
}

Var sub(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("sub", av, bv);
  return Var{t.emit(make_node(kSub, {a, b}))};
}

Var mul(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("mul", av, bv);
  return Var{t.emit(make_node(kMul, {a, b}))};
}

Var scale(Tape& t, Var a, Scalar s) {
  Tape::Node n = make_node(kScale, {a});
  n.alpha = s;
  return Var{t.emit(std::move(n))};
}

Var add_rowwise(Tape& t, Var a, Var row) {
  const Mat& av = t.value(a);
  const Mat& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("add_rowwise", av, rv);
  return Var{t.emit(make_node(kAddRowwise, {a, row}))};
}

Var softmax_rows(Tape& t, Var a) { return Var{t.emit(make_node(kSoftmax, {a}))}; }

Var masked_softmax_rows(Tape& t, Var a, std::shared_ptr<const BoolMat> allowed) {
  const Mat& av = t.value(a);
  if (!allowed) throw ValidationError("masked_softmax_rows: null mask");
  if (allowed->rows() != av.rows() || allowed->cols() != av.cols())
    throw ValidationError("masked_softmax_rows: mask shape " +
                          std::to_string(allowed->rows()) + "x" +
                          std::to_string(allowed->cols()) + " does not match input " +
                          shape_string(av));
  Tape::Node n = make_node(kSoftmax, {a});
  n.mask = std::move(allowed);
  return Var{t.emit(std::move(n))};
}

Var log_softmax_rows(Tape& t, Var a) { return Var{t.emit(make_node(kLogSoftmax, {a}))}; }

Var log(Tape& t, Var a) { return Var{t.emit(make_node(kLog, {a}))}; }
Var exp(Tape& t, Var a) { return Var{t.emit(make_node(kExp, {a}))}; }
Var gelu(Tape& t, Var a) { return Var{t.emit(make_node(kGelu, {a}))}; }
Var relu(Tape& t, Var a) { return Var{t.emit(make_node(kRelu, {a}))}; }

Var layer_norm_rows(Tape& t, Var a, Var gain, Var bias, Scalar epsilon) {
  const Mat& av = t.value(a);
  const Mat& gv = t.value(gain);
  const Mat& bv = t.value(bias);
  if (gv.rows() != 1 || gv.cols() != av.cols()) shape_error("layer_norm_rows(gain)", av, gv);
  if (bv.rows() != 1 || bv.cols() != av.cols()) shape_error("layer_norm_rows(bias)", av, bv);
  if (!(epsilon > 0.0)) throw ValidationError("layer_norm_rows: epsilon must be positive");
  Tape::Node n = make_node(kLayerNorm, {a, gain, bias});
  n.alpha = epsilon;
  return Var{t.emit(std::move(n))};
}

Var conv1d(Tape& t, Var x, Var kernel, int kernel_size, int stride) {
  const Mat& xv = t.value(x);
  const Mat& kv = t.value(kernel);
  if (kernel_size < 1 || stride < 1)
    throw ValidationError("conv1d: kernel_size and stride must be positive");
  if (kv.cols() != static_cast<Index>(kernel_size) * xv.cols()) shape_error("conv1d", xv, kv);
  if (xv.rows() < kernel_size)
    throw ValidationError("conv1d: input has " + std::to_string(xv.rows()) +
                          " frames but the kernel needs at least " +
                          std::to_string(kernel_size));
  Tape::Node n = make_node(kConv1d, {x, kernel});
  n.i0 = kernel_size;
  n.i1 = stride;
  return Var{t.emit(std::move(n))};
}

Var gather_rows(Tape& t, Var a, std::vector<int> rows) {
  const Mat& av = t.value(a);
  if (rows.empty()) throw ValidationError("gather_rows: empty row list");
  for (int r : rows)
    if (r < 0 || r >= av.rows())
      throw ValidationError("gather_rows: row index " + std::to_string(r) +
                            " out of range for " + shape_string(av));
  Tape::Node n = make_node(kGatherRows, {a});
  n.idx = std::move(rows);
  return Var{t.emit(std::move(n))};
}

Var slice_cols(Tape& t, Var a, int start, int count) {
  const Mat& av = t.value(a);
  if (start < 0 || count < 1 || start + count > av.cols())
    throw ValidationError("slice_cols: slice [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") out of range for " +
                          shape_string(av));
  Tape::Node n = make_node(kSliceCols, {a});
  n.i0 = start;
  n.i1 = count;
  return Var{t.emit(std::move(n))};
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  Tape::Node n;
  n.op = kConcatCols;
  const Index rows = t.value(parts[0]).rows();
  for (Var v : parts) {
    if (t.value(v).rows() != rows) shape_error("concat_cols", t.value(parts[0]), t.value(v));
    n.inputs.push_back(v.id);
  }
  return Var{t.emit(std::move(n))};
}

Var cosine_rows(Tape& t, Var x, Var e) {
  const Mat& xv = t.value(x);
  const Mat& ev = t.value(e);
  if (xv.cols() != ev.cols()) shape_error("cosine_rows", xv, ev);
  return Var{t.emit(make_node(kCosineRows, {x, e}))};
}

Var pick_per_row(Tape& t, Var a, std::vector<int> cols) {
  const Mat& av = t.value(a);
  if (static_cast<Index>(cols.size()) != av.rows())
    throw ValidationError("pick_per_row: need one column per row, got " +
                          std::to_string(cols.size()) + " for " + shape_string(av));
  for (int c : cols)
    if (c < 0 || c >= av.cols())
      throw ValidationError("pick_per_row: column index " + std::to_string(c) +
                            " out of range for " + shape_string(av));
  Tape::Node n = make_node(kPickPerRow, {a});
  n.idx = std::move(cols);
  return Var{t.emit(std::move(n))};
}

Var sum_all(Tape& t, Var a) { return Var{t.emit(make_node(kSumAll, {a}))}; }

Var mask_rows(Tape& t, Var frames, Var embedding, std::vector<int> masked) {
  const Mat& fv = t.value(frames);
  const Mat& ev = t.value(embedding);
  if (ev.rows() != 1 || ev.cols() != fv.cols()) shape_error("mask_rows", fv, ev);
  for (int r : masked)
    if (r < 0 || r >= fv.rows())
      throw ValidationError("mask_rows: masked index " + std::to_string(r) +
                            " out of range for sequence of length " +
                            std::to_string(fv.rows()));
  Tape::Node n = make_node(kMaskRows, {frames, embedding});
  n.idx = std::move(masked);
  return Var{t.emit(std::move(n))};
}

Var ctc_loss_op(Tape& t, Var log_probs, std::vector<int> labels) {
  const Mat& lp = t.value(log_probs);
  validate_ctc_instance(lp, labels);  // throws ValidationError on bad instances
  Tape::Node n = make_node(kCtc, {log_probs});
  n.idx = std::move(labels);
  return Var{t.emit(std::move(n))};
}

}  // namespace pms
