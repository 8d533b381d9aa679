// include/pmsspeech/autodiff.hpp
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

#ifndef PMSSPEECH_AUTODIFF_HPP_
#define PMSSPEECH_AUTODIFF_HPP_

#include <array>
#include <memory>
#include <vector>

#include "pmsspeech/types.hpp"

namespace pms {

// Reverse-mode tape over dense matrices.  Every value is a rows x cols matrix
// (vectors are 1 x N or N x 1, scalars are 1 x 1).  Nodes are appended in
// forward order, so the insertion order is a topological order and the
// backward pass simply walks it in reverse, accumulating gradients additively
// at fan-out points.
//
// The tape can replay its forward pass (`recompute`) after leaf values have
// been perturbed; the gradient checker uses this for central differences.

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  // Node is exposed so the primitive builders in autodiff.cpp can emit ops;
  // it is not part of the supported surface.
  struct Node {
    int op = 0;
    std::vector<int> inputs;
    Mat value;
    Mat grad;
    // Static attributes captured at emission time.
    Scalar alpha = 0.0;
    int i0 = 0, i1 = 0;
    std::vector<int> idx;
    std::shared_ptr<const BoolMat> mask;
    // Op-specific forward caches (rebuilt on recompute).
    Mat saved_a, saved_b;
  };

  Var input(Mat value);

  const Mat& value(Var v) const { return node(v).value; }
  const Mat& grad(Var v) const;

  // Mutable access to a leaf value; recompute() must be called before the
  // tape is read again.
  Mat& leaf_value(Var v);

  // Runs the backward pass from a 1x1 loss node.  Gradients of all nodes
  // reachable on the tape are populated.
  void backward(Var loss);

  // Re-executes every non-leaf node from current leaf values.
  void recompute();

  int size() const { return static_cast<int>(nodes_.size()); }

  int emit(Node node);
  const Node& node(Var v) const;

 private:
  Node& node_mut(Var v);
  void compute_node(Node* n);
  std::vector<Node> nodes_;
};

// ---- Primitive operations ------------------------------------------------
// Each builder validates input shapes and throws ValidationError with the op
// name and the offending shapes on mismatch.

Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);  // elementwise
Var scale(Tape& t, Var a, Scalar s);
// Adds a 1 x N row vector to every row of an M x N matrix.
Var add_rowwise(Tape& t, Var a, Var row);

// Softmax along the last axis, max-subtracted.  With `allowed` given,
// disallowed entries are excluded from the normalization and produce exact
// zeros; every row must allow at least one position.
Var softmax_rows(Tape& t, Var a);
Var masked_softmax_rows(Tape& t, Var a, std::shared_ptr<const BoolMat> allowed);
Var log_softmax_rows(Tape& t, Var a);

Var log(Tape& t, Var a);  // rejects non-positive entries
Var exp(Tape& t, Var a);
Var gelu(Tape& t, Var a);
Var relu(Tape& t, Var a);

// Row-wise layer normalization with learnable gain/bias (1 x N each).
Var layer_norm_rows(Tape& t, Var a, Var gain, Var bias, Scalar epsilon = 1e-5);

// 1-D strided convolution over a T x Cin sequence.  The kernel is stored as
// Cout x (kernel_size * Cin), matching im2col row layout.  Output is
// T' x Cout with T' = floor((T - kernel_size) / stride) + 1.
Var conv1d(Tape& t, Var x, Var kernel, int kernel_size, int stride);

Var gather_rows(Tape& t, Var a, std::vector<int> rows);
Var slice_cols(Tape& t, Var a, int start, int count);
Var concat_cols(Tape& t, const std::vector<Var>& parts);

// Cosine similarity between every row of X (M x D) and every row of E
// (C x D); result is M x C.  Zero-norm rows are rejected.
Var cosine_rows(Tape& t, Var x, Var e);

// Picks one column per row: result (i, 0) = a(i, cols[i]).
Var pick_per_row(Tape& t, Var a, std::vector<int> cols);

Var sum_all(Tape& t, Var a);

// Replaces the listed rows of `frames` with the (learned) 1 x D embedding;
// all other rows pass through bit-identically.
Var mask_rows(Tape& t, Var frames, Var embedding, std::vector<int> masked);

// CTC loss over per-frame log-probabilities (T x (V+1), blank at column 0).
// Defined in ctc.cpp; declared here because it is a tape primitive.
Var ctc_loss_op(Tape& t, Var log_probs, std::vector<int> labels);

}  // namespace pms

#endif  // PMSSPEECH_AUTODIFF_HPP_
