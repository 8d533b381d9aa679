// tests/test_autodiff.cpp
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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "pmsspeech/autodiff.hpp"
#include "pmsspeech/grad_check.hpp"
#include "pmsspeech/rng.hpp"

using namespace pms;

namespace {

// Contracts the op output against a random weight leaf so that every output
// coordinate contributes a distinct gradient signal.
Var weighted_sum(Tape& t, Var v, Rng& rng) {
  const Mat& val = t.value(v);
  Var w = t.input(rng.uniform_matrix(val.rows(), val.cols(), -1.0, 1.0));
  return sum_all(t, mul(t, v, w));
}

Mat away_from(Rng& rng, Index rows, Index cols, double lo, double hi, double exclusion) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    double x;
    do {
      x = rng.uniform(lo, hi);
    } while (std::abs(x) < exclusion);
    m(i) = x;
  }
  return m;
}

std::string thrown_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("matmul identity passes any matrix through") {
  Rng rng(7);
  Tape t;
  Var eye = t.input(Mat::Identity(2, 2));
  Var a = t.input(rng.uniform_matrix(2, 2, -1.0, 1.0));
  Var y = matmul(t, eye, a);
  CHECK(t.value(y).isApprox(t.value(a), 0.0));
}

TEST_CASE("softmax hand values") {
  Tape t;
  Mat in(1, 2);
  in << 0.0, 0.0;
  Var y = softmax_rows(t, t.input(in));
  CHECK(t.value(y)(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.value(y)(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

  Mat in2(1, 2);
  in2 << std::log(2.0), 0.0;
  Var y2 = softmax_rows(t, t.input(in2));
  CHECK(t.value(y2)(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(t.value(y2)(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    Var y = softmax_rows(t, t.input(rng.uniform_matrix(5, 9, -4.0, 4.0)));
    const Mat& v = t.value(y);
    CHECK((v.array() >= 0.0).all());
    for (Index i = 0; i < v.rows(); ++i)
      CHECK(std::abs(v.row(i).sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("cosine similarity hand cases") {
  Tape t;
  Mat v(1, 3);
  v << 0.3, -0.2, 0.9;
  Var u = t.input(v);
  Var same = cosine_rows(t, u, t.input(v));
  CHECK(t.value(same)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  Var neg = cosine_rows(t, u, t.input((-v).eval()));
  CHECK(t.value(neg)(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));

  Mat e(2, 2);
  e << 0.0, 1.0, 3.0, 0.0;
  Mat q(1, 2);
  q << 1.0, 0.0;
  Tape t2;
  Var y = cosine_rows(t2, t2.input(q), t2.input(e));
  CHECK(t2.value(y)(0, 0) == doctest::Approx(0.0));
  CHECK(t2.value(y)(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("cosine similarity rejects zero-norm rows") {
  Tape t;
  Var u = t.input(Mat::Zero(1, 3));
  Var e = t.input(Mat::Ones(2, 3));
  CHECK_THROWS_AS(cosine_rows(t, u, e), ValidationError);
}

TEST_CASE("grad_check on sum of squares") {
  Tape t;
  Mat x(1, 2);
  x << 1.0, 2.0;
  Var point = t.input(x);
  Var loss = sum_all(t, mul(t, point, point));
  GradCheckReport rep = grad_check(&t, loss, {point}, 1e-4);
  t.backward(loss);
  CHECK(t.grad(point)(0, 0) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(t.grad(point)(0, 1) == doctest::Approx(4.0).epsilon(1e-10));
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("grad_check rejects bad epsilon") {
  Tape t;
  Var x = t.input(Mat::Ones(1, 1));
  Var loss = sum_all(t, x);
  CHECK_THROWS_AS(grad_check(&t, loss, {x}, 0.0), ValidationError);
  CHECK_THROWS_AS(grad_check(&t, loss, {x}, 0.1), ValidationError);
}

TEST_CASE("fan-out accumulates both branch gradients") {
  Tape t;
  Mat x(1, 3);
  x << 0.5, -1.0, 2.0;
  Var v = t.input(x);
  // loss = sum(v + v) => dloss/dv = 2 everywhere.
  Var loss = sum_all(t, add(t, v, v));
  t.backward(loss);
  CHECK(t.grad(v).isApproxToConstant(2.0, 1e-15));
}

TEST_CASE("replaying the tape is bit-identical") {
  Rng rng(23);
  Tape t;
  Var a = t.input(rng.uniform_matrix(4, 5, -1.0, 1.0));
  Var b = t.input(rng.uniform_matrix(5, 3, -1.0, 1.0));
  Var g = t.input(rng.uniform_matrix(1, 3, 0.5, 1.5));
  Var bias = t.input(rng.uniform_matrix(1, 3, -0.5, 0.5));
  Var y = layer_norm_rows(t, gelu(t, matmul(t, a, b)), g, bias);
  Var loss = sum_all(t, softmax_rows(t, y));
  const Mat before_y = t.value(y);
  const Mat before_loss = t.value(loss);
  t.recompute();
  CHECK(std::memcmp(before_y.data(), t.value(y).data(),
                    sizeof(Scalar) * static_cast<std::size_t>(before_y.size())) == 0);
  CHECK(before_loss(0, 0) == t.value(loss)(0, 0));
}

TEST_CASE("shape mismatch diagnostics name the op and shapes") {
  Tape t;
  Var a = t.input(Mat::Zero(2, 3));
  Var b = t.input(Mat::Zero(4, 5));
  const std::string msg = thrown_message([&] { matmul(t, a, b); });
  CHECK(msg.find("matmul") != std::string::npos);
  CHECK(msg.find("2x3") != std::string::npos);
  CHECK(msg.find("4x5") != std::string::npos);
}

TEST_CASE("masked softmax zeroes disallowed positions and needs one allowed per row") {
  Tape t;
  Mat in(2, 3);
  in << 1.0, 2.0, 3.0, -1.0, 0.0, 1.0;
  auto mask = std::make_shared<BoolMat>(2, 3);
  mask->setConstant(true);
  (*mask)(0, 2) = false;
  Var y = masked_softmax_rows(t, t.input(in), mask);
  CHECK(t.value(y)(0, 2) == 0.0);
  CHECK(std::abs(t.value(y).row(0).sum() - 1.0) < 1e-12);

  auto empty_row = std::make_shared<BoolMat>(1, 2);
  empty_row->setConstant(false);
  Tape t2;
  CHECK_THROWS_AS(masked_softmax_rows(t2, t2.input(Mat::Zero(1, 2)), empty_row),
                  ValidationError);
}

TEST_CASE("masked softmax with full mask is bit-identical to plain softmax") {
  Rng rng(101);
  Tape t;
  Mat in = rng.uniform_matrix(6, 7, -3.0, 3.0);
  Var plain = softmax_rows(t, t.input(in));
  auto full = std::make_shared<BoolMat>(6, 7);
  full->setConstant(true);
  Var masked = masked_softmax_rows(t, t.input(in), full);
  CHECK(std::memcmp(t.value(plain).data(), t.value(masked).data(),
                    sizeof(Scalar) * 42) == 0);
}

TEST_CASE("per-primitive gradients match central finite differences") {
  Rng rng(31);
  const double tol = 1e-4;
  const double eps = 1e-4;

  auto check = [&](const char* name, Tape& t, Var out, std::vector<Var> wrt) {
    Var loss = weighted_sum(t, out, rng);
    GradCheckReport rep = grad_check(&t, loss, wrt, eps);
    INFO(name << " max rel err " << rep.max_rel_err);
    CHECK(rep.max_rel_err < tol);
  };

  SUBCASE("matmul") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(3, 4, -1.0, 1.0));
    Var b = t.input(rng.uniform_matrix(4, 2, -1.0, 1.0));
    check("matmul", t, matmul(t, a, b), {a, b});
  }
  SUBCASE("transpose") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(3, 4, -1.0, 1.0));
    check("transpose", t, transpose(t, a), {a});
  }
  SUBCASE("add sub mul scale") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(3, 3, -1.0, 1.0));
    Var b = t.input(rng.uniform_matrix(3, 3, -1.0, 1.0));
    Var y = scale(t, mul(t, sub(t, add(t, a, b), b), a), 0.7);
    check("add/sub/mul/scale", t, y, {a, b});
  }
  SUBCASE("add_rowwise") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(4, 3, -1.0, 1.0));
    Var r = t.input(rng.uniform_matrix(1, 3, -1.0, 1.0));
    check("add_rowwise", t, add_rowwise(t, a, r), {a, r});
  }
  SUBCASE("softmax") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(4, 5, -1.0, 1.0));
    check("softmax", t, softmax_rows(t, a), {a});
  }
  SUBCASE("masked softmax") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(4, 5, -1.0, 1.0));
    auto mask = std::make_shared<BoolMat>(4, 5);
    for (Index i = 0; i < mask->rows(); ++i)
      for (Index j = 0; j < mask->cols(); ++j) (*mask)(i, j) = rng.uniform() < 0.6;
    for (Index i = 0; i < mask->rows(); ++i) (*mask)(i, i) = true;
    check("masked softmax", t, masked_softmax_rows(t, a, mask), {a});
  }
  SUBCASE("log_softmax") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(4, 5, -1.0, 1.0));
    check("log_softmax", t, log_softmax_rows(t, a), {a});
  }
  SUBCASE("log") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(3, 4, 0.5, 1.5));
    check("log", t, log(t, a), {a});
  }
  SUBCASE("exp") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(3, 4, -1.0, 1.0));
    check("exp", t, exp(t, a), {a});
  }
  SUBCASE("gelu") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(3, 4, -1.0, 1.0));
    check("gelu", t, gelu(t, a), {a});
  }
  SUBCASE("relu") {
    Tape t;
    Var a = t.input(away_from(rng, 3, 4, -1.0, 1.0, 0.01));
    check("relu", t, relu(t, a), {a});
  }
  SUBCASE("layer_norm") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(4, 6, -1.0, 1.0));
    Var g = t.input(rng.uniform_matrix(1, 6, 0.5, 1.5));
    Var b = t.input(rng.uniform_matrix(1, 6, -0.5, 0.5));
    check("layer_norm", t, layer_norm_rows(t, a, g, b), {a, g, b});
  }
  SUBCASE("conv1d") {
    Tape t;
    Var x = t.input(rng.uniform_matrix(9, 2, -1.0, 1.0));
    Var w = t.input(rng.uniform_matrix(4, 6, -1.0, 1.0));  // k=3, cin=2, cout=4
    check("conv1d", t, conv1d(t, x, w, 3, 2), {x, w});
  }
  SUBCASE("gather_rows") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(5, 3, -1.0, 1.0));
    check("gather_rows", t, gather_rows(t, a, {4, 0, 0, 2}), {a});
  }
  SUBCASE("slice and concat") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(3, 6, -1.0, 1.0));
    Var left = slice_cols(t, a, 0, 2);
    Var right = slice_cols(t, a, 2, 4);
    check("slice/concat", t, concat_cols(t, {right, left}), {a});
  }
  SUBCASE("cosine_rows") {
    Tape t;
    Var x = t.input(away_from(rng, 3, 5, -1.0, 1.0, 0.05));
    Var e = t.input(away_from(rng, 4, 5, -1.0, 1.0, 0.05));
    check("cosine_rows", t, cosine_rows(t, x, e), {x, e});
  }
  SUBCASE("pick_per_row") {
    Tape t;
    Var a = t.input(rng.uniform_matrix(4, 3, -1.0, 1.0));
    check("pick_per_row", t, pick_per_row(t, a, {2, 0, 1, 1}), {a});
  }
  SUBCASE("mask_rows") {
    Tape t;
    Var f = t.input(rng.uniform_matrix(6, 4, -1.0, 1.0));
    Var emb = t.input(rng.uniform_matrix(1, 4, -1.0, 1.0));
    check("mask_rows", t, mask_rows(t, f, emb, {1, 3, 4}), {f, emb});
  }
  SUBCASE("ctc") {
    Tape t;
    Var logits = t.input(rng.uniform_matrix(4, 4, -1.0, 1.0));
    Var lp = log_softmax_rows(t, logits);
    Var loss = ctc_loss_op(t, lp, {1, 3});
    GradCheckReport rep = grad_check(&t, loss, {logits}, eps);
    INFO("ctc max rel err " << rep.max_rel_err);
    CHECK(rep.max_rel_err < tol);
  }
}

TEST_CASE("mask_rows leaves unmasked rows bit-identical") {
  Rng rng(77);
  Tape t;
  Mat frames = rng.uniform_matrix(8, 3, -1.0, 1.0);
  Var f = t.input(frames);
  Var emb = t.input(rng.uniform_matrix(1, 3, -1.0, 1.0));
  Var y = mask_rows(t, f, emb, {2, 5});
  for (Index r = 0; r < 8; ++r) {
    if (r == 2 || r == 5) {
      CHECK(t.value(y).row(r) == t.value(emb).row(0));
    } else {
      CHECK(std::memcmp(t.value(y).row(r).data(), frames.row(r).data(),
                        3 * sizeof(Scalar)) == 0);
    }
  }
}
