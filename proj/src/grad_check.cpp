// src/grad_check.cpp
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

#include "pmsspeech/grad_check.hpp"

#include <cmath>

namespace pms {

GradCheckReport grad_check(Tape* tape, Var loss, const std::vector<Var>& wrt,
                           double epsilon) {
  if (!(epsilon > 0.0) || epsilon > 1e-2)
    throw ValidationError("grad_check: epsilon must lie in (0, 1e-2]");
  if (!std::isfinite(tape->value(loss)(0, 0)))
    throw ValidationError("grad_check: non-finite function value at the base point");

  tape->backward(loss);
  std::vector<Mat> analytic;
  analytic.reserve(wrt.size());
  for (Var v : wrt) analytic.push_back(tape->grad(v));

  GradCheckReport report;
  for (std::size_t vi = 0; vi < wrt.size(); ++vi) {
    Mat& leaf = tape->leaf_value(wrt[vi]);
    for (Index r = 0; r < leaf.rows(); ++r) {
      for (Index c = 0; c < leaf.cols(); ++c) {
        const double orig = leaf(r, c);
        leaf(r, c) = orig + epsilon;
        tape->recompute();
        const double f_plus = tape->value(loss)(0, 0);
        leaf(r, c) = orig - epsilon;
        tape->recompute();
        const double f_minus = tape->value(loss)(0, 0);
        leaf(r, c) = orig;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
          throw ValidationError("grad_check: non-finite function value at a probe point");
        const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
        const double a = analytic[vi](r, c);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double rel = std::abs(a - numeric) / denom;
        ++report.coords_checked;
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst_var = static_cast<int>(vi);
          report.worst_row = r;
          report.worst_col = c;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  tape->recompute();
  return report;
}

}  // namespace pms
