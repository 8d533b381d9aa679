// include/pmsspeech/grad_check.hpp
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

#ifndef PMSSPEECH_GRAD_CHECK_HPP_
#define PMSSPEECH_GRAD_CHECK_HPP_

#include <cstddef>
#include <vector>

#include "pmsspeech/autodiff.hpp"

namespace pms {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_var = -1;          // position within the wrt list
  Index worst_row = -1, worst_col = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Compares tape gradients of a 1x1 loss against central finite differences
// over every coordinate of the listed leaf variables.  Relative error uses
// denominator max(|analytic|, |numeric|, 1e-8).  The tape is restored to its
// unperturbed state before returning.  Throws ValidationError when epsilon is
// outside (0, 1e-2] or the function value is non-finite at any probe.
GradCheckReport grad_check(Tape* tape, Var loss, const std::vector<Var>& wrt,
                           double epsilon = 1e-4);

}  // namespace pms

#endif  // PMSSPEECH_GRAD_CHECK_HPP_
