#pragma once

// Central finite differences: the independent gradient oracle for the
// autodiff suite. Test-side only; never touches the backward path it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "minnet/tensor.hpp"

namespace gradcheck {

// Runs the loss once under a tape to get autodiff gradients, then perturbs
// every element of every listed input and compares against central
// differences. Returns the worst per-tensor relative error
//   ||g_ad - g_fd|| / (||g_ad|| + ||g_fd||).
// make_loss must be a pure function of the input tensor values and return
// a scalar tensor.
template <class MakeLoss>
double max_rel_error(std::vector<minnet::TensorT<double>*> inputs, MakeLoss make_loss,
                     double h = 1e-5) {
  std::vector<std::vector<double>> autodiff;
  {
    minnet::TapeT<double> tape;
    minnet::TapeScope<double> scope(tape);
    for (auto* t : inputs) {
      t->set_requires_grad(true);
      t->zero_grad();
    }
    minnet::TensorT<double> loss = make_loss();
    tape.backward(loss);
    for (auto* t : inputs) autodiff.push_back(t->grad());
  }

  double worst = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti]->values();
    double diff_sq = 0.0, ad_sq = 0.0, fd_sq = 0.0;
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double lp = make_loss().values()[0];
      vals[i] = orig - h;
      const double lm = make_loss().values()[0];
      vals[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double d = autodiff[ti][i] - fd;
      diff_sq += d * d;
      ad_sq += autodiff[ti][i] * autodiff[ti][i];
      fd_sq += fd * fd;
    }
    const double denom = std::sqrt(ad_sq) + std::sqrt(fd_sq);
    worst = std::max(worst, denom < 1e-12 ? 0.0 : std::sqrt(diff_sq) / denom);
  }
  return worst;
}

}  // namespace gradcheck
