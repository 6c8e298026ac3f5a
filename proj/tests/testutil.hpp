#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pgr/ops.hpp"
#include "pgr/random.hpp"
#include "pgr/tensor.hpp"

namespace testutil {

using pgr::real;
using pgr::Tensor;

// Relative error with an absolute floor so near-zero pairs compare sanely.
inline real rel_err(real a, real b, real floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Tensor random_tensor(pgr::Shape shape, pgr::Rng& rng, real scale = 1.0,
                            bool requires_grad = false) {
  int n = pgr::shape_numel(shape);
  std::vector<real> data(static_cast<std::size_t>(n));
  for (real& v : data) v = rng.normal() * scale;
  return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

// Central finite differences (h = 1e-3) on elements of `leaf` against the
// autodiff gradient of eval(). eval must rebuild the graph from current leaf
// values and return a scalar loss.
//
// relu makes the loss only piecewise smooth: when a perturbation crosses a
// kink, the FD quotient itself is wrong. The oracle detects those points by
// comparing the quotients at h and h/2 (they agree to O(h^2) on smooth
// segments) and skips them; the skipped fraction is capped so the check
// cannot degrade into a no-op.
inline real gradcheck_indices(Tensor leaf, const std::function<Tensor()>& eval,
                              const std::vector<int>& indices, real h = 1e-3,
                              real max_skip_fraction = 0.3) {
  pgr::Tape tape;
  real max_err = 0;
  std::vector<real> autodiff(static_cast<std::size_t>(leaf.numel()));
  leaf.zero_grad();
  {
    pgr::Tape::Scope scope(tape);
    Tensor loss = eval();
    pgr::backward(loss);
  }
  auto g = leaf.grad_view();
  for (int i = 0; i < leaf.numel(); ++i)
    autodiff[static_cast<std::size_t>(i)] = g.empty() ? 0 : g[static_cast<std::size_t>(i)];
  leaf.zero_grad();

  auto data = leaf.data();
  std::size_t skipped = 0;
  for (int i : indices) {
    real saved = data[static_cast<std::size_t>(i)];
    auto fd_at = [&](real step) {
      data[static_cast<std::size_t>(i)] = saved + step;
      real up = eval().item();
      data[static_cast<std::size_t>(i)] = saved - step;
      real down = eval().item();
      data[static_cast<std::size_t>(i)] = saved;
      return (up - down) / (2 * step);
    };
    real fd = fd_at(h);
    real fd_half = fd_at(h / 2);
    if (rel_err(fd, fd_half) > 1e-3) {
      ++skipped;  // non-smooth sample point, FD unreliable here
      continue;
    }
    // Richardson extrapolation cancels the h^2 truncation term
    real fd_rich = (4 * fd_half - fd) / 3;
    max_err = std::max(max_err, rel_err(autodiff[static_cast<std::size_t>(i)], fd_rich));
  }
  if (!indices.empty() &&
      static_cast<real>(skipped) > max_skip_fraction * static_cast<real>(indices.size()))
    return std::numeric_limits<real>::infinity();  // too many kinks to certify
  return max_err;
}

inline real gradcheck_leaf(Tensor leaf, const std::function<Tensor()>& eval, real h = 1e-3) {
  std::vector<int> all(static_cast<std::size_t>(leaf.numel()));
  for (int i = 0; i < leaf.numel(); ++i) all[static_cast<std::size_t>(i)] = i;
  return gradcheck_indices(leaf, eval, all, h);
}

}  // namespace testutil
