#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sedr/error.hpp"
#include "sedr/tensor.hpp"

namespace sedr {

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t num_coords = 200;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error. Coordinates whose true gradient is
  /// zero (e.g. key biases under softmax) are judged on absolute error, and the
  /// central difference carries roundoff near |f| * 1e-16 / eps.
  double abs_floor = 1e-5;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t groups_covered = 0;
  std::size_t worst_group = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares tape gradients of `f` against central differences on a sampled
/// coordinate subset. `f` must build its loss from the tensors in `params`;
/// it is called under a tape once and without one for every perturbation.
/// Coordinates are split evenly across parameter groups, preferring
/// coordinates with a nonzero analytic gradient.
inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                  const GradCheckOptions& opt = {}) {
  SEDR_REQUIRE(opt.eps >= 1e-6 && opt.eps <= 1e-3, "grad_check: eps ", opt.eps,
                  " outside [1e-6, 1e-3]");
  SEDR_REQUIRE(!params.empty(), "grad_check: no parameters");

  for (auto& p : params) p.zero_grad();
  double base_taped;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    base_taped = loss.item();
    tape.backward(loss);
  }
  const double base_a = f().item();
  const double base_b = f().item();
  SEDR_REQUIRE(base_a == base_b && base_a == base_taped,
                  "grad_check: function is not deterministic (", base_a, " vs ", base_b, ")");

  std::mt19937_64 rng(opt.seed);
  const std::size_t per_group = std::max<std::size_t>(1, (opt.num_coords + params.size() - 1) /
                                                             params.size());
  GradCheckResult res;
  for (std::size_t g = 0; g < params.size(); ++g) {
    Tensor& p = params[g];
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

    std::vector<std::size_t> nonzero, zero;
    for (std::size_t i = 0; i < analytic.size(); ++i)
      (analytic[i] != 0.0 ? nonzero : zero).push_back(i);
    std::shuffle(nonzero.begin(), nonzero.end(), rng);
    std::shuffle(zero.begin(), zero.end(), rng);
    std::vector<std::size_t> picks(nonzero.begin(),
                                   nonzero.begin() + std::min(per_group, nonzero.size()));
    for (std::size_t i = 0; picks.size() < per_group && i < zero.size(); ++i)
      picks.push_back(zero[i]);

    auto values = p.mutable_data();
    for (std::size_t idx : picks) {
      const double orig = values[idx];
      values[idx] = orig + opt.eps;
      const double up = f().item();
      values[idx] = orig - opt.eps;
      const double down = f().item();
      values[idx] = orig;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double err = relative_error(analytic[idx], numeric, opt.abs_floor);
      ++res.coords_checked;
      if (res.coords_checked == 1 || err > res.max_relative_error) {
        res.max_relative_error = err;
        res.worst_group = g;
        res.worst_index = idx;
        res.worst_analytic = analytic[idx];
        res.worst_numeric = numeric;
      }
    }
    if (!picks.empty()) ++res.groups_covered;
  }
  for (auto& p : params) p.zero_grad();
  return res;
}

inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  const GradCheckOptions& opt = {}) {
  return grad_check(f, std::span<Tensor>(params), opt);
}

}  // namespace sedr
