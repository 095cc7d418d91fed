#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pts/tensor.hpp"

// Finite-difference utilities shared by the test suites and `pts_snn gradcheck`.
namespace pts::gradcheck {

// |a - b| / max(|a|, |b|, floor)
double relative_error(double a, double b, double floor = 1e-8);

// Central differences of `loss` with respect to every element of `param`.
// `loss` must recompute the forward pass from scratch and not record a tape.
std::vector<double> numeric_gradient(const std::function<double()>& loss, Tensor& param,
                                     double step = 1e-5);

struct Comparison {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

Comparison compare(std::span<const double> analytic, std::span<const double> numeric,
                   double floor = 1e-8);

}  // namespace pts::gradcheck
