#include "pts/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pts::gradcheck {

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::vector<double> numeric_gradient(const std::function<double()>& loss, Tensor& param,
                                     double step) {
  auto values = param.mutable_data();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double plus = loss();
    values[i] = saved - step;
    const double minus = loss();
    values[i] = saved;
    out[i] = (plus - minus) / (2.0 * step);
  }
  return out;
}

Comparison compare(std::span<const double> analytic, std::span<const double> numeric,
                   double floor) {
  Comparison c;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = relative_error(analytic[i], numeric[i], floor);
    if (err > c.max_rel_error || i == 0) {
      c.max_rel_error = std::max(err, c.max_rel_error);
      c.worst_index = i;
      c.analytic = analytic[i];
      c.numeric = numeric[i];
    }
  }
  return c;
}

}  // namespace pts::gradcheck
