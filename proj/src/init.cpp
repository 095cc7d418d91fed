#include "pts/init.hpp"

#include <cmath>

namespace pts::init {

Tensor kaiming_uniform(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(out * in);
  for (auto& v : w) v = dist(rng);
  return Tensor({out, in}, std::move(w), true);
}

Tensor normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace pts::init
