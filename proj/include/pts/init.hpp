#pragma once

#include <random>

#include "pts/tensor.hpp"

namespace pts::init {

// U(-b, b) with b = sqrt(6 / fan_in), weight shape [out, in].
Tensor kaiming_uniform(std::size_t out, std::size_t in, std::mt19937_64& rng);
Tensor normal(Shape shape, double stddev, std::mt19937_64& rng);

}  // namespace pts::init
