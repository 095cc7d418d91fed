#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pts/model.hpp"

// Finite-difference check of the whole model in smooth-spike mode.
namespace pts::gradcheck {

struct PipelineOptions {
  std::size_t batch = 2;
  std::size_t steps = 6;
  std::vector<std::size_t> dims{16, 12, 8};
  std::size_t prompt_length = 2;
  std::size_t classes = 3;
  std::size_t bias_hidden = 4;
  std::size_t backend_hidden = 6;
  std::uint64_t seed = 7;
  double step = 1e-5;
  double tolerance = 1e-3;
  // Inserts an identity with a deliberately wrong backward after this forward
  // stage (see kForwardStages). Negative control for the checker itself.
  std::optional<std::string> inject_fault;
};

struct StageReport {
  std::string stage;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Stages: input, soft_saturate, encoder.block1.., prompts, ssla,
// bias_generator, backend. Each appears exactly once.
std::vector<StageReport> check_pipeline(const PipelineOptions& options = {});

// Identity forward, backward scaled by 1.5.
Tensor faulty_identity(const Tensor& x);

}  // namespace pts::gradcheck
