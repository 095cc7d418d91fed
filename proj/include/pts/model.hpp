#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "pts/calibration.hpp"
#include "pts/classifier.hpp"
#include "pts/encoder.hpp"
#include "pts/plif.hpp"

namespace pts {

struct ModelConfig {
  EncoderConfig encoder;
  PlifConfig plif;
  std::size_t prompt_length = 5;
  double prompt_init_std = 0.02;
  double eps_norm = 1e-6;
  ColumnNorm column_norm = ColumnNorm::kSum;
  std::size_t bias_hidden = 64;
  double kappa = 0.5;
  std::size_t backend_hidden = 128;
  std::size_t num_classes = 4;

  std::size_t input_dim() const { return encoder.dims.front(); }
  std::size_t model_dim() const { return encoder.dims.back(); }
  void validate() const;
};

struct ForwardOptions {
  bool training = false;
  // Forces v_bias to zero (calibration branch off).
  bool zero_bias = false;
  // Feeds raw features into the first spiking block (over-drive diagnostics).
  bool bypass_soft_saturation = false;
  // Optional hook applied to each stage output ("encoder", "ssla",
  // "bias_generator", "backend"); its return value replaces the output.
  std::function<Tensor(std::string_view stage, const Tensor& output)> tap;
};

// Stage names passed to ForwardOptions::tap, in forward order.
inline constexpr std::string_view kForwardStages[] = {"encoder", "ssla", "bias_generator", "backend"};

// Intermediate activity of one forward pass, consumed by the energy profiler
// and the firing-rate diagnostic.
struct ForwardTrace {
  EncoderActivity encoder;
  Tensor joint;        // prompts ++ encoder spikes, [B, L_p + T, D]
  SslaActivity ssla;
  Tensor ssla_out;
  Tensor context;
  Tensor v_bias;
  Tensor x_hat;
  BackendActivity backend;
  Tensor logits;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class PtsSnn {
 public:
  PtsSnn(const ModelConfig& config, std::uint64_t seed);

  // x[B, T, D_in] -> logits[B, K]
  Tensor forward(const Tensor& x, const ForwardOptions& options = {}, ForwardTrace* trace = nullptr);

  // Trainable tensors (names are stable and used by checkpoints).
  std::vector<NamedTensor> parameters();
  // Non-trainable state: batch-norm running statistics.
  std::vector<NamedTensor> buffers();
  // parameters() followed by buffers().
  std::vector<NamedTensor> state();

  // Deep copy: the clone shares no storage with this model.
  PtsSnn clone() const;

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  TemporalShiftEncoder encoder;
  Tensor prompts;  // [L_p, D]
  SslaParams ssla;
  BiasGenerator bias;
  SpikingBackend backend;

 private:
  ModelConfig config_;
};

// Copies values from `source` into the model's state by name; every model
// tensor must be present with a matching shape.
void load_state(PtsSnn& model, const std::vector<NamedTensor>& source);

}  // namespace pts
