#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "pts/dataset.hpp"
#include "pts/model.hpp"

namespace pts {

inline constexpr double kMacEnergyPj = 4.6;
inline constexpr double kAcEnergyPj = 0.9;

enum class LayerKind {
  kDense,     // real-valued operands: multiply-accumulates
  kSpike,     // binary inputs: one accumulate per (input spike, synapse)
  kShift,     // data movement only
  kNeuron,    // spiking nonlinearity; contributes spike statistics only
  kExcluded,  // normalization, tanh, pooling: outside the MAC/AC model
};

std::string_view layer_kind_name(LayerKind kind);
// Throws std::invalid_argument for names that are not a known kind.
LayerKind parse_layer_kind(std::string_view name);

struct OpCount {
  std::string layer;
  LayerKind kind = LayerKind::kExcluded;
  std::uint64_t macs = 0;
  std::uint64_t acs = 0;
  std::uint64_t dense_macs = 0;  // cost if every input were treated as real-valued
  std::uint64_t spikes = 0;
  std::uint64_t neurons = 0;
  std::uint64_t slots = 0;  // neuron-steps observed (neurons * steps * samples)

  double rate() const;  // spikes / slots, 0 without neurons
};

// 0.9 * acs + 4.6 * macs
double energy_pj(std::uint64_t macs, std::uint64_t acs);
double energy_pj(const OpCount& count);

// Spike-driven linear layer over binary inputs x[..., D_in] with fan-out
// D_out: acs = (number of ones in x) * D_out, plus one per output neuron and
// position when the layer has a bias. Throws if x is not binary.
std::uint64_t spike_linear_acs(const Tensor& x, std::size_t fan_out, bool with_bias);

// Counts for one forward pass (evaluation mode) over x[B, T, D_in].
std::vector<OpCount> count_ops(PtsSnn& model, const Tensor& x, const ForwardOptions& options = {});

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::uint64_t> counts;
};

// Values outside [lo, hi] land in the first or last bin.
Histogram make_histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins);

struct EnergyReport {
  std::vector<OpCount> layers;  // summed over all profiled samples
  std::uint64_t samples = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t total_acs = 0;
  double total_pj = 0.0;              // all samples
  double per_sample_pj = 0.0;
  double dense_equivalent_pj = 0.0;   // per sample
  double dense_ratio = 0.0;           // dense_equivalent_pj / per_sample_pj
  std::uint64_t params = 0;
  Histogram firing_rates;             // per-neuron rates over all spiking stages
};

EnergyReport profile_energy(PtsSnn& model, const Dataset& dataset, std::size_t batch_size = 32);

std::uint64_t param_count(const std::vector<NamedTensor>& params);
std::uint64_t param_count(PtsSnn& model);

// CSV: layer,kind,macs,acs,spikes,rate with per-sample macs/acs/spikes.
void write_energy_csv(std::ostream& out, const EnergyReport& report);
// {"total_pj":...,"total_mj":...,"params":...,...} on one line (per sample).
std::string energy_summary_json(const EnergyReport& report);

inline constexpr double kSilenceRate = 0.02;
inline constexpr double kSaturationRate = 0.98;

struct StageDiagnostic {
  std::string stage;
  double mean_rate = 0.0;
  bool silence = false;
  bool saturation = false;
  Histogram rates;   // per-neuron firing rates, 20 bins on [0, 1]
  Histogram drives;  // pre-threshold input current
};

// Spiking stages: encoder.block1 .. encoder.blockN, ssla.filter, backend.
std::vector<std::string> spiking_stages(const PtsSnn& model);

std::vector<StageDiagnostic> firing_rate_diagnostics(PtsSnn& model, const Dataset& dataset,
                                                     const ForwardOptions& options = {},
                                                     std::size_t batch_size = 32);
StageDiagnostic firing_rate_diagnostic(PtsSnn& model, const Dataset& dataset,
                                       const std::string& stage,
                                       const ForwardOptions& options = {});

// CSV: stage,kind,bin_lo,bin_hi,count (kind = rate or drive).
void write_diagnostic_csv(std::ostream& out, const std::vector<StageDiagnostic>& stages);

}  // namespace pts
