#include "pts/energy.hpp"

#include <json.hpp>

#include <algorithm>
#include <iomanip>
#include <stdexcept>

#include "pts/encoder.hpp"
#include "pts/trainer.hpp"

namespace pts {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kSpike: return "spike";
    case LayerKind::kShift: return "shift";
    case LayerKind::kNeuron: return "neuron";
    case LayerKind::kExcluded: return "excluded";
  }
  throw std::invalid_argument("unknown layer kind");
}

LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::kDense, LayerKind::kSpike, LayerKind::kShift, LayerKind::kNeuron,
                      LayerKind::kExcluded}) {
    if (layer_kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

double OpCount::rate() const {
  return slots == 0 ? 0.0 : static_cast<double>(spikes) / static_cast<double>(slots);
}

double energy_pj(std::uint64_t macs, std::uint64_t acs) {
  return kAcEnergyPj * static_cast<double>(acs) + kMacEnergyPj * static_cast<double>(macs);
}

double energy_pj(const OpCount& count) {
  switch (count.kind) {
    case LayerKind::kDense:
    case LayerKind::kSpike:
    case LayerKind::kShift:
    case LayerKind::kNeuron:
    case LayerKind::kExcluded:
      return energy_pj(count.macs, count.acs);
  }
  throw std::invalid_argument("layer '" + count.layer + "' has an unknown kind");
}

std::uint64_t spike_linear_acs(const Tensor& x, std::size_t fan_out, bool with_bias) {
  std::uint64_t ones = 0;
  for (double v : x.data()) {
    if (v == 1.0) {
      ++ones;
    } else if (v != 0.0) {
      throw std::invalid_argument("spike-driven layer received a non-binary input");
    }
  }
  std::uint64_t acs = ones * fan_out;
  if (with_bias) acs += (x.numel() / x.shape().back()) * fan_out;
  return acs;
}

namespace {

std::uint64_t count_ones(const Tensor& s) {
  return static_cast<std::uint64_t>(std::count(s.data().begin(), s.data().end(), 1.0));
}

OpCount dense(std::string layer, std::uint64_t positions, std::uint64_t in, std::uint64_t out) {
  OpCount c{std::move(layer), LayerKind::kDense};
  c.macs = positions * in * out;
  c.dense_macs = c.macs;
  return c;
}

OpCount spiking(std::string layer, const Tensor& input, std::uint64_t out, bool with_bias) {
  OpCount c{std::move(layer), LayerKind::kSpike};
  c.acs = spike_linear_acs(input, out, with_bias);
  c.dense_macs = (input.numel() / input.shape().back()) * input.shape().back() * out;
  return c;
}

// Real-valued inputs make a projection dense; binary inputs make it spike-driven.
OpCount projection(std::string layer, const Tensor& input, std::uint64_t out, bool with_bias,
                   bool binary_input) {
  if (binary_input) return spiking(std::move(layer), input, out, with_bias);
  const std::uint64_t positions = input.numel() / input.shape().back();
  return dense(std::move(layer), positions, input.shape().back(), out);
}

OpCount neuron(std::string layer, const Tensor& spikes) {
  OpCount c{std::move(layer), LayerKind::kNeuron};
  c.spikes = count_ones(spikes);
  c.neurons = spikes.dim(2);
  c.slots = spikes.numel();
  return c;
}

OpCount excluded(std::string layer) { return OpCount{std::move(layer), LayerKind::kExcluded}; }

}  // namespace

std::vector<OpCount> count_ops(PtsSnn& model, const Tensor& x, const ForwardOptions& options) {
  if (model.config().plif.smooth) {
    throw std::invalid_argument("energy profiling needs binary spikes (smooth mode is on)");
  }
  ForwardOptions opts = options;
  opts.training = false;
  ForwardTrace trace;
  model.forward(x, opts, &trace);
  const auto& cfg = model.config();
  const std::uint64_t batch = x.dim(0);
  const std::uint64_t d = cfg.model_dim();

  std::vector<OpCount> ops;
  ops.push_back(excluded("encoder.soft_saturate"));
  for (std::size_t i = 0; i < model.encoder.blocks.size(); ++i) {
    const auto& block = model.encoder.blocks[i];
    const std::string name = "encoder.block" + std::to_string(i + 1);
    const Tensor& input = i == 0 ? trace.encoder.saturated : trace.encoder.blocks[i - 1].spikes;
    const bool binary = i > 0;
    ops.push_back(OpCount{name + ".shift", LayerKind::kShift});
    ops.push_back(projection(name + ".linear", temporal_shift(input, cfg.encoder.shift_div),
                             block.d_out(), true, binary));
    if (block.residual.defined()) {
      ops.push_back(projection(name + ".residual", input, block.d_out(), false, binary));
    }
    ops.push_back(excluded(name + ".bn"));
    ops.push_back(neuron(name + ".plif", trace.encoder.blocks[i].spikes));
  }
  const Tensor& s = trace.ssla.spikes;
  const std::uint64_t positions = s.dim(0) * s.dim(1);
  ops.push_back(neuron("ssla.filter", s));
  OpCount qkv = spiking("ssla.qkv", s, 3 * d, false);
  ops.push_back(qkv);
  ops.push_back(excluded("ssla.column_norm"));
  ops.push_back(dense("ssla.context", positions, d, d));
  ops.push_back(dense("ssla.output", positions, d, d));
  ops.push_back(excluded("ssla.pool"));
  OpCount bias = dense("bias.mlp", batch, d, cfg.bias_hidden);
  bias.macs += batch * cfg.bias_hidden * d;
  bias.dense_macs = bias.macs;
  ops.push_back(bias);
  ops.push_back(excluded("bias.inject"));
  ops.push_back(projection("backend.hidden", trace.x_hat, cfg.backend_hidden, true, false));
  ops.push_back(excluded("backend.bn"));
  ops.push_back(neuron("backend.plif", trace.backend.spikes));
  ops.push_back(spiking("backend.readout", trace.backend.spikes, cfg.num_classes, true));
  return ops;
}

Histogram make_histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins) {
  if (bins == 0 || !(hi > lo)) throw std::invalid_argument("histogram needs bins > 0 and hi > lo");
  Histogram h;
  h.counts.assign(bins, 0);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
  }
  for (double v : values) {
    const double pos = (v - lo) / (hi - lo) * static_cast<double>(bins);
    const auto bin = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
    ++h.counts[bin];
  }
  return h;
}

namespace {

// Per-(sample, channel) firing rate averaged over time, spikes[B, T, C].
std::vector<double> neuron_rates(const Tensor& spikes) {
  const std::size_t b = spikes.dim(0), t = spikes.dim(1), c = spikes.dim(2);
  std::vector<double> rates(b * c, 0.0);
  const auto s = spikes.data();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < t; ++k) {
      for (std::size_t j = 0; j < c; ++j) rates[i * c + j] += s[(i * t + k) * c + j];
    }
  }
  for (double& r : rates) r /= static_cast<double>(t);
  return rates;
}

void merge(Histogram& into, const Histogram& from) {
  if (into.counts.empty()) {
    into = from;
    return;
  }
  for (std::size_t i = 0; i < into.counts.size(); ++i) into.counts[i] += from.counts[i];
}

constexpr std::size_t kRateBins = 20;
constexpr std::size_t kDriveBins = 40;
constexpr double kDriveSpan = 4.0;

}  // namespace

std::uint64_t param_count(const std::vector<NamedTensor>& params) {
  std::uint64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

std::uint64_t param_count(PtsSnn& model) { return param_count(model.parameters()); }

EnergyReport profile_energy(PtsSnn& model, const Dataset& dataset, std::size_t batch_size) {
  if (dataset.empty()) throw std::invalid_argument("energy profiling needs at least one sample");
  EnergyReport report;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    // Batches must share a sequence length; fall back to single samples otherwise.
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(start + batch_size, dataset.size()); ++i) idx.push_back(i);
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i : idx) {
      auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) {
        return dataset.samples[g.front()].frames == dataset.samples[i].frames;
      });
      if (it == groups.end()) {
        groups.push_back({i});
      } else {
        it->push_back(i);
      }
    }
    for (const auto& g : groups) {
      const Batch batch = make_batch(dataset, g);
      const auto ops = count_ops(model, batch.features);
      if (report.layers.empty()) {
        report.layers = ops;
        for (auto& l : report.layers) l.macs = l.acs = l.dense_macs = l.spikes = l.slots = 0;
      }
      for (std::size_t i = 0; i < ops.size(); ++i) {
        auto& acc = report.layers[i];
        acc.macs += ops[i].macs;
        acc.acs += ops[i].acs;
        acc.dense_macs += ops[i].dense_macs;
        acc.spikes += ops[i].spikes;
        acc.slots += ops[i].slots;
      }
      report.samples += g.size();
    }
  }
  std::uint64_t dense_macs = 0;
  for (auto& l : report.layers) {
    report.total_macs += l.macs;
    report.total_acs += l.acs;
    dense_macs += l.dense_macs;
  }
  report.total_pj = energy_pj(report.total_macs, report.total_acs);
  const double n = static_cast<double>(report.samples);
  report.per_sample_pj = report.total_pj / n;
  report.dense_equivalent_pj = kMacEnergyPj * static_cast<double>(dense_macs) / n;
  report.dense_ratio = report.per_sample_pj > 0.0 ? report.dense_equivalent_pj / report.per_sample_pj : 0.0;
  report.params = param_count(model);

  for (const auto& diag : firing_rate_diagnostics(model, dataset, {}, batch_size)) {
    merge(report.firing_rates, diag.rates);
  }
  return report;
}

void write_energy_csv(std::ostream& out, const EnergyReport& report) {
  const double n = static_cast<double>(std::max<std::uint64_t>(report.samples, 1));
  out << "layer,kind,macs,acs,spikes,rate\n" << std::setprecision(10);
  for (const auto& l : report.layers) {
    out << l.layer << ',' << layer_kind_name(l.kind) << ',' << static_cast<double>(l.macs) / n << ','
        << static_cast<double>(l.acs) / n << ',' << static_cast<double>(l.spikes) / n << ','
        << l.rate() << '\n';
  }
}

std::string energy_summary_json(const EnergyReport& report) {
  const nlohmann::json j{{"total_pj", report.per_sample_pj},
                         {"total_mj", report.per_sample_pj * 1e-9},
                         {"params", report.params},
                         {"samples", report.samples},
                         {"dense_equivalent_pj", report.dense_equivalent_pj},
                         {"dense_ratio", report.dense_ratio}};
  return j.dump();
}

std::vector<std::string> spiking_stages(const PtsSnn& model) {
  std::vector<std::string> stages;
  for (std::size_t i = 0; i < model.encoder.blocks.size(); ++i) {
    stages.push_back("encoder.block" + std::to_string(i + 1));
  }
  stages.push_back("ssla.filter");
  stages.push_back("backend");
  return stages;
}

std::vector<StageDiagnostic> firing_rate_diagnostics(PtsSnn& model, const Dataset& dataset,
                                                     const ForwardOptions& options,
                                                     std::size_t batch_size) {
  if (dataset.empty()) throw std::invalid_argument("firing-rate diagnostic needs at least one sample");
  const auto names = spiking_stages(model);
  std::vector<StageDiagnostic> out(names.size());
  std::vector<double> spike_sum(names.size(), 0.0), slot_sum(names.size(), 0.0);
  const double vth = model.config().plif.v_threshold;
  ForwardOptions opts = options;
  opts.training = false;
  for (const auto& idx : epoch_batches(dataset, batch_size, 0, 0)) {
    const Batch batch = make_batch(dataset, idx);
    ForwardTrace trace;
    model.forward(batch.features, opts, &trace);
    std::vector<std::pair<const Tensor*, const Tensor*>> stage_data;
    for (const auto& b : trace.encoder.blocks) stage_data.emplace_back(&b.spikes, &b.drive);
    stage_data.emplace_back(&trace.ssla.spikes, &trace.joint);
    stage_data.emplace_back(&trace.backend.spikes, &trace.backend.drive);
    for (std::size_t k = 0; k < names.size(); ++k) {
      const Tensor& spikes = *stage_data[k].first;
      const Tensor& drive = *stage_data[k].second;
      spike_sum[k] += static_cast<double>(count_ones(spikes));
      slot_sum[k] += static_cast<double>(spikes.numel());
      merge(out[k].rates, make_histogram(neuron_rates(spikes), 0.0, 1.0, kRateBins));
      merge(out[k].drives, make_histogram(drive.values(), vth - kDriveSpan, vth + kDriveSpan, kDriveBins));
    }
  }
  for (std::size_t k = 0; k < names.size(); ++k) {
    out[k].stage = names[k];
    out[k].mean_rate = spike_sum[k] / slot_sum[k];
    out[k].silence = out[k].mean_rate < kSilenceRate;
    out[k].saturation = out[k].mean_rate > kSaturationRate;
  }
  return out;
}

StageDiagnostic firing_rate_diagnostic(PtsSnn& model, const Dataset& dataset, const std::string& stage,
                                       const ForwardOptions& options) {
  for (auto& d : firing_rate_diagnostics(model, dataset, options)) {
    if (d.stage == stage) return d;
  }
  throw std::invalid_argument("unknown spiking stage '" + stage + "'");
}

void write_diagnostic_csv(std::ostream& out, const std::vector<StageDiagnostic>& stages) {
  out << "stage,kind,bin_lo,bin_hi,count\n" << std::setprecision(10);
  for (const auto& s : stages) {
    for (const auto* h : {&s.rates, &s.drives}) {
      const char* kind = h == &s.rates ? "rate" : "drive";
      for (std::size_t i = 0; i < h->counts.size(); ++i) {
        out << s.stage << ',' << kind << ',' << h->edges[i] << ',' << h->edges[i + 1] << ','
            << h->counts[i] << '\n';
      }
    }
  }
}

}  // namespace pts
