#include "pts/encoder.hpp"

#include <stdexcept>
#include <string>

#include "pts/init.hpp"

namespace pts {

void EncoderConfig::validate() const {
  if (!(xi > 0.0)) throw std::invalid_argument("encoder xi must be > 0");
  if (dims.size() < 2) throw std::invalid_argument("encoder dims need at least two entries");
  if (shift_div < 2) throw std::invalid_argument("encoder shift_div must be >= 2");
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] == 0) throw std::invalid_argument("encoder dims must be positive");
    if (i > 0 && dims[i] >= dims[i - 1]) {
      throw std::invalid_argument("encoder dims must be strictly decreasing");
    }
    if (dims[i] % shift_div != 0) {
      throw std::invalid_argument("encoder dim " + std::to_string(dims[i]) +
                                  " not divisible by shift_div " + std::to_string(shift_div));
    }
  }
}

Tensor soft_saturate(const Tensor& x, const Tensor& ln_gain, const Tensor& ln_shift, double xi) {
  return tanh(scale(layer_norm(x, ln_gain, ln_shift), xi));
}

Tensor temporal_shift(const Tensor& h, std::size_t shift_div) {
  if (h.ndim() != 3) throw ShapeError("temporal_shift: expected [B,T,C], got " + shape_str(h.shape()));
  const std::size_t batch = h.dim(0), steps = h.dim(1), c = h.dim(2);
  if (shift_div < 2 || c % shift_div != 0) {
    throw std::invalid_argument("temporal_shift: channels " + std::to_string(c) +
                                " not divisible by shift_div " + std::to_string(shift_div));
  }
  const std::size_t fold = c / shift_div;
  const auto hv = h.data();
  std::vector<double> out(h.numel(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t row = (b * steps + t) * c;
      for (std::size_t j = 0; j < fold; ++j) {
        if (t > 0) out[row + j] = hv[row - c + j];
      }
      for (std::size_t j = fold; j < 2 * fold; ++j) {
        if (t + 1 < steps) out[row + j] = hv[row + c + j];
      }
      for (std::size_t j = 2 * fold; j < c; ++j) out[row + j] = hv[row + j];
    }
  }
  Tensor result(h.shape(), std::move(out));
  if (detail::should_record({&h})) {
    detail::record(result, {h}, [h, batch, steps, c, fold](std::span<const double> g) {
      auto& gh = detail::grad_buffer(h);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
          const std::size_t row = (b * steps + t) * c;
          for (std::size_t j = 0; j < fold; ++j) {
            if (t > 0) gh[row - c + j] += g[row + j];
          }
          for (std::size_t j = fold; j < 2 * fold; ++j) {
            if (t + 1 < steps) gh[row + c + j] += g[row + j];
          }
          for (std::size_t j = 2 * fold; j < c; ++j) gh[row + j] += g[row + j];
        }
      }
    });
  }
  return result;
}

ShiftBlock ShiftBlock::init(std::size_t d_in, std::size_t d_out, const PlifConfig& plif,
                            std::mt19937_64& rng) {
  ShiftBlock block;
  block.weight = init::kaiming_uniform(d_out, d_in, rng);
  block.bias = Tensor::zeros({d_out}, true);
  block.bn_gain = Tensor::ones({d_out}, true);
  block.bn_shift = Tensor::zeros({d_out}, true);
  block.bn = BatchNormStats::fresh(d_out);
  block.tau_raw = Tensor::full({d_out}, plif.tau_init_raw, true);
  if (d_in != d_out) block.residual = init::kaiming_uniform(d_out, d_in, rng);
  return block;
}

Tensor shift_block_forward(const Tensor& h, ShiftBlock& block, const EncoderConfig& cfg,
                           const PlifConfig& plif, bool training, BlockActivity* activity) {
  if (h.ndim() != 3 || h.dim(2) != block.d_in()) {
    throw ShapeError("shift block: input " + shape_str(h.shape()) + " vs weight " +
                     shape_str(block.weight.shape()));
  }
  const Tensor shifted = temporal_shift(h, cfg.shift_div);
  Tensor drive = batch_norm(linear(shifted, block.weight, block.bias), block.bn_gain,
                            block.bn_shift, block.bn, training);
  drive = add(drive, block.residual.defined() ? linear(h, block.residual) : h);
  Tensor spikes = plif_sequence(drive, block.tau_raw, plif);
  if (activity != nullptr) *activity = BlockActivity{drive, spikes};
  return spikes;
}

TemporalShiftEncoder TemporalShiftEncoder::init(const EncoderConfig& cfg, const PlifConfig& plif,
                                                std::mt19937_64& rng) {
  cfg.validate();
  TemporalShiftEncoder enc;
  enc.ln_gain = Tensor::ones({cfg.dims.front()}, true);
  enc.ln_shift = Tensor::zeros({cfg.dims.front()}, true);
  for (std::size_t i = 1; i < cfg.dims.size(); ++i) {
    enc.blocks.push_back(ShiftBlock::init(cfg.dims[i - 1], cfg.dims[i], plif, rng));
  }
  return enc;
}

Tensor encoder_forward(const Tensor& x, TemporalShiftEncoder& encoder, const EncoderConfig& cfg,
                       const PlifConfig& plif, bool training, bool bypass_saturation,
                       EncoderActivity* activity) {
  if (x.ndim() != 3 || x.dim(2) != cfg.dims.front()) {
    throw ShapeError("encoder: expected [B,T," + std::to_string(cfg.dims.front()) + "], got " +
                     shape_str(x.shape()));
  }
  Tensor h = bypass_saturation ? x : soft_saturate(x, encoder.ln_gain, encoder.ln_shift, cfg.xi);
  if (activity != nullptr) {
    activity->saturated = h;
    activity->blocks.assign(encoder.blocks.size(), {});
  }
  for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
    h = shift_block_forward(h, encoder.blocks[i], cfg, plif, training,
                            activity ? &activity->blocks[i] : nullptr);
  }
  return h;
}

}  // namespace pts
