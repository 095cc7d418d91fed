#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "pts/classifier.hpp"
#include "pts/dataset.hpp"
#include "pts/model.hpp"

namespace pts {

struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 0.05;
  std::size_t t0_epochs = 10;
  std::size_t t_mult = 2;
  double lr_min = 1e-6;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  double grad_clip = 5.0;  // global L2 norm; <= 0 disables clipping
  std::uint32_t holdout_fold = 0;
  LossConfig loss;
  ModelConfig model;

  void validate() const;
};

// Learning rate at a (possibly fractional) epoch under cosine annealing with
// warm restarts: cycle i lasts t0 * t_mult^i epochs.
double cosine_warm_restarts_lr(double epoch, const TrainConfig& cfg);

// Epochs (< limit) at which a new cycle starts, excluding epoch 0.
std::vector<std::size_t> restart_epochs(const TrainConfig& cfg, std::size_t limit);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// AdamW with decoupled weight decay. Moments are allocated on the first step
// and bound to the parameter order seen there.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  // Throws NumericError, leaving every parameter untouched, if any gradient is
  // not finite. Parameters without a gradient are treated as having g = 0.
  void step(std::vector<Tensor>& params, double lr);

  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

double global_grad_norm(const std::vector<Tensor>& params);
// Scales all gradients so their global norm is at most `max_norm`; returns
// the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

struct Metrics {
  double wa = 0.0;
  double ua = 0.0;
  double loss = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> loss_curve;
};

Metrics metrics_from_predictions(const std::vector<std::size_t>& predicted,
                                 const std::vector<std::size_t>& labels, std::size_t classes);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_wa = 0.0;
  double train_ua = 0.0;
  bool has_eval = false;
  double eval_loss = 0.0;
  double eval_wa = 0.0;
  double eval_ua = 0.0;
};

struct TrainResult {
  PtsSnn model;  // best checkpoint
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
  Metrics train_metrics;  // best model, evaluation mode, training split
  Metrics eval_metrics;   // best model on the held-out split (empty without one)
};

// Mini-batch training. With an eval set, the retained model is the epoch with
// the highest held-out WA (later epochs win ties); otherwise the final epoch.
// Per-epoch train metrics are accumulated from the training-mode forward passes.
TrainResult train(const Dataset& train_set, const Dataset* eval_set, const TrainConfig& cfg);

// Batched forward passes in evaluation mode.
Metrics evaluate(PtsSnn& model, const Dataset& dataset, const LossConfig& loss,
                 std::size_t batch_size = 32);

// Deterministic batches: a seeded permutation, grouped by sequence length,
// split into chunks of at most batch_size, then the chunk order is shuffled.
std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

struct FoldResult {
  std::uint32_t fold = 0;
  std::size_t train_size = 0;
  std::size_t eval_size = 0;
  TrainResult result;
};

struct CrossValidation {
  std::vector<FoldResult> folds;
  double mean_wa = 0.0;
  double mean_ua = 0.0;
};

// Worker count for cv/sweep: PTS_SNN_THREADS if set and positive, else 1.
std::size_t worker_count_from_env();

// One fresh model per fold id, holding that fold out.
CrossValidation cross_validate(const Dataset& dataset, const TrainConfig& cfg,
                               std::size_t workers = 1);

struct SweepRow {
  std::string param;
  double value = 0.0;
  double wa = 0.0;
  double ua = 0.0;
};

// Trains and evaluates once per grid value of `param` (prompt_length or
// kappa) with cfg.holdout_fold held out and the same seed throughout.
std::vector<SweepRow> sweep(const Dataset& dataset, const TrainConfig& cfg, const std::string& param,
                            const std::vector<double>& grid, std::size_t workers = 1);

// Applies a sweep value to a copy of the config (validated).
TrainConfig with_param(const TrainConfig& cfg, const std::string& param, double value);

// CSV with header fold,epoch,split,wa,ua,loss.
void write_metrics_csv(std::ostream& out, std::uint32_t fold, const std::vector<EpochLog>& log,
                       bool header = true);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace pts
