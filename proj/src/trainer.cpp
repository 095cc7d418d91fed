#include "pts/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <thread>

namespace pts {

void TrainConfig::validate() const {
  if (!(lr_min > 0.0) || !(lr > lr_min)) throw std::invalid_argument("need lr > lr_min > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (t0_epochs < 1) throw std::invalid_argument("t0_epochs must be >= 1");
  if (t_mult < 1) throw std::invalid_argument("t_mult must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (std::isnan(grad_clip)) throw std::invalid_argument("grad_clip must be a number");
  loss.validate();
  model.validate();
}

double cosine_warm_restarts_lr(double epoch, const TrainConfig& cfg) {
  if (!(epoch >= 0.0)) throw std::invalid_argument("epoch must be >= 0");
  double start = 0.0;
  double length = static_cast<double>(cfg.t0_epochs);
  if (cfg.t_mult == 1) {
    start = std::floor(epoch / length) * length;
  } else {
    while (epoch >= start + length) {
      start += length;
      length *= static_cast<double>(cfg.t_mult);
    }
  }
  const double t_cur = epoch - start;
  return cfg.lr_min + (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * t_cur / length)) / 2.0;
}

std::vector<std::size_t> restart_epochs(const TrainConfig& cfg, std::size_t limit) {
  std::vector<std::size_t> out;
  std::size_t length = cfg.t0_epochs;
  for (std::size_t start = length; start < limit; start += length) {
    out.push_back(start);
    length *= cfg.t_mult;
  }
  return out;
}

void AdamW::step(std::vector<Tensor>& params, double lr) {
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient");
    }
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("AdamW: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].size() != params[i].numel()) throw ShapeError("AdamW: parameter size changed");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    const bool has = params[i].has_grad();
    const auto g = params[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = has ? g[k] : 0.0;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      w[k] *= decay;
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double ss = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) ss += g * g;
  }
  return std::sqrt(ss);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

Metrics metrics_from_predictions(const std::vector<std::size_t>& predicted,
                                 const std::vector<std::size_t>& labels, std::size_t classes) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("metrics: size mismatch");
  if (labels.empty()) throw std::invalid_argument("metrics: no samples");
  Metrics m;
  m.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes || predicted[i] >= classes) {
      throw std::out_of_range("metrics: class index out of range");
    }
    ++m.confusion[labels[i]][predicted[i]];
  }
  std::size_t correct = 0;
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t row = 0;
    for (std::size_t v : m.confusion[c]) row += v;
    correct += m.confusion[c][c];
    if (row > 0) {
      recall_sum += static_cast<double>(m.confusion[c][c]) / static_cast<double>(row);
      ++present;
    }
  }
  m.wa = static_cast<double>(correct) / static_cast<double>(labels.size());
  m.ua = recall_sum / static_cast<double>(present);
  return m;
}

std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  if (dataset.empty()) throw std::invalid_argument("cannot batch an empty dataset");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (epoch + 1)));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset.samples[a].frames < dataset.samples[b].frames;
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size();) {
    const std::size_t frames = dataset.samples[order[i]].frames;
    std::vector<std::size_t> batch;
    while (i < order.size() && batch.size() < batch_size &&
           dataset.samples[order[i]].frames == frames) {
      batch.push_back(order[i++]);
    }
    batches.push_back(std::move(batch));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

namespace {

std::vector<std::vector<std::size_t>> ordered_batches(const Dataset& dataset, std::size_t batch_size) {
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_length[dataset.samples[i].frames].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [frames, idx] : by_length) {
    for (std::size_t i = 0; i < idx.size(); i += batch_size) {
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, idx.size())));
    }
  }
  return batches;
}

void check_compatible(const Dataset& dataset, const ModelConfig& model) {
  if (dataset.empty()) throw std::invalid_argument("dataset is empty");
  if (dataset.d_in != model.input_dim()) {
    throw std::invalid_argument("dataset d_in " + std::to_string(dataset.d_in) +
                                " does not match model input dim " +
                                std::to_string(model.input_dim()));
  }
  if (dataset.num_classes != model.num_classes) {
    throw std::invalid_argument("dataset has " + std::to_string(dataset.num_classes) +
                                " classes, model expects " + std::to_string(model.num_classes));
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.samples[i].label >= model.num_classes) {
      throw std::out_of_range("sample " + std::to_string(i) + " label out of range");
    }
  }
}

std::vector<Tensor> tensors_of(std::vector<NamedTensor> named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (auto& n : named) out.push_back(n.tensor);
  return out;
}

template <typename Job>
void run_jobs(std::size_t count, std::size_t workers, Job job) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

Metrics evaluate(PtsSnn& model, const Dataset& dataset, const LossConfig& loss,
                 std::size_t batch_size) {
  check_compatible(dataset, model.config());
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> labels;
  double loss_sum = 0.0;
  for (const auto& idx : ordered_batches(dataset, batch_size)) {
    const Batch batch = make_batch(dataset, idx);
    const Tensor logits = model.forward(batch.features, ForwardOptions{});
    loss_sum += total_loss(softmax_probs(logits), batch.labels, loss).item() *
                static_cast<double>(idx.size());
    const auto p = predict(logits);
    predicted.insert(predicted.end(), p.begin(), p.end());
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  }
  Metrics m = metrics_from_predictions(predicted, labels, model.config().num_classes);
  m.loss = loss_sum / static_cast<double>(labels.size());
  return m;
}

TrainResult train(const Dataset& train_set, const Dataset* eval_set, const TrainConfig& cfg) {
  cfg.validate();
  check_compatible(train_set, cfg.model);
  if (eval_set != nullptr) check_compatible(*eval_set, cfg.model);

  PtsSnn model(cfg.model, cfg.seed);
  std::vector<Tensor> params = tensors_of(model.parameters());
  AdamW optimizer(AdamWConfig{.weight_decay = cfg.weight_decay});

  std::optional<PtsSnn> best;
  std::size_t best_epoch = 0;
  double best_wa = -1.0;
  std::vector<EpochLog> log;
  std::vector<double> loss_curve;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = cosine_warm_restarts_lr(static_cast<double>(epoch), cfg);
    std::vector<std::size_t> predicted;
    std::vector<std::size_t> labels;
    double loss_sum = 0.0;
    for (const auto& idx : epoch_batches(train_set, cfg.batch_size, cfg.seed, epoch)) {
      const Batch batch = make_batch(train_set, idx);
      for (auto& p : params) p.zero_grad();
      Tape tape;
      Tape::Scope scope(tape);
      ForwardOptions fwd;
      fwd.training = true;
      const Tensor logits = model.forward(batch.features, fwd);
      const Tensor loss = total_loss(softmax_probs(logits), batch.labels, cfg.loss);
      if (!std::isfinite(loss.item())) throw NumericError("non-finite training loss");
      tape.backward(loss);
      clip_grad_norm(params, cfg.grad_clip);
      optimizer.step(params, entry.lr);
      loss_sum += loss.item() * static_cast<double>(idx.size());
      const auto p = predict(logits);
      predicted.insert(predicted.end(), p.begin(), p.end());
      labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
    }
    const Metrics epoch_metrics = metrics_from_predictions(predicted, labels, cfg.model.num_classes);
    entry.train_loss = loss_sum / static_cast<double>(labels.size());
    entry.train_wa = epoch_metrics.wa;
    entry.train_ua = epoch_metrics.ua;
    loss_curve.push_back(entry.train_loss);
    if (eval_set != nullptr) {
      const Metrics m = evaluate(model, *eval_set, cfg.loss, cfg.batch_size);
      entry.has_eval = true;
      entry.eval_loss = m.loss;
      entry.eval_wa = m.wa;
      entry.eval_ua = m.ua;
      if (m.wa >= best_wa) {
        best_wa = m.wa;
        best_epoch = epoch;
        best = model.clone();
      }
    }
    log.push_back(entry);
  }
  if (!best) {
    best = model.clone();
    best_epoch = cfg.epochs - 1;
  }

  TrainResult result{std::move(*best), best_epoch, std::move(log), {}, {}};
  result.train_metrics = evaluate(result.model, train_set, cfg.loss, cfg.batch_size);
  result.train_metrics.loss_curve = std::move(loss_curve);
  if (eval_set != nullptr) {
    result.eval_metrics = evaluate(result.model, *eval_set, cfg.loss, cfg.batch_size);
  }
  return result;
}

std::size_t worker_count_from_env() {
  const char* raw = std::getenv("PTS_SNN_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || v < 1) return 1;
  return static_cast<std::size_t>(v);
}

CrossValidation cross_validate(const Dataset& dataset, const TrainConfig& cfg, std::size_t workers) {
  cfg.validate();
  const auto folds = fold_ids(dataset);
  if (folds.size() < 2) throw std::invalid_argument("cross-validation needs at least two folds");
  std::vector<std::optional<FoldResult>> slots(folds.size());
  run_jobs(folds.size(), workers, [&](std::size_t i) {
    auto [train_part, held] = split_by_fold(dataset, folds[i]);
    if (held.empty() || train_part.empty()) {
      throw std::invalid_argument("fold " + std::to_string(folds[i]) + " has zero samples");
    }
    TrainResult r = train(train_part, &held, cfg);
    slots[i].emplace(FoldResult{folds[i], train_part.size(), held.size(), std::move(r)});
  });
  CrossValidation cv;
  for (auto& s : slots) {
    cv.mean_wa += s->result.eval_metrics.wa;
    cv.mean_ua += s->result.eval_metrics.ua;
    cv.folds.push_back(std::move(*s));
  }
  cv.mean_wa /= static_cast<double>(cv.folds.size());
  cv.mean_ua /= static_cast<double>(cv.folds.size());
  return cv;
}

TrainConfig with_param(const TrainConfig& cfg, const std::string& param, double value) {
  TrainConfig out = cfg;
  if (param == "prompt_length") {
    if (!(value >= 1.0) || value != std::round(value)) {
      throw std::invalid_argument("prompt_length grid values must be positive integers");
    }
    out.model.prompt_length = static_cast<std::size_t>(value);
  } else if (param == "kappa") {
    out.model.kappa = value;
  } else {
    throw std::invalid_argument("unknown sweep parameter '" + param +
                                "' (expected prompt_length or kappa)");
  }
  out.validate();
  return out;
}

std::vector<SweepRow> sweep(const Dataset& dataset, const TrainConfig& cfg, const std::string& param,
                            const std::vector<double>& grid, std::size_t workers) {
  if (grid.empty()) throw std::invalid_argument("sweep grid is empty");
  std::vector<TrainConfig> configs;
  for (double v : grid) configs.push_back(with_param(cfg, param, v));
  auto [train_part, held] = split_by_fold(dataset, cfg.holdout_fold);
  if (train_part.empty() || held.empty()) {
    throw std::invalid_argument("holdout fold " + std::to_string(cfg.holdout_fold) +
                                " leaves an empty split");
  }
  std::vector<SweepRow> rows(grid.size());
  run_jobs(grid.size(), workers, [&](std::size_t i) {
    const TrainResult r = train(train_part, &held, configs[i]);
    rows[i] = SweepRow{param, grid[i], r.eval_metrics.wa, r.eval_metrics.ua};
  });
  return rows;
}

void write_metrics_csv(std::ostream& out, std::uint32_t fold, const std::vector<EpochLog>& log,
                       bool header) {
  if (header) out << "fold,epoch,split,wa,ua,loss\n";
  out << std::setprecision(10);
  for (const auto& e : log) {
    out << fold << ',' << e.epoch << ",train," << e.train_wa << ',' << e.train_ua << ','
        << e.train_loss << '\n';
    if (e.has_eval) {
      out << fold << ',' << e.epoch << ",eval," << e.eval_wa << ',' << e.eval_ua << ','
          << e.eval_loss << '\n';
    }
  }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "param,value,wa,ua\n" << std::setprecision(10);
  for (const auto& r : rows) out << r.param << ',' << r.value << ',' << r.wa << ',' << r.ua << '\n';
}

}  // namespace pts
