#include "pts/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pts/checkpoint.hpp"
#include "pts/config.hpp"
#include "pts/dataset.hpp"
#include "pts/energy.hpp"
#include "pts/pipeline_check.hpp"
#include "pts/trainer.hpp"

namespace pts {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Exit {
  int code;
  std::string message;
};

struct RunArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

RunConfig resolve_config(const RunArgs& a) {
  try {
    RunConfig cfg = a.config.empty() ? parse_run_config("") : load_run_config(a.config);
    for (const auto& kv : a.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!a.data.empty()) cfg.data = a.data;
    if (!a.out.empty()) cfg.out = a.out;
    if (a.seed) cfg.train.seed = *a.seed;
    validate_run_config(cfg);
    return cfg;
  } catch (const std::invalid_argument& e) {
    throw Exit{kExitConfig, e.what()};
  }
}

Dataset load_data(const std::string& path, const ModelConfig* model) {
  if (path.empty()) throw Exit{kExitData, "no dataset given (use --data or the 'data' key)"};
  if (!fs::exists(path)) throw Exit{kExitData, "dataset not found: " + path};
  try {
    Dataset ds = read_dataset(path);
    if (model != nullptr) {
      if (ds.d_in != model->input_dim()) {
        throw Exit{kExitData, "dataset d_in " + std::to_string(ds.d_in) +
                                  " does not match encoder input width " +
                                  std::to_string(model->input_dim())};
      }
      if (ds.num_classes != model->num_classes) {
        throw Exit{kExitData, "dataset has " + std::to_string(ds.num_classes) +
                                  " classes but model.num_classes is " +
                                  std::to_string(model->num_classes)};
      }
    }
    return ds;
  } catch (const Exit&) {
    throw;
  } catch (const std::exception& e) {
    throw Exit{kExitData, std::string("cannot load ") + path + ": " + e.what()};
  }
}

// Runs `body`, mapping numeric failures to exit 3.
template <typename F>
auto guarded(F body) {
  try {
    return body();
  } catch (const Exit&) {
    throw;
  } catch (const NumericError& e) {
    throw Exit{kExitNumeric, std::string("numeric failure: ") + e.what()};
  } catch (const std::invalid_argument& e) {
    throw Exit{kExitData, e.what()};
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Exit{kExitData, "cannot write " + path.string()};
  f << text;
  if (!f) throw Exit{kExitData, "write failed for " + path.string()};
}

fs::path prepare_out(const std::string& dir) {
  if (dir.empty()) throw Exit{kExitConfig, "no output directory given (use --out or the 'out' key)"};
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Exit{kExitData, "cannot create " + dir + ": " + ec.message()};
  return fs::path(dir);
}

struct Loaded {
  RunConfig cfg;
  PtsSnn model;
};

Loaded load_model(const std::string& checkpoint) {
  Checkpoint ck;
  try {
    ck = read_checkpoint(checkpoint);
  } catch (const std::exception& e) {
    throw Exit{kExitData, "cannot load checkpoint " + checkpoint + ": " + e.what()};
  }
  RunConfig cfg;
  try {
    cfg = parse_run_config(ck.config_text);
  } catch (const std::invalid_argument& e) {
    throw Exit{kExitConfig, std::string("checkpoint config: ") + e.what()};
  }
  PtsSnn model(cfg.train.model, cfg.train.seed);
  try {
    load_state(model, ck.tensors);
  } catch (const std::exception& e) {
    throw Exit{kExitData, "checkpoint does not match its config: " + std::string(e.what())};
  }
  return Loaded{std::move(cfg), std::move(model)};
}

json metrics_json(const Metrics& m) {
  return json{{"wa", m.wa}, {"ua", m.ua}, {"loss", m.loss}, {"confusion", m.confusion}};
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> grid;
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw Exit{kExitConfig, "bad grid value '" + s + "'"};
    return v;
  };
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw Exit{kExitConfig, "range grid must be start:stop:step"};
    const double a = number(parts[0]), b = number(parts[1]), step = number(parts[2]);
    if (!(step > 0.0) || b < a) throw Exit{kExitConfig, "range grid needs step > 0 and stop >= start"};
    const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) {
      grid.push_back(std::round((a + static_cast<double>(i) * step) * 1e12) / 1e12);
    }
  } else {
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ',');) grid.push_back(number(p));
  }
  if (grid.empty()) throw Exit{kExitConfig, "sweep grid is empty"};
  return grid;
}

std::pair<Dataset, std::optional<Dataset>> holdout_split(const Dataset& ds, std::uint32_t fold,
                                                         std::ostream& err) {
  auto [train_part, held] = split_by_fold(ds, fold);
  if (held.empty() || train_part.empty()) {
    err << "note: fold " << fold << " does not split the data; training on all samples\n";
    return {ds, std::nullopt};
  }
  return {std::move(train_part), std::move(held)};
}

void add_run_options(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--config", a.config, "key=value config file (defaults when omitted)");
  cmd->add_option("--data", a.data, "PTSF dataset");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--seed", a.seed, "override train.seed");
  cmd->add_option("--set", a.sets, "override one config key (key=value), repeatable");
}

int cmd_train(const RunArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve_config(a);
  const Dataset ds = load_data(cfg.data, &cfg.train.model);
  if (cfg.out.empty()) throw Exit{kExitConfig, "no output directory given (use --out or the 'out' key)"};
  auto [train_part, held] = holdout_split(ds, cfg.train.holdout_fold, err);
  TrainResult r = guarded([&] { return train(train_part, held ? &*held : nullptr, cfg.train); });

  const fs::path dir = prepare_out(cfg.out);
  const std::string dump = dump_run_config(cfg);
  write_text(dir / "config.resolved.txt", dump);
  try {
    write_checkpoint(dir / "checkpoint.ptsc", dump, r.model);
  } catch (const std::exception& e) {
    throw Exit{kExitData, e.what()};
  }
  std::ostringstream metrics;
  write_metrics_csv(metrics, cfg.train.holdout_fold, r.log);
  write_text(dir / "metrics.csv", metrics.str());
  std::ostringstream curve;
  curve << "epoch,lr,loss\n" << std::setprecision(10);
  for (const auto& e : r.log) curve << e.epoch << ',' << e.lr << ',' << e.train_loss << '\n';
  write_text(dir / "loss_curve.csv", curve.str());
  json summary{{"best_epoch", r.best_epoch},
               {"params", param_count(r.model)},
               {"train", metrics_json(r.train_metrics)}};
  if (held) summary["eval"] = metrics_json(r.eval_metrics);
  write_text(dir / "summary.json", summary.dump() + "\n");
  out << summary.dump() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& out_dir,
             std::ostream& out) {
  Loaded loaded = load_model(checkpoint);
  const Dataset ds = load_data(data, &loaded.cfg.train.model);
  const Metrics m = guarded([&] {
    return evaluate(loaded.model, ds, loaded.cfg.train.loss, loaded.cfg.train.batch_size);
  });
  const json j = metrics_json(m);
  if (!out_dir.empty()) {
    const fs::path dir = prepare_out(out_dir);
    RunConfig cfg = loaded.cfg;
    cfg.data = data;
    cfg.out = out_dir;
    write_text(dir / "config.resolved.txt", dump_run_config(cfg));
    write_text(dir / "eval.json", j.dump() + "\n");
  }
  out << j.dump() << '\n';
  return kExitOk;
}

Dataset refold(Dataset ds, const std::string& folds) {
  if (folds == "auto") return ds;
  std::size_t k = 0;
  try {
    k = std::stoul(folds);
  } catch (const std::exception&) {
    throw Exit{kExitConfig, "--folds expects 'auto' or a count >= 2"};
  }
  if (k < 2) throw Exit{kExitConfig, "--folds expects 'auto' or a count >= 2"};
  std::vector<std::size_t> seen(ds.num_classes, 0);
  for (auto& s : ds.samples) s.fold = static_cast<std::uint32_t>(seen[s.label]++ % k);
  return ds;
}

int cmd_cv(const RunArgs& a, const std::string& folds, std::ostream& out) {
  RunConfig cfg = resolve_config(a);
  const Dataset ds = refold(load_data(cfg.data, &cfg.train.model), folds);
  if (cfg.out.empty()) throw Exit{kExitConfig, "no output directory given (use --out or the 'out' key)"};
  const CrossValidation cv =
      guarded([&] { return cross_validate(ds, cfg.train, worker_count_from_env()); });
  const fs::path dir = prepare_out(cfg.out);
  write_text(dir / "config.resolved.txt", dump_run_config(cfg));
  std::ostringstream metrics;
  std::ostringstream summary;
  summary << "fold,train_size,eval_size,wa,ua\n" << std::setprecision(10);
  for (std::size_t i = 0; i < cv.folds.size(); ++i) {
    const auto& f = cv.folds[i];
    write_metrics_csv(metrics, f.fold, f.result.log, i == 0);
    summary << f.fold << ',' << f.train_size << ',' << f.eval_size << ','
            << f.result.eval_metrics.wa << ',' << f.result.eval_metrics.ua << '\n';
  }
  summary << "mean,,," << cv.mean_wa << ',' << cv.mean_ua << '\n';
  write_text(dir / "metrics.csv", metrics.str());
  write_text(dir / "cv_summary.csv", summary.str());
  out << summary.str();
  return kExitOk;
}

int cmd_sweep(const RunArgs& a, const std::string& param, const std::string& grid_spec,
              std::ostream& out) {
  RunConfig cfg = resolve_config(a);
  if (param != "prompt_length" && param != "kappa") {
    throw Exit{kExitConfig, "--param must be prompt_length or kappa"};
  }
  const std::vector<double> grid = parse_grid(grid_spec);
  for (double v : grid) {
    try {
      with_param(cfg.train, param, v);
    } catch (const std::invalid_argument& e) {
      throw Exit{kExitConfig, "grid value " + std::to_string(v) + ": " + e.what()};
    }
  }
  const Dataset ds = load_data(cfg.data, &cfg.train.model);
  if (cfg.out.empty()) throw Exit{kExitConfig, "no output directory given (use --out or the 'out' key)"};
  const auto rows = guarded([&] { return sweep(ds, cfg.train, param, grid, worker_count_from_env()); });
  const fs::path dir = prepare_out(cfg.out);
  write_text(dir / "config.resolved.txt",
             dump_run_config(cfg) + "# sweep " + param + " over " + grid_spec + "\n");
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  write_text(dir / "sweep.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

int cmd_energy(const std::string& checkpoint, const std::string& data, const std::string& out_dir,
               std::ostream& out) {
  Loaded loaded = load_model(checkpoint);
  const Dataset ds = load_data(data, &loaded.cfg.train.model);
  const EnergyReport report = guarded([&] { return profile_energy(loaded.model, ds); });
  const auto diagnostics = guarded([&] { return firing_rate_diagnostics(loaded.model, ds); });
  std::ostringstream csv;
  write_energy_csv(csv, report);
  std::ostringstream diag;
  write_diagnostic_csv(diag, diagnostics);
  if (!out_dir.empty()) {
    const fs::path dir = prepare_out(out_dir);
    RunConfig cfg = loaded.cfg;
    cfg.data = data;
    cfg.out = out_dir;
    write_text(dir / "config.resolved.txt", dump_run_config(cfg));
    write_text(dir / "energy.csv", csv.str());
    write_text(dir / "firing_rates.csv", diag.str());
    write_text(dir / "energy.json", energy_summary_json(report) + "\n");
  }
  out << csv.str();
  for (const auto& d : diagnostics) {
    out << "# stage " << d.stage << " mean_rate=" << d.mean_rate
        << (d.silence ? " SILENCE" : "") << (d.saturation ? " SATURATION" : "") << '\n';
  }
  out << energy_summary_json(report) << '\n';
  return kExitOk;
}

int cmd_gradcheck(const std::string& dims, const std::string& fault, std::ostream& out,
                  std::ostream& err) {
  if (dims != "small") throw Exit{kExitConfig, "--dims supports only 'small'"};
  gradcheck::PipelineOptions opts;
  if (!fault.empty()) opts.inject_fault = fault;
  std::vector<gradcheck::StageReport> reports;
  try {
    reports = gradcheck::check_pipeline(opts);
  } catch (const std::invalid_argument& e) {
    throw Exit{kExitConfig, e.what()};
  } catch (const NumericError& e) {
    throw Exit{kExitNumeric, e.what()};
  }
  out << "# T=" << opts.steps << " D_in=" << opts.dims.front() << " dims=";
  for (std::size_t i = 0; i < opts.dims.size(); ++i) out << (i ? "," : "") << opts.dims[i];
  out << " L_p=" << opts.prompt_length << " K=" << opts.classes << " tolerance=" << opts.tolerance
      << "\nstage,elements,max_rel_error,status\n";
  std::vector<std::string> failed;
  for (const auto& r : reports) {
    out << r.stage << ',' << r.elements << ',' << r.max_rel_error << ',' << (r.passed ? "ok" : "FAIL")
        << '\n';
    if (!r.passed) failed.push_back(r.stage);
  }
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    err << "error: gradient check failed at stage(s): " << names << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_gen_synthetic(const SyntheticSpec& spec, const std::string& out_path, std::ostream& out) {
  Dataset ds;
  try {
    ds = gen_synthetic(spec);
  } catch (const std::invalid_argument& e) {
    throw Exit{kExitConfig, e.what()};
  }
  try {
    write_dataset(ds, out_path);
  } catch (const std::exception& e) {
    throw Exit{kExitData, e.what()};
  }
  std::ostringstream params;
  params << "classes = " << spec.num_classes << "\nper_class = " << spec.per_class
         << "\nframes = " << spec.frames << "\ndim = " << spec.dim << "\nseed = " << spec.seed
         << "\nfolds = " << spec.folds << '\n';
  write_text(out_path + ".synthetic.txt", params.str());
  out << "wrote " << ds.size() << " samples to " << out_path << '\n';
  return kExitOk;
}

int cmd_convert(const std::vector<std::string>& inputs, std::uint32_t classes, std::uint32_t folds,
                const std::string& out_path, std::ostream& out) {
  if (inputs.empty()) throw Exit{kExitConfig, "convert needs at least one input file"};
  if (folds == 0) throw Exit{kExitConfig, "--folds must be >= 1"};
  Dataset ds;
  ds.num_classes = classes;
  try {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      FeatureSequence s = read_interchange_text(inputs[i]);
      if (i == 0) ds.d_in = static_cast<std::uint32_t>(s.dim);
      s.fold = static_cast<std::uint32_t>(i % folds);
      ds.samples.push_back(std::move(s));
    }
    validate(ds);
    write_dataset(ds, out_path);
  } catch (const std::exception& e) {
    throw Exit{kExitData, e.what()};
  }
  out << "wrote " << ds.size() << " samples to " << out_path << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt-tuned spiking classifier over precomputed speech features"};
  app.name("pts_snn");
  app.require_subcommand(1);

  RunArgs train_args, cv_args, sweep_args;
  auto* train_cmd = app.add_subcommand("train", "train one model, holding out train.holdout_fold");
  add_run_options(train_cmd, train_args);

  std::string folds = "auto";
  auto* cv_cmd = app.add_subcommand("cv", "cross-validate over the dataset's fold ids");
  add_run_options(cv_cmd, cv_args);
  cv_cmd->add_option("--folds", folds, "'auto' (dataset folds) or a count to reassign")
      ->capture_default_str();

  std::string param, grid;
  auto* sweep_cmd = app.add_subcommand("sweep", "train once per grid value of one parameter");
  add_run_options(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--param", param, "prompt_length or kappa")->required();
  sweep_cmd->add_option("--grid", grid, "start:stop:step or v1,v2,...")->required();

  std::string eval_ck, eval_data, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_ck, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "PTSF dataset")->required();
  eval_cmd->add_option("--out", eval_out, "optional output directory");

  std::string energy_ck, energy_data, energy_out;
  auto* energy_cmd = app.add_subcommand("energy", "MAC/AC energy estimate and firing-rate report");
  energy_cmd->add_option("--checkpoint", energy_ck, "checkpoint file")->required();
  energy_cmd->add_option("--data", energy_data, "PTSF dataset")->required();
  energy_cmd->add_option("--out", energy_out, "optional output directory");

  std::string gc_dims = "small", gc_fault;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  gc_cmd->add_option("--dims", gc_dims, "problem size (small)")->capture_default_str();
  gc_cmd->add_option("--inject-fault", gc_fault,
                     "corrupt the backward pass after a stage (encoder, ssla, bias_generator, backend)");

  SyntheticSpec syn;
  std::string syn_out;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a seeded synthetic dataset");
  gen_cmd->add_option("--classes", syn.num_classes, "number of classes")->capture_default_str();
  gen_cmd->add_option("--per-class", syn.per_class, "samples per class")->capture_default_str();
  gen_cmd->add_option("--t", syn.frames, "frames per sample")->capture_default_str();
  gen_cmd->add_option("--d", syn.dim, "feature width")->capture_default_str();
  gen_cmd->add_option("--seed", syn.seed, "generator seed")->capture_default_str();
  gen_cmd->add_option("--folds", syn.folds, "round-robin fold count")->capture_default_str();
  gen_cmd->add_option("--out", syn_out, "output PTSF path")->required();

  std::vector<std::string> conv_inputs;
  std::uint32_t conv_classes = 4, conv_folds = 5;
  std::string conv_out;
  auto* conv_cmd = app.add_subcommand("convert", "pack interchange text files into PTSF");
  conv_cmd->add_option("inputs", conv_inputs, "text files, one sample each")->required();
  conv_cmd->add_option("--classes", conv_classes, "number of classes")->capture_default_str();
  conv_cmd->add_option("--folds", conv_folds, "round-robin fold count")->capture_default_str();
  conv_cmd->add_option("--out", conv_out, "output PTSF path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, out, err);
    if (*cv_cmd) return cmd_cv(cv_args, folds, out);
    if (*sweep_cmd) return cmd_sweep(sweep_args, param, grid, out);
    if (*eval_cmd) return cmd_eval(eval_ck, eval_data, eval_out, out);
    if (*energy_cmd) return cmd_energy(energy_ck, energy_data, energy_out, out);
    if (*gc_cmd) return cmd_gradcheck(gc_dims, gc_fault, out, err);
    if (*gen_cmd) return cmd_gen_synthetic(syn, syn_out, out);
    if (*conv_cmd) return cmd_convert(conv_inputs, conv_classes, conv_folds, conv_out, out);
  } catch (const Exit& e) {
    err << "error: " << e.message << '\n';
    return e.code;
  }
  return kExitConfig;
}

}  // namespace pts
