#include "pts/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace pts {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + std::string(key) + "': expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + std::string(key) + "': expected a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + std::string(key) + "': expected true or false");
}

std::string real_str(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::size_t> parse_dims(std::string_view key, std::string_view v) {
  std::vector<std::size_t> dims;
  while (!v.empty()) {
    const auto comma = v.find(',');
    dims.push_back(parse_uint(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return dims;
}

std::string dims_str(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s;
}

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PTS_REAL(NAME, FIELD, DOC)                                                           \
  Entry{{NAME, DOC}, [](RunConfig& c, std::string_view v) { c.FIELD = parse_real(NAME, v); }, \
        [](const RunConfig& c) { return real_str(c.FIELD); }}
#define PTS_UINT(NAME, FIELD, DOC)                                                     \
  Entry{{NAME, DOC},                                                                   \
        [](RunConfig& c, std::string_view v) {                                         \
          c.FIELD = static_cast<decltype(c.FIELD)>(parse_uint(NAME, v));               \
        },                                                                             \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{{"data", "dataset path (PTSF); --data overrides"},
            [](RunConfig& c, std::string_view v) { c.data = std::string(v); },
            [](const RunConfig& c) { return c.data; }},
      Entry{{"out", "output directory; --out overrides"},
            [](RunConfig& c, std::string_view v) { c.out = std::string(v); },
            [](const RunConfig& c) { return c.out; }},
      PTS_REAL("encoder.xi", train.model.encoder.xi, "soft-saturation gain"),
      Entry{{"encoder.dims", "encoder widths, input first (comma separated)"},
            [](RunConfig& c, std::string_view v) { c.train.model.encoder.dims = parse_dims("encoder.dims", v); },
            [](const RunConfig& c) { return dims_str(c.train.model.encoder.dims); }},
      PTS_UINT("encoder.shift_div", train.model.encoder.shift_div,
               "1/shift_div of the channels shift each way in time"),
      PTS_REAL("plif.v_threshold", train.model.plif.v_threshold, "firing threshold"),
      PTS_REAL("plif.surrogate_steepness", train.model.plif.surrogate_steepness,
               "logistic surrogate steepness"),
      PTS_REAL("plif.tau_init_raw", train.model.plif.tau_init_raw,
               "initial pre-sigmoid membrane decay"),
      Entry{{"plif.smooth", "emit sigmoid instead of hard spikes (gradient checks only)"},
            [](RunConfig& c, std::string_view v) { c.train.model.plif.smooth = parse_bool("plif.smooth", v); },
            [](const RunConfig& c) { return std::string(c.train.model.plif.smooth ? "true" : "false"); }},
      PTS_UINT("model.prompt_length", train.model.prompt_length, "number of soft prompts"),
      PTS_REAL("model.prompt_init_std", train.model.prompt_init_std, "prompt init std"),
      PTS_REAL("model.eps_norm", train.model.eps_norm, "key column-normalization epsilon"),
      Entry{{"model.column_norm", "key column normalization: sum or abs_sum"},
            [](RunConfig& c, std::string_view v) {
              if (v == "sum") {
                c.train.model.column_norm = ColumnNorm::kSum;
              } else if (v == "abs_sum") {
                c.train.model.column_norm = ColumnNorm::kAbsSum;
              } else {
                throw ConfigError("key 'model.column_norm': expected sum or abs_sum");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.train.model.column_norm == ColumnNorm::kSum ? "sum" : "abs_sum");
            }},
      PTS_UINT("model.bias_hidden", train.model.bias_hidden, "bias generator bottleneck width"),
      PTS_REAL("model.kappa", train.model.kappa, "bias magnitude bound"),
      PTS_UINT("model.backend_hidden", train.model.backend_hidden, "spiking classifier width"),
      PTS_UINT("model.num_classes", train.model.num_classes, "number of classes"),
      PTS_REAL("loss.alpha", train.loss.alpha, "focal loss weight"),
      PTS_REAL("loss.gamma", train.loss.gamma, "focal loss focusing exponent"),
      PTS_REAL("loss.epsilon", train.loss.epsilon, "label smoothing"),
      PTS_REAL("loss.lambda1", train.loss.lambda1, "focal term weight"),
      PTS_REAL("loss.lambda2", train.loss.lambda2, "label-smoothing term weight"),
      PTS_REAL("train.lr", train.lr, "peak learning rate"),
      PTS_REAL("train.weight_decay", train.weight_decay, "decoupled weight decay"),
      PTS_UINT("train.t0_epochs", train.t0_epochs, "first restart period"),
      PTS_UINT("train.t_mult", train.t_mult, "restart period multiplier"),
      PTS_REAL("train.lr_min", train.lr_min, "learning-rate floor"),
      PTS_UINT("train.epochs", train.epochs, "training epochs"),
      PTS_UINT("train.batch_size", train.batch_size, "mini-batch size"),
      PTS_UINT("train.seed", train.seed, "initialization and shuffling seed"),
      PTS_REAL("train.grad_clip", train.grad_clip, "global gradient-norm clip (<= 0 disables)"),
      PTS_UINT("train.holdout_fold", train.holdout_fold, "fold held out by train and sweep"),
  };
  return table;
}

#undef PTS_REAL
#undef PTS_UINT

const Entry& find_entry(std::string_view key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return e;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  find_entry(key).set(cfg, trim(value));
}

std::string get_config_value(const RunConfig& cfg, std::string_view key) {
  return find_entry(key).get(cfg);
}

void validate_run_config(const RunConfig& cfg) {
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    }
    try {
      set_config_value(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) {
    out += "# " + e.key.description + "\n";
    out += e.key.name + " = " + e.get(cfg) + "\n";
  }
  return out;
}

}  // namespace pts
