#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pts/trainer.hpp"

namespace pts {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Everything a run needs. Serialized as flat `key = value` lines; `#` starts a
// comment line. An empty file yields the defaults.
struct RunConfig {
  TrainConfig train;
  std::string data;  // dataset path
  std::string out;   // output directory
};

struct ConfigKey {
  std::string name;
  std::string description;
};

// Every accepted key in dump order.
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError on unknown or duplicate keys and malformed values, then
// validates the assembled configuration.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// Sets one key (same syntax as the file); does not re-validate.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);

// Full resolved dump: every key, values printed so that parsing reproduces
// them exactly.
std::string dump_run_config(const RunConfig& cfg);

// Validates and rethrows any failure as ConfigError.
void validate_run_config(const RunConfig& cfg);

}  // namespace pts
