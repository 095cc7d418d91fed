#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pts/tensor.hpp"

namespace pts {

// One utterance: features[frames, dim] row-major, promoted to double on load.
struct FeatureSequence {
  std::string id;
  std::uint32_t label = 0;
  std::uint32_t fold = 0;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> values;
};

struct Dataset {
  std::uint32_t d_in = 0;
  std::uint32_t num_classes = 0;
  std::vector<FeatureSequence> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// Binary "PTSF" v1 layout, little-endian:
//   magic[4] "PTSF" | version u32 | d_in u32 | num_classes u32 | num_samples u64
//   per sample: label u32 | fold u32 | frames u32 | frames * d_in float32
// Sample ids are kept in a sidecar text manifest (`<path>.manifest`, one
// "id,fold,label" line per sample).
inline constexpr char kDatasetMagic[4] = {'P', 'T', 'S', 'F'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 24;

struct ReadOptions {
  std::uint64_t max_record_bytes = 1ull << 30;
};

Dataset read_dataset(const std::filesystem::path& path, const ReadOptions& options = {});
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);

struct SyntheticSpec {
  std::uint32_t num_classes = 4;
  std::size_t per_class = 100;
  std::size_t frames = 50;
  std::size_t dim = 768;
  std::uint64_t seed = 42;
  std::uint32_t folds = 5;
};

// Class c: x[t] = (1.5 + 0.5 sin(2 pi (c + 1) t / T)) * mu_c + N(0, 1) noise,
// mu_c a fixed random unit-RMS direction. Samples are class-major; folds are
// assigned round-robin within each class.
Dataset gen_synthetic(const SyntheticSpec& spec);
// The class directions mu_c used by gen_synthetic for the same spec.
std::vector<std::vector<double>> synthetic_directions(const SyntheticSpec& spec);

// Interchange text: first line "label T D", then T lines of D decimals.
FeatureSequence read_interchange_text(const std::filesystem::path& path);

// Rejects empty datasets, ragged dims and out-of-range labels.
void validate(const Dataset& dataset);

// (samples with fold != held_out, samples with fold == held_out)
std::pair<Dataset, Dataset> split_by_fold(const Dataset& dataset, std::uint32_t held_out);
std::vector<std::uint32_t> fold_ids(const Dataset& dataset);

struct Batch {
  Tensor features;  // [B, T, D]
  std::vector<std::size_t> labels;
};

// All indexed samples must share the same frame count.
Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices);

}  // namespace pts
