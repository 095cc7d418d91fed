#include "pts/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace pts {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

class Reader {
 public:
  Reader(std::ifstream& in, std::uint64_t size) : in_(in), size_(size) {}

  std::uint64_t offset() const { return offset_; }
  std::uint64_t remaining() const { return size_ - offset_; }

  void read(unsigned char* dst, std::uint64_t n, const std::string& what) {
    if (n > remaining()) throw FormatError("truncated " + what, offset_);
    in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("read failure in " + what, offset_);
    offset_ += n;
  }

 private:
  std::ifstream& in_;
  std::uint64_t size_;
  std::uint64_t offset_ = 0;
};

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p += ".manifest";
  return p;
}

void validate(const Dataset& dataset) {
  if (dataset.empty()) throw std::invalid_argument("dataset has no samples");
  if (dataset.d_in == 0) throw std::invalid_argument("dataset d_in must be > 0");
  if (dataset.num_classes < 2) throw std::invalid_argument("dataset needs at least two classes");
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    if (s.dim != dataset.d_in) {
      throw std::invalid_argument("sample " + std::to_string(i) + " has dim " +
                                  std::to_string(s.dim) + ", dataset d_in is " +
                                  std::to_string(dataset.d_in));
    }
    if (s.frames == 0 || s.values.size() != s.frames * s.dim) {
      throw std::invalid_argument("sample " + std::to_string(i) + " has inconsistent frame data");
    }
    if (s.label >= dataset.num_classes) {
      throw std::invalid_argument("sample " + std::to_string(i) + " label " +
                                  std::to_string(s.label) + " >= num_classes " +
                                  std::to_string(dataset.num_classes));
    }
  }
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  validate(dataset);
  std::string buf;
  buf.append(kDatasetMagic, 4);
  put_u32(buf, kDatasetVersion);
  put_u32(buf, dataset.d_in);
  put_u32(buf, dataset.num_classes);
  put_u64(buf, dataset.samples.size());
  std::ostringstream manifest;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    put_u32(buf, s.label);
    put_u32(buf, s.fold);
    put_u32(buf, static_cast<std::uint32_t>(s.frames));
    for (double v : s.values) put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    manifest << (s.id.empty() ? "sample_" + std::to_string(i) : s.id) << ',' << s.fold << ','
             << s.label << '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
  std::ofstream man(manifest_path(path), std::ios::trunc);
  if (!man) throw std::runtime_error("cannot open " + manifest_path(path).string() + " for writing");
  man << manifest.str();
  if (!man) throw std::runtime_error("write failed for " + manifest_path(path).string());
}

Dataset read_dataset(const std::filesystem::path& path, const ReadOptions& options) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw std::runtime_error("cannot stat " + path.string() + ": " + ec.message());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Reader reader(in, size);

  unsigned char header[kDatasetHeaderBytes];
  reader.read(header, kDatasetHeaderBytes, "header");
  if (std::memcmp(header, kDatasetMagic, 4) != 0) throw FormatError("bad magic, expected PTSF", 0);
  const std::uint32_t version = get_u32(header + 4);
  if (version != kDatasetVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  Dataset ds;
  ds.d_in = get_u32(header + 8);
  ds.num_classes = get_u32(header + 12);
  const std::uint64_t count = get_u64(header + 16);
  if (ds.d_in == 0) throw FormatError("d_in must be > 0", 8);
  if (ds.num_classes < 2) throw FormatError("num_classes must be >= 2", 12);
  if (count == 0) throw FormatError("dataset declares zero samples", 16);
  // Each record needs at least its 12-byte prefix plus one frame.
  const std::uint64_t min_record = 12 + 4ull * ds.d_in;
  if (count > reader.remaining() / min_record) {
    throw FormatError("sample count " + std::to_string(count) + " exceeds file size", 16);
  }

  ds.samples.reserve(count);
  std::vector<unsigned char> raw;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t start = reader.offset();
    unsigned char prefix[12];
    reader.read(prefix, 12, "record prefix of sample " + std::to_string(i));
    FeatureSequence s;
    s.label = get_u32(prefix);
    s.fold = get_u32(prefix + 4);
    s.frames = get_u32(prefix + 8);
    s.dim = ds.d_in;
    if (s.frames == 0) throw FormatError("sample " + std::to_string(i) + " has zero frames", start + 8);
    if (s.label >= ds.num_classes) {
      throw FormatError("sample " + std::to_string(i) + " label " + std::to_string(s.label) +
                            " >= num_classes " + std::to_string(ds.num_classes),
                        start);
    }
    const std::uint64_t bytes = 4ull * s.frames * ds.d_in;
    if (bytes > options.max_record_bytes) {
      throw FormatError("sample " + std::to_string(i) + " record exceeds size cap", start + 8);
    }
    if (bytes > reader.remaining()) {
      throw FormatError("truncated record for sample " + std::to_string(i), reader.offset());
    }
    raw.resize(bytes);
    reader.read(raw.data(), bytes, "sample " + std::to_string(i));
    s.values.resize(s.frames * ds.d_in);
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      s.values[k] = static_cast<double>(std::bit_cast<float>(get_u32(raw.data() + 4 * k)));
    }
    s.id = "sample_" + std::to_string(i);
    ds.samples.push_back(std::move(s));
  }
  if (reader.remaining() != 0) throw FormatError("trailing bytes after last sample", reader.offset());

  std::ifstream man(manifest_path(path));
  if (man) {
    std::string line;
    std::size_t i = 0;
    while (std::getline(man, line)) {
      if (line.empty()) continue;
      if (i >= ds.samples.size()) throw FormatError("manifest has more lines than samples", 0);
      const auto comma = line.find(',');
      ds.samples[i].id = line.substr(0, comma);
      ++i;
    }
    if (i != ds.samples.size()) throw FormatError("manifest has fewer lines than samples", 0);
  }
  return ds;
}

namespace {

void check_spec(const SyntheticSpec& spec) {
  if (spec.num_classes < 2 || spec.per_class == 0 || spec.frames == 0 || spec.dim == 0 ||
      spec.folds == 0) {
    throw std::invalid_argument("gen_synthetic: all sizes must be positive (classes >= 2)");
  }
}

std::vector<std::vector<double>> draw_directions(const SyntheticSpec& spec,
                                                 std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> directions(spec.num_classes, std::vector<double>(spec.dim));
  for (auto& dir : directions) {
    double ss = 0.0;
    for (auto& v : dir) {
      v = gauss(rng);
      ss += v * v;
    }
    const double rms = std::sqrt(ss / static_cast<double>(spec.dim));
    for (auto& v : dir) v /= rms;
  }
  return directions;
}

}  // namespace

std::vector<std::vector<double>> synthetic_directions(const SyntheticSpec& spec) {
  check_spec(spec);
  std::mt19937_64 rng(spec.seed);
  return draw_directions(spec, rng);
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  check_spec(spec);
  std::mt19937_64 rng(spec.seed);
  const auto directions = draw_directions(spec, rng);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset ds;
  ds.d_in = static_cast<std::uint32_t>(spec.dim);
  ds.num_classes = spec.num_classes;
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t n = 0; n < spec.per_class; ++n) {
      FeatureSequence s;
      s.id = "syn_c" + std::to_string(c) + "_" + std::to_string(n);
      s.label = c;
      s.fold = static_cast<std::uint32_t>(n % spec.folds);
      s.frames = spec.frames;
      s.dim = spec.dim;
      s.values.resize(spec.frames * spec.dim);
      for (std::size_t t = 0; t < spec.frames; ++t) {
        const double amp = 1.5 + 0.5 * std::sin(two_pi * (c + 1) * static_cast<double>(t) /
                                                static_cast<double>(spec.frames));
        for (std::size_t d = 0; d < spec.dim; ++d) {
          // Stored as float32; keep the generated values exactly representable.
          s.values[t * spec.dim + d] =
              static_cast<float>(amp * directions[c][d] + gauss(rng));
        }
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

FeatureSequence read_interchange_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  FeatureSequence s;
  long long label = -1, frames = 0, dim = 0;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty interchange file", 0);
  std::istringstream head(line);
  if (!(head >> label >> frames >> dim) || label < 0 || frames <= 0 || dim <= 0) {
    throw FormatError(path.string() + ": header must be 'label T D' with positive T, D", 0);
  }
  s.label = static_cast<std::uint32_t>(label);
  s.frames = static_cast<std::size_t>(frames);
  s.dim = static_cast<std::size_t>(dim);
  s.values.reserve(s.frames * s.dim);
  for (std::size_t t = 0; t < s.frames; ++t) {
    if (!std::getline(in, line)) {
      throw FormatError(path.string() + ": missing frame " + std::to_string(t), t + 1);
    }
    std::istringstream row(line);
    for (std::size_t d = 0; d < s.dim; ++d) {
      double v;
      if (!(row >> v)) {
        throw FormatError(path.string() + ": frame " + std::to_string(t) + " has fewer than " +
                              std::to_string(s.dim) + " values",
                          t + 1);
      }
      s.values.push_back(v);
    }
  }
  s.id = path.stem().string();
  return s;
}

std::pair<Dataset, Dataset> split_by_fold(const Dataset& dataset, std::uint32_t held_out) {
  Dataset train{dataset.d_in, dataset.num_classes, {}};
  Dataset test{dataset.d_in, dataset.num_classes, {}};
  for (const auto& s : dataset.samples) (s.fold == held_out ? test : train).samples.push_back(s);
  return {std::move(train), std::move(test)};
}

std::vector<std::uint32_t> fold_ids(const Dataset& dataset) {
  std::vector<std::uint32_t> ids;
  for (const auto& s : dataset.samples) ids.push_back(s.fold);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t frames = dataset.samples.at(indices.front()).frames;
  const std::size_t dim = dataset.d_in;
  std::vector<double> values;
  values.reserve(indices.size() * frames * dim);
  Batch batch;
  for (std::size_t i : indices) {
    const auto& s = dataset.samples.at(i);
    if (s.frames != frames) throw std::invalid_argument("make_batch: mixed sequence lengths");
    if (s.label >= dataset.num_classes) throw std::out_of_range("make_batch: label out of range");
    values.insert(values.end(), s.values.begin(), s.values.end());
    batch.labels.push_back(s.label);
  }
  batch.features = Tensor({indices.size(), frames, dim}, std::move(values));
  return batch;
}

}  // namespace pts
