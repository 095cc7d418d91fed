#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pts/model.hpp"

namespace pts {

// Binary "PTSC" v1 layout, little-endian:
//   magic[4] "PTSC" | version u32 | config_bytes u32 | config text
//   tensor_count u32, then per tensor:
//   name_bytes u32 | name | ndim u32 | dims u64[ndim] | numel float64 values
// The config text is the resolved key=value dump needed to rebuild the model.
inline constexpr char kCheckpointMagic[4] = {'P', 'T', 'S', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  std::vector<NamedTensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                      PtsSnn& model);
// Throws FormatError on malformed input; tensors never exceed `max_bytes`.
Checkpoint read_checkpoint(const std::filesystem::path& path,
                           std::uint64_t max_bytes = 1ull << 30);

}  // namespace pts
