#include "pts/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pts/dataset.hpp"

namespace pts {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Cursor {
 public:
  explicit Cursor(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t offset() const { return pos_; }

  const unsigned char* take(std::uint64_t n, const char* what) {
    if (n > bytes_.size() - pos_) throw FormatError(std::string("truncated ") + what, pos_);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }

  std::uint32_t u32(const char* what) {
    const auto* p = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  std::uint64_t u64(const char* what) {
    const auto* p = take(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::uint64_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                      PtsSnn& model) {
  std::string buf;
  buf.append(kCheckpointMagic, 4);
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(config_text.size()));
  buf += config_text;
  const auto state = model.state();
  put_u32(buf, static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, t] : state) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_u32(buf, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) put_u64(buf, d);
    for (double v : t.data()) put_u64(buf, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path, std::uint64_t max_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Cursor cur(bytes);
  const auto* magic = cur.take(4, "header");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("bad magic, expected PTSC", 0);
  const std::uint32_t version = cur.u32("header");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  Checkpoint ck;
  const std::uint32_t config_len = cur.u32("header");
  const auto* text = cur.take(config_len, "config text");
  ck.config_text.assign(reinterpret_cast<const char*>(text), config_len);
  const std::uint32_t count = cur.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = cur.u32("tensor name");
    const auto* name = cur.take(name_len, "tensor name");
    NamedTensor nt;
    nt.name.assign(reinterpret_cast<const char*>(name), name_len);
    const std::uint64_t at = cur.offset();
    const std::uint32_t ndim = cur.u32("tensor rank");
    if (ndim == 0 || ndim > 8) throw FormatError("tensor '" + nt.name + "' has invalid rank", at);
    Shape shape(ndim);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = cur.u64("tensor dims");
      if (d == 0 || numel > max_bytes / 8 / d) {
        throw FormatError("tensor '" + nt.name + "' has invalid or oversized dims", at);
      }
      numel *= d;
    }
    const auto* raw = cur.take(numel * 8, "tensor values");
    std::vector<double> values(numel);
    for (std::uint64_t k = 0; k < numel; ++k) {
      std::uint64_t v = 0;
      for (int b = 7; b >= 0; --b) v = (v << 8) | raw[8 * k + b];
      values[k] = std::bit_cast<double>(v);
    }
    nt.tensor = Tensor(std::move(shape), std::move(values));
    ck.tensors.push_back(std::move(nt));
  }
  if (!cur.done()) throw FormatError("trailing bytes after last tensor", cur.offset());
  return ck;
}

}  // namespace pts
