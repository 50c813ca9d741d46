#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "msptr/model.hpp"

// Layout (all integers little-endian u32):
//   "MSPTRCKP" | version | config length | config text (key=value lines)
//   | tensor count | per tensor: name length, name, rank, extents..., f32 values

namespace msptr {

namespace {

constexpr std::string_view kMagic = "MSPTRCKP";
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
    pos_ += 4;
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const ModelParams& params) {
  std::string out(kMagic);
  put_u32(out, kVersion);
  const std::string config = params.config().to_text();
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out += config;
  const ParameterSet& set = params.params();
  put_u32(out, static_cast<std::uint32_t>(set.size()));
  for (const auto& [name, tensor] : set.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto extent : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(extent));
    for (double v : tensor.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

ModelParams checkpoint_from_bytes(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size()) != kMagic) throw std::runtime_error("not a checkpoint (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t config_len = in.u32();
  ModelParams params(ModelConfig::from_text(in.take(config_len)));
  ParameterSet& set = params.params();
  const std::uint32_t count = in.u32();
  if (count != set.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                             std::to_string(set.size()));
  }
  for (std::size_t slot = 0; slot < count; ++slot) {
    const std::string name(in.take(in.u32()));
    if (name != set.name(slot)) {
      throw std::runtime_error("checkpoint tensor " + std::to_string(slot) + " is '" + name + "', expected '" +
                               set.name(slot) + "'");
    }
    std::vector<std::size_t> shape(in.u32());
    for (auto& extent : shape) extent = in.u32();
    if (shape != set[slot].shape()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                               set[slot].shape_string());
    }
    for (double& v : set[slot].values()) v = static_cast<double>(std::bit_cast<float>(in.u32()));
  }
  if (!in.done()) throw std::runtime_error("trailing bytes after checkpoint tensors");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = checkpoint_bytes(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_bytes(buffer.str());
}

}  // namespace msptr
