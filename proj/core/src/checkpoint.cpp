#include "pgr/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace pgr {

namespace {

constexpr char kMagic[4] = {'P', 'G', 'R', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void atomic_write(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedParams& params) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u64(out, static_cast<std::uint64_t>(t.dim(i)));
    for (real v : t.data()) put_f32(out, static_cast<float>(v));
  }
  atomic_write(path, out);
}

NamedParams read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  if (r.bytes(4) != std::string(kMagic, 4)) throw std::runtime_error("bad checkpoint magic");
  std::uint32_t version = r.u32();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version");
  std::uint32_t count = r.u32();
  NamedParams params;
  params.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u64());
    int n = shape_numel(shape);
    std::vector<real> data(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) data[static_cast<std::size_t>(j)] = static_cast<real>(r.f32());
    params.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  return params;
}

void load_checkpoint(const std::string& path, NamedParams& params) {
  NamedParams loaded = read_checkpoint(path);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : loaded) {
    if (!by_name.emplace(name, t).second) throw std::runtime_error("duplicate parameter in checkpoint: " + name);
  }
  if (by_name.size() != params.size()) throw std::runtime_error("checkpoint parameter count mismatch");
  for (auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("parameter missing from checkpoint: " + name);
    if (it->second.shape() != t.shape())
      throw std::runtime_error("parameter shape mismatch for " + name + ": " + shape_str(it->second.shape()) +
                               " vs " + shape_str(t.shape()));
    std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
  }
}

}  // namespace pgr
