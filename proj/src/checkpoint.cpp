#include "snpg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace snpg {
namespace {

constexpr char kMagic[] = "SNPG1";
constexpr size_t kMagicLen = 5;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u64(std::ofstream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

bool get_u64(std::ifstream& in, uint64_t& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return static_cast<size_t>(in.gcount()) == sizeof v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + tmp.string());
    out.write(kMagic, kMagicLen);
    for (const auto& t : tensors) {
      put_u64(out, t.name.size());
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put_u64(out, static_cast<uint64_t>(t.tensor.rank()));
      for (int64_t d : t.tensor.shape()) put_u64(out, static_cast<uint64_t>(d));
      out.write(reinterpret_cast<const char*>(t.tensor.data()),
                static_cast<std::streamsize>(sizeof(float) * t.tensor.size()));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (static_cast<size_t>(in.gcount()) != kMagicLen || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw std::runtime_error("not a checkpoint file (bad magic): " + path.string());
  }
  std::vector<NamedTensor> out;
  uint64_t name_len;
  while (get_u64(in, name_len)) {
    auto corrupt = [&] { return std::runtime_error("truncated checkpoint record in " + path.string()); };
    if (name_len > (1u << 20)) throw corrupt();
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    uint64_t rank;
    if (static_cast<uint64_t>(in.gcount()) != name_len || !get_u64(in, rank) || rank > 16) {
      throw corrupt();
    }
    Shape shape(rank);
    for (auto& d : shape) {
      uint64_t v;
      if (!get_u64(in, v) || v == 0) throw corrupt();
      d = static_cast<int64_t>(v);
    }
    NdArray<float> tensor(shape);
    const auto bytes = static_cast<std::streamsize>(sizeof(float) * tensor.size());
    in.read(reinterpret_cast<char*>(tensor.data()), bytes);
    if (in.gcount() != bytes) throw corrupt();
    out.push_back({std::move(name), std::move(tensor)});
  }
  return out;
}

}  // namespace snpg
