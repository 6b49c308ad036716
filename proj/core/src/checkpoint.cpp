#include "blindsr/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "blindsr/common.hpp"

namespace blindsr {

namespace {

constexpr char kMagic[4] = {'B', 'D', 'T', 'N'};
constexpr uint16_t kVersion = 1;

// This codebase targets little-endian hosts; the on-disk format is LE.
static_assert(std::endian::native == std::endian::little,
              "BDTN writer assumes a little-endian host");

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  BSR_CHECK(is.good(), "BDTN: truncated file");
  return v;
}

}  // namespace

void save_tensors(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  BSR_CHECK(os.is_open(), "cannot open for writing: " << path);
  os.write(kMagic, 4);
  write_pod<uint16_t>(os, kVersion);
  write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(os, static_cast<uint8_t>(t.rank()));
    for (int64_t e : t.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  BSR_CHECK(os.good(), "write failure: " << path);
}

NamedTensors load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  BSR_CHECK(is.is_open(), "cannot open: " << path);
  char magic[4];
  is.read(magic, 4);
  BSR_CHECK(is.good() && std::memcmp(magic, kMagic, 4) == 0,
            "not a BDTN file: " << path);
  uint16_t version = read_pod<uint16_t>(is);
  BSR_CHECK(version == kVersion, "unsupported BDTN version " << version);
  uint32_t count = read_pod<uint32_t>(is);
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint8_t rank = read_pod<uint8_t>(is);
    Shape shape(rank);
    for (uint8_t d = 0; d < rank; ++d)
      shape[d] = static_cast<int64_t>(read_pod<uint64_t>(is));
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    BSR_CHECK(is.good(), "BDTN: truncated tensor payload in " << path);
    out.emplace_back(std::move(name),
                     Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace blindsr
