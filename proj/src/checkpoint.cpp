#include "ssmlab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ssmlab::ckpt {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

// The container is little-endian by specification; this implementation
// assumes a little-endian host (asserted at startup in save/load).
void check_endianness() {
  const std::uint32_t probe = 1;
  char b;
  std::memcpy(&b, &probe, 1);
  if (b != 1) throw std::runtime_error("checkpoint: big-endian hosts unsupported");
}

template <typename T>
void write_raw(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw std::runtime_error(std::string("checkpoint: truncated reading ") + what +
                             " at offset " + std::to_string(is.tellg()));
  return v;
}

}  // namespace

void save(const std::string& path, const NamedTensors& tensors) {
  check_endianness();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_raw(os, kVersion);
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: name too long");
    write_raw(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = t.shape();
    if (shape.size() > 0xFF) throw std::invalid_argument("checkpoint: rank too large");
    write_raw(os, static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) write_raw(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.data().size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

NamedTensors load(const std::string& path) {
  check_endianness();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = read_raw<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  NamedTensors out;
  while (true) {
    std::uint16_t name_len;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (is.eof()) break;
    if (!is) throw std::runtime_error("checkpoint: truncated name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated name at offset " +
                                      std::to_string(is.tellg()));
    const auto rank = read_raw<std::uint8_t>(is, "rank");
    ad::Shape shape(rank);
    std::int64_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::int64_t>(read_raw<std::uint64_t>(is, "dim"));
      n *= d;
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated data for '" + name +
                                      "' at offset " + std::to_string(is.tellg()));
    out.emplace_back(name, ad::Tensor::from(std::move(shape), std::move(data)));
  }
  return out;
}

void assign(const NamedTensors& src, NamedTensors& dst) {
  for (auto& [name, t] : dst) {
    const ad::Tensor* found = nullptr;
    for (const auto& [sname, st] : src)
      if (sname == name) {
        found = &st;
        break;
      }
    if (!found) throw std::runtime_error("checkpoint: missing entry '" + name + "'");
    if (found->shape() != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': " +
                               ad::shape_str(found->shape()) + " vs " + ad::shape_str(t.shape()));
    auto dstv = t.leaf_data();
    auto srcv = found->data();
    std::copy(srcv.begin(), srcv.end(), dstv.begin());
  }
}

}  // namespace ssmlab::ckpt
