#include "voxelfuse/numgrad/vxf.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "voxelfuse/error.hpp"

namespace voxelfuse::ng {
namespace {

static_assert(std::endian::native == std::endian::little,
              "VXF1 I/O assumes a little-endian host");

constexpr char kMagic[4] = {'V', 'X', 'F', '1'};
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw ParseError(std::string("VXF1: truncated while reading ") + what);
  }
  return v;
}

}  // namespace

void write_vxf(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw IoError("VXF1: write failed");
}

Tensor read_vxf(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("VXF1: bad magic");
  }
  const auto rank = get<std::uint32_t>(is, "rank");
  if (rank > kMaxRank) throw ParseError("VXF1: rank " + std::to_string(rank) + " too large");
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, "dims"));
  Tensor t(shape);
  if (t.size() && !is.read(reinterpret_cast<char*>(t.data()),
                           static_cast<std::streamsize>(t.size() * sizeof(double)))) {
    throw ParseError("VXF1: truncated payload for shape " + to_string(shape));
  }
  return t;
}

void save_vxf(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_vxf(os, t);
}

Tensor load_vxf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_vxf(is);
}

}  // namespace voxelfuse::ng
