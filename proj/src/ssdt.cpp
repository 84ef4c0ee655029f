#include "ssc/ssdt.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ssc {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("ssdt: truncated header in " + path);
  }
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

template <typename U>
void put_scalar_le(std::ostream& os, U v) {
  static_assert(sizeof(U) == 4 || sizeof(U) == 8);
  using Bits = std::conditional_t<sizeof(U) == 4, uint32_t, uint64_t>;
  Bits bits = std::bit_cast<Bits>(v);
  unsigned char b[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_scalar_le(std::istream& is, const std::string& path) {
  using Bits = std::conditional_t<sizeof(U) == 4, uint32_t, uint64_t>;
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) {
    throw IoError("ssdt: truncated payload in " + path);
  }
  Bits bits = 0;
  for (size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(b[i]) << (8 * i);
  return std::bit_cast<U>(bits);
}

constexpr uint8_t kF32 = 0;
constexpr uint8_t kF64 = 1;

}  // namespace

template <typename T>
void save_ssdt(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("ssdt: cannot open for writing: " + path);
  os.write("SSDT", 4);
  put_u32(os, 1);
  const uint8_t dtype = sizeof(T) == 4 ? kF32 : kF64;
  os.put(static_cast<char>(dtype));
  const Shape& s = t.shape();
  put_u32(os, static_cast<uint32_t>(s.size()));
  for (int64_t e : s) put_u32(os, static_cast<uint32_t>(e));
  for (T v : t.data()) put_scalar_le(os, v);
  if (!os) throw IoError("ssdt: write failed: " + path);
}

template <typename T>
Tensor<T> load_ssdt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("ssdt: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SSDT", 4) != 0) {
    throw IoError("ssdt: bad magic in " + path);
  }
  const uint32_t version = get_u32(is, path);
  if (version != 1) {
    throw IoError("ssdt: unsupported version " + std::to_string(version) + " in " + path);
  }
  const int dtype = is.get();
  if (dtype != kF32 && dtype != kF64) {
    throw IoError("ssdt: unknown dtype " + std::to_string(dtype) + " in " + path);
  }
  const uint32_t ndim = get_u32(is, path);
  if (ndim > 16) throw IoError("ssdt: implausible ndim in " + path);
  Shape shape(ndim);
  int64_t numel = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    shape[i] = static_cast<int64_t>(get_u32(is, path));
    numel *= shape[i];
  }
  std::vector<T> data(static_cast<size_t>(numel));
  if (dtype == kF32) {
    for (auto& v : data) v = static_cast<T>(get_scalar_le<float>(is, path));
  } else {
    for (auto& v : data) v = static_cast<T>(get_scalar_le<double>(is, path));
  }
  char extra;
  if (is.read(&extra, 1)) throw IoError("ssdt: trailing bytes in " + path);
  return Tensor<T>::from(std::move(shape), std::move(data));
}

template void save_ssdt<float>(const std::string&, const Tensor<float>&);
template void save_ssdt<double>(const std::string&, const Tensor<double>&);
template Tensor<float> load_ssdt<float>(const std::string&);
template Tensor<double> load_ssdt<double>(const std::string&);

}  // namespace ssc
