#include "ssc/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ssc {

namespace {

// Reads one whitespace/comment-delimited token from a PNM header.
std::string pnm_token(std::istream& is, const std::string& path) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw IoError("pnm: truncated header in " + path);
  return tok;
}

struct PnmHeader {
  int64_t w, h;
};

PnmHeader read_pnm_header(std::istream& is, const char* magic, const std::string& path) {
  std::string m = pnm_token(is, path);
  if (m != magic) throw IoError("pnm: expected " + std::string(magic) + " in " + path);
  const int64_t w = std::stoll(pnm_token(is, path));
  const int64_t h = std::stoll(pnm_token(is, path));
  const int64_t maxval = std::stoll(pnm_token(is, path));
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw IoError("pnm: unsupported geometry/maxval in " + path);
  }
  return {w, h};
}

unsigned char quantize(double v) {
  double q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(q);
}

}  // namespace

Tensor<float> load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("ppm: cannot open: " + path);
  const PnmHeader hdr = read_pnm_header(is, "P6", path);
  std::vector<unsigned char> raw(static_cast<size_t>(hdr.w * hdr.h * 3));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw IoError("ppm: truncated pixel data in " + path);
  }
  std::vector<float> data(raw.size());
  const int64_t plane = hdr.w * hdr.h;
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      data[static_cast<size_t>(c * plane + i)] =
          static_cast<float>(raw[static_cast<size_t>(i * 3 + c)]) / 255.0f;
    }
  }
  return Tensor<float>::from({3, hdr.h, hdr.w}, std::move(data));
}

void save_ppm(const std::string& path, const Tensor<float>& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw DimensionError("ppm: expected [3,H,W], got " + shape_str(image.shape()));
  }
  const int64_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("ppm: cannot open for writing: " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  const auto& v = image.data();
  std::vector<unsigned char> raw(static_cast<size_t>(plane * 3));
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      raw[static_cast<size_t>(i * 3 + c)] = quantize(v[static_cast<size_t>(c * plane + i)]);
    }
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("ppm: write failed: " + path);
}

template <typename T>
void save_pgm(const std::string& path, const Tensor<T>& plane, double lo, double hi) {
  Shape s = plane.shape();
  if (s.size() == 3 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 2) {
    throw DimensionError("pgm: expected [H,W] or [1,H,W], got " + shape_str(plane.shape()));
  }
  const int64_t h = s[0], w = s[1];
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("pgm: cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(h * w));
  const auto& v = plane.data();
  for (size_t i = 0; i < raw.size(); ++i) {
    raw[i] = quantize((static_cast<double>(v[i]) - lo) / span);
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("pgm: write failed: " + path);
}

Tensor<float> load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("pgm: cannot open: " + path);
  const PnmHeader hdr = read_pnm_header(is, "P5", path);
  std::vector<unsigned char> raw(static_cast<size_t>(hdr.w * hdr.h));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw IoError("pgm: truncated pixel data in " + path);
  }
  std::vector<float> data(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) data[i] = static_cast<float>(raw[i]) / 255.0f;
  return Tensor<float>::from({hdr.h, hdr.w}, std::move(data));
}

template void save_pgm<float>(const std::string&, const Tensor<float>&, double, double);
template void save_pgm<double>(const std::string&, const Tensor<double>&, double, double);

}  // namespace ssc
