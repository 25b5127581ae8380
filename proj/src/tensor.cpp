#include "svddip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace svddip {

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

constexpr char kMagic[8] = {'S', 'V', 'D', 'D', 'I', 'P', 'T', '1'};

void put_u32le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_tensor(const Tensor& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, 8);
  uint8_t prec = static_cast<uint8_t>(t.precision());
  uint8_t rank = static_cast<uint8_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&prec), 1);
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (size_t d : t.shape()) put_u32le(os, static_cast<uint32_t>(d));
  if (t.precision() == Precision::F32) {
    std::vector<float> buf(t.numel());
    for (size_t i = 0; i < t.numel(); ++i) buf[i] = static_cast<float>(t[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("bad tensor magic in " + path);
  uint8_t prec = 0, rank = 0;
  is.read(reinterpret_cast<char*>(&prec), 1);
  is.read(reinterpret_cast<char*>(&rank), 1);
  if (prec > 1) throw std::runtime_error("bad precision flag in " + path);
  std::vector<size_t> shape(rank);
  for (auto& d : shape) d = get_u32le(is);
  Tensor t(shape, static_cast<Precision>(prec));
  if (t.precision() == Precision::F32) {
    std::vector<float> buf(t.numel());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = buf[i];
  } else {
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!is) throw std::runtime_error("truncated tensor file: " + path);
  return t;
}

void save_pgm16(const Tensor& img, const std::string& path, double lo, double hi) {
  if (img.rank() != 2) throw std::invalid_argument("save_pgm16: rank-2 image expected");
  if (!(hi > lo)) throw std::invalid_argument("save_pgm16: hi must exceed lo");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n65535\n";
  for (size_t i = 0; i < img.numel(); ++i) {
    double u = (img[i] - lo) / (hi - lo);
    u = std::clamp(u, 0.0, 1.0);
    uint16_t v = static_cast<uint16_t>(std::lround(u * 65535.0));
    unsigned char b[2] = {static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
}

}  // namespace svddip
