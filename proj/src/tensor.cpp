#include "gipad/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "gipad/error.hpp"

namespace gipad {

namespace {

constexpr std::array<char, 4> kMagic{'T', '4', 'D', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw DataError("tensor container truncated in header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::string to_string(const Shape4& s) {
  std::ostringstream os;
  os << '(' << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ')';
  return os.str();
}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ConfigError("negative tensor dimension " + to_string(shape));
  }
  data_.assign(shape.size(), fill);
}

Tensor4::Tensor4(Shape4 shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.size()) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + to_string(shape));
  }
}

void Tensor4::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor4::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

Tensor4 Tensor4::reshaped(Shape4 shape) const {
  if (shape.size() != data_.size()) {
    throw ConfigError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor4(shape, data_);
}

Tensor4& Tensor4::operator+=(const Tensor4& other) {
  if (other.shape_ != shape_) {
    throw ConfigError("shape mismatch in +=: " + to_string(shape_) + " vs " + to_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor4& Tensor4::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double dot(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) throw ConfigError("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError("max_abs_diff: shape mismatch " + to_string(a.shape()) + " vs " +
                      to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void ensure_finite(const Tensor4& t, const char* where) {
  if (!t.all_finite()) throw InternalError(std::string("non-finite values produced by ") + where);
}

void write_tensor(std::ostream& out, const Tensor4& t) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(t.n()));
  put_u32(out, static_cast<std::uint32_t>(t.c()));
  put_u32(out, static_cast<std::uint32_t>(t.h()));
  put_u32(out, static_cast<std::uint32_t>(t.w()));
  std::array<char, 8> b{};
  for (double v : t.data()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(b.data(), 8);
  }
}

Tensor4 read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kMagic) throw DataError("not a T4D1 tensor container");
  Shape4 s;
  s.n = static_cast<int>(get_u32(in));
  s.c = static_cast<int>(get_u32(in));
  s.h = static_cast<int>(get_u32(in));
  s.w = static_cast<int>(get_u32(in));
  std::vector<double> values(s.size());
  std::array<unsigned char, 8> b{};
  for (double& v : values) {
    in.read(reinterpret_cast<char*>(b.data()), 8);
    if (!in) throw DataError("tensor container truncated in payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  return Tensor4(s, std::move(values));
}

std::string encode_tensor(const Tensor4& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return os.str();
}

void save_tensor(const std::filesystem::path& path, const Tensor4& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
  if (!out) throw DataError("write failed: " + path.string());
}

Tensor4 load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace gipad
