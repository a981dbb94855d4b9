#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace gipad {

struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

/// Dense rank-4 array in row-major (n, c, h, w) order, double precision.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0);
  Tensor4(int n, int c, int h, int w, double fill = 0.0)
      : Tensor4(Shape4{n, c, h, w}, fill) {}
  Tensor4(Shape4 shape, std::vector<double> values);

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double operator()(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Pointer to the contiguous h*w plane of (n, c).
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  void fill(double v);
  bool all_finite() const;
  double sum() const;

  // Same data viewed with another shape of equal size.
  Tensor4 reshaped(Shape4 shape) const;

  Tensor4& operator+=(const Tensor4& other);
  Tensor4& operator*=(double s);

 private:
  Shape4 shape_{};
  std::vector<double> data_;
};

double dot(const Tensor4& a, const Tensor4& b);
double max_abs_diff(const Tensor4& a, const Tensor4& b);

// Throws InternalError naming `where` when any entry is NaN or Inf.
void ensure_finite(const Tensor4& t, const char* where);

/// Learnable tensor with its accumulated gradient.
struct Param {
  std::string name;
  Tensor4 value;
  Tensor4 grad;

  Param() = default;
  Param(std::string param_name, Tensor4 init)
      : name(std::move(param_name)), value(std::move(init)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

// Binary container: "T4D1", four little-endian uint32 dims (20 header bytes), then
// little-endian float64 values in row-major order.
constexpr std::size_t kTensorHeaderBytes = 20;
void write_tensor(std::ostream& out, const Tensor4& t);
Tensor4 read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor4& t);
Tensor4 load_tensor(const std::filesystem::path& path);
std::string encode_tensor(const Tensor4& t);

}  // namespace gipad
