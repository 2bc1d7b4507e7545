#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cavf {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector column(std::size_t c) const;
  std::string shape_string() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// mt19937_64 stream with hand-rolled distributions, so draws are identical
/// across standard libraries. uniform() takes the top 53 bits; normal() is
/// Box-Muller and caches the second variate.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();
  bool bernoulli(double p);
  std::size_t below(std::size_t n);  // uniform integer in [0, n)

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  // splitmix64 finalizer; derives independent child seeds.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Product of a and b. Rows of the output are computed in parallel when the
// product is large enough; each entry accumulates over the inner index in
// ascending order, so the result is bit-identical to serial::matmul.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& m, double s);
void add_in_place(Matrix& acc, const Matrix& m);
Matrix vstack(const Matrix& top, const Matrix& bottom);

// out[i,j] = exp(z[i,j]/t) / sum_k exp(z[k,j]/t), max-subtracted per column.
Matrix softmax_columns(const Matrix& z, double t);
// Row-stochastic counterpart: out[i,j] = exp(z[i,j]/t) / sum_k exp(z[i,k]/t).
Matrix softmax_rows(const Matrix& z, double t);
Matrix elementwise_tanh(const Matrix& m);
double max_abs(const Matrix& m);

/// Uniform on [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))].
Matrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng);

namespace serial {
// Reference kernels, single-threaded textbook loops. Kept for tests and bench.
Matrix matmul(const Matrix& a, const Matrix& b);
}  // namespace serial

}  // namespace cavf
