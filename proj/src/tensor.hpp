#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace salient {

// Dense row-major array of doubles. Shape product always equals data length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols});
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D views. A rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T and a^T * b without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);

Tensor softmax_rows(const Tensor& x);
void softmax_inplace(std::span<double> row);
void log_softmax_inplace(std::span<double> row);

// sqrt(mean(x^2) + eps)
double rms_statistic(std::span<const double> x, double eps);
// gamma * x / rms_statistic(x, eps); applied per row for 2-D input.
Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps);

double dot(std::span<const double> a, std::span<const double> b);
// y += x * W for a row vector x (len k) and W (k x n).
void axpy_row_matrix(std::span<const double> x, const Tensor& w, std::span<double> y);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace salient
