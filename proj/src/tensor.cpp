#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Core>

#include "error.hpp"

namespace salient {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMat>;
using View = Eigen::Map<RowMat>;

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    fail(ErrorKind::kShape,
         std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

}  // namespace

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return "usage error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kCapacity: return "capacity error";
    case ErrorKind::kIndex: return "index error";
    case ErrorKind::kSegment: return "segment error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kDegenerate: return "degenerate error";
    case ErrorKind::kDivergence: return "divergence error";
  }
  return "error";
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    fail(ErrorKind::kShape, "tensor shape " + shape_str(shape_) +
                                " does not match data length " +
                                std::to_string(data_.size()));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorKind::kShape, "ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  return shape_.back();
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
  if (data_.size() != 1) {
    fail(ErrorKind::kUsage, "item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    fail(ErrorKind::kShape, "matmul: inner dimensions disagree " +
                                shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor c({m, n});
  if (m && n && k) {
    View(c.data(), m, n).noalias() = ConstView(a.data(), m, k) * ConstView(b.data(), k, n);
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  if (b.cols() != a.cols()) {
    fail(ErrorKind::kShape, "matmul_nt: inner dimensions disagree " +
                                shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  if (m && n && k) {
    View(c.data(), m, n).noalias() = ConstView(a.data(), m, k) * ConstView(b.data(), n, k).transpose();
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_tn");
  require_2d(b, "matmul_tn");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) {
    fail(ErrorKind::kShape, "matmul_tn: inner dimensions disagree " +
                                shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
  }
  Tensor c({m, n});
  if (m && n && k) {
    View(c.data(), m, n).noalias() = ConstView(a.data(), k, m).transpose() * ConstView(b.data(), k, n);
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) fail(ErrorKind::kShape, "add: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) fail(ErrorKind::kShape, "sub: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

Tensor scale(const Tensor& a, double k) {
  Tensor c = a;
  for (auto& v : c.values()) v *= k;
  return c;
}

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (auto& v : row) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : row) v /= z;
}

void log_softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  for (auto& v : row) v -= lz;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) softmax_inplace(y.row(r));
  return y;
}

double rms_statistic(std::span<const double> x, double eps) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  return std::sqrt(ss / static_cast<double>(x.size()) + eps);
}

Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps) {
  if (x.cols() == 0) fail(ErrorKind::kShape, "rmsnorm: empty feature dimension");
  if (gamma.size() != x.cols()) fail(ErrorKind::kShape, "rmsnorm: gamma length mismatch");
  Tensor y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    const double s = rms_statistic(row, eps);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = gamma[j] * row[j] / s;
  }
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy_row_matrix(std::span<const double> x, const Tensor& w, std::span<double> y) {
  const std::size_t n = w.cols();
  for (std::size_t p = 0; p < x.size(); ++p) {
    const double xv = x[p];
    const double* wrow = w.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += xv * wrow[j];
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) fail(ErrorKind::kShape, "max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace salient
