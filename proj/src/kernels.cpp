#include "milup/kernels.hpp"

#include <cstddef>
#include <string>

#include "milup/error.hpp"

namespace milup {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw ShapeError("matrix of " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " given " + std::to_string(values_.size()) + " values");
  }
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= m.rows()) throw ShapeError("gather_rows: row index out of range");
    auto src = m.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

Matrix column_matrix(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

namespace kernels {
namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

}  // namespace

void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out) {
  const std::size_t n = x.rows(), k = x.cols(), m = w.cols();
  if (w.rows() != k || bias.size() != m) throw ShapeError("affine: shape mismatch");
  if (out.rows() != n || out.cols() != m) out = Matrix(n, m);
  const double* xd = x.data();
  const double* wd = w.data();
  double* od = out.data();
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (long long i = 0; i < rows; ++i) {
    double* orow = od + i * m;
    for (std::size_t j = 0; j < m; ++j) orow[j] = bias[j];
    const double* xrow = xd + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xrow[p];
      const double* wrow = wd + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * wrow[j];
    }
  }
}

void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != n) throw ShapeError("matmul_at_b: row counts differ");
  if (out.rows() != k || out.cols() != m) out = Matrix(k, m);
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  const long long out_rows = static_cast<long long>(k);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (long long p = 0; p < out_rows; ++p) {
    double* orow = od + p * m;
    for (std::size_t j = 0; j < m; ++j) orow[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), m = a.cols(), k = b.rows();
  if (b.cols() != m) throw ShapeError("matmul_a_bt: column counts differ");
  if (out.rows() != n || out.cols() != k) out = Matrix(n, k);
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (long long i = 0; i < rows; ++i) {
    const double* arow = ad + i * m;
    for (std::size_t q = 0; q < k; ++q) {
      const double* brow = bd + q * m;
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += arow[j] * brow[j];
      od[i * k + q] = acc;
    }
  }
}

void column_sums(const Matrix& a, std::span<double> out) {
  const std::size_t n = a.rows(), m = a.cols();
  if (out.size() != m) throw ShapeError("column_sums: output size mismatch");
  const double* ad = a.data();
  const long long cols = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (n * m > kParallelWork)
  for (long long j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += ad[i * m + j];
    out[j] = acc;
  }
}

}  // namespace kernels
}  // namespace milup
