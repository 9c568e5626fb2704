#include "milup/error.hpp"
#include "milup/kernels.hpp"

namespace milup::kernels::serial {

void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out) {
  if (w.rows() != x.cols() || bias.size() != w.cols()) throw ShapeError("affine: shape mismatch");
  out = Matrix(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = bias[j];
      for (std::size_t p = 0; p < x.cols(); ++p) acc += x(i, p) * w(p, j);
      out(i, j) = acc;
    }
  }
}

void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_at_b: row counts differ");
  out = Matrix(a.cols(), b.cols());
  for (std::size_t p = 0; p < a.cols(); ++p) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) acc += a(i, p) * b(i, j);
      out(p, j) = acc;
    }
  }
}

void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_a_bt: column counts differ");
  out = Matrix(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t q = 0; q < b.rows(); ++q) {
      double acc = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * b(q, j);
      out(i, q) = acc;
    }
  }
}

void column_sums(const Matrix& a, std::span<double> out) {
  if (out.size() != a.cols()) throw ShapeError("column_sums: output size mismatch");
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) acc += a(i, j);
    out[j] = acc;
  }
}

}  // namespace milup::kernels::serial
