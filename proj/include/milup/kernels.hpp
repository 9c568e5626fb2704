#pragma once

// Dense linear-algebra kernels used by the network code. Two implementations
// share one contract: `milup::kernels` is OpenMP-parallel over output rows,
// `milup::kernels::serial` is the plain reference kept for tests and the
// benchmark. Every output element is accumulated in the same fixed order in
// both, so results do not depend on the thread count.

#include <span>

#include "milup/matrix.hpp"

namespace milup::kernels {

// out = x * w + broadcast(bias). x: n x k, w: k x m, bias: m. out is resized.
void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out);

// out = a^T * b. a: n x k, b: n x m, out: k x m.
void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out);

// out = a * b^T. a: n x m, b: k x m, out: n x k.
void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out);

// out[j] = sum_i a(i, j).
void column_sums(const Matrix& a, std::span<double> out);

namespace serial {

void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out);
void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out);
void column_sums(const Matrix& a, std::span<double> out);

}  // namespace serial
}  // namespace milup::kernels
