#include "milup/kernels.hpp"

#include <gtest/gtest.h>

#include <random>

#include "milup/error.hpp"

namespace milup {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double zero_fraction = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::uniform_real_distribution<double> u;
  Matrix m(r, c);
  for (double& v : m.values()) v = u(rng) < zero_fraction ? 0.0 : d(rng);
  return m;
}

// Shapes large enough to cross the parallel threshold and small odd ones.
const std::vector<std::array<std::size_t, 3>> kShapes = {
    {1, 1, 1}, {3, 5, 2}, {17, 9, 13}, {256, 64, 32}, {1024, 40, 33}};

TEST(KernelsTest, AffineMatchesSerialReference) {
  for (const auto& [n, k, m] : kShapes) {
    const Matrix x = random_matrix(n, k, n + k), w = random_matrix(k, m, m);
    std::vector<double> b(m);
    for (std::size_t j = 0; j < m; ++j) b[j] = 0.1 * static_cast<double>(j);
    Matrix fast, ref;
    kernels::affine(x, w, b, fast);
    kernels::serial::affine(x, w, b, ref);
    EXPECT_EQ(fast, ref) << n << "x" << k << "x" << m;
  }
}

TEST(KernelsTest, MatmulAtBMatchesSerialReference) {
  for (const auto& [n, k, m] : kShapes) {
    // Zeros exercise the skip path used for rectifier gradients.
    const Matrix a = random_matrix(n, k, 7 * n, 0.4), b = random_matrix(n, m, 11 * m);
    Matrix fast, ref;
    kernels::matmul_at_b(a, b, fast);
    kernels::serial::matmul_at_b(a, b, ref);
    EXPECT_EQ(fast, ref) << n << "x" << k << "x" << m;
  }
}

TEST(KernelsTest, MatmulABtMatchesSerialReference) {
  for (const auto& [n, k, m] : kShapes) {
    const Matrix a = random_matrix(n, m, 3 * n), b = random_matrix(k, m, 5 * k);
    Matrix fast, ref;
    kernels::matmul_a_bt(a, b, fast);
    kernels::serial::matmul_a_bt(a, b, ref);
    EXPECT_EQ(fast, ref);
  }
}

TEST(KernelsTest, ColumnSumsMatchesSerialReference) {
  const Matrix a = random_matrix(777, 31, 9);
  std::vector<double> fast(31), ref(31);
  kernels::column_sums(a, fast);
  kernels::serial::column_sums(a, ref);
  EXPECT_EQ(fast, ref);
}

TEST(KernelsTest, SmallProductByHand) {
  const Matrix x(2, 2, {1, 2, 3, 4});
  const Matrix w(2, 1, {10, 100});
  const std::vector<double> b{0.5};
  Matrix out;
  kernels::affine(x, w, b, out);
  EXPECT_DOUBLE_EQ(out(0, 0), 210.5);
  EXPECT_DOUBLE_EQ(out(1, 0), 430.5);
}

TEST(KernelsTest, ShapeMismatchThrows) {
  Matrix out;
  const std::vector<double> b(3);
  EXPECT_THROW(kernels::affine(Matrix(2, 2), Matrix(3, 3), b, out), ShapeError);
  EXPECT_THROW(kernels::matmul_at_b(Matrix(2, 2), Matrix(3, 3), out), ShapeError);
  EXPECT_THROW(kernels::matmul_a_bt(Matrix(2, 2), Matrix(3, 3), out), ShapeError);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>(3)), ShapeError);
}

}  // namespace
}  // namespace milup
