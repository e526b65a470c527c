#pragma once

#include <cstddef>
#include <vector>

#include "hallucdet/errors.hpp"

namespace hallucdet {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles. The workhorse for every weight matrix,
/// feature batch, and score table in the library. Entries are expected to stay
/// finite; constructors with data validate this.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0);
  Matrix(int r, int c, std::vector<double> values);

  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }

  Vec row(int i) const;
  void set_row(int i, const Vec& v);

  static Matrix identity(int n);
  static Matrix from_rows(const std::vector<Vec>& rows);
};

bool all_finite(const Matrix& m);
bool all_finite(const Vec& v);
void require_finite(const Matrix& m, const char* what);

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T  (the layout used by affine layers: out[i,j] = sum_k in[i,k] * W[j,k])
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_at(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(const Matrix& m, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
void axpy(Matrix& y, double alpha, const Matrix& x);  // y += alpha * x

Vec col_sum(const Matrix& m);
Vec row_mean(const Matrix& m);

double dot(const Vec& a, const Vec& b);
double norm(const Vec& v);
void axpy(Vec& y, double alpha, const Vec& x);
Vec concat(const Vec& a, const Vec& b, const Vec& c);

/// [A | B | C]; all inputs must share a row count.
Matrix concat_cols(const Matrix& a, const Matrix& b, const Matrix& c);

/// Cholesky factor L (lower triangular, L * L^T = m) of a symmetric
/// positive-definite matrix. Throws numeric_error if the matrix is not
/// positive definite or contains non-finite entries.
Matrix cholesky(const Matrix& m);

/// log(det(m)) for symmetric positive-definite m, via Cholesky.
double logdet_spd(const Matrix& m);

/// Inverse of a symmetric positive-definite matrix, via Cholesky solves.
Matrix spd_inverse(const Matrix& m);

}  // namespace hallucdet
