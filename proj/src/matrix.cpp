#include "hallucdet/matrix.hpp"

#include <cmath>
#include <cstddef>
#include <string>

namespace hallucdet {

Matrix::Matrix(int r, int c, double fill) : rows(r), cols(c) {
  if (r < 0 || c < 0) throw shape_error("negative matrix dimensions");
  data.assign(static_cast<std::size_t>(r) * c, fill);
}

Matrix::Matrix(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
  if (r < 0 || c < 0) throw shape_error("negative matrix dimensions");
  if (data.size() != static_cast<std::size_t>(r) * c)
    throw shape_error("data length " + std::to_string(data.size()) + " != " + std::to_string(r) + "x" +
                      std::to_string(c));
  require_finite(*this, "matrix construction");
}

Vec Matrix::row(int i) const {
  return Vec(data.begin() + static_cast<std::ptrdiff_t>(i) * cols,
             data.begin() + static_cast<std::ptrdiff_t>(i + 1) * cols);
}

void Matrix::set_row(int i, const Vec& v) {
  if (static_cast<int>(v.size()) != cols) throw shape_error("set_row length mismatch");
  std::copy(v.begin(), v.end(), data.begin() + static_cast<std::ptrdiff_t>(i) * cols);
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n, 0.0);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vec>& rows) {
  if (rows.empty()) return Matrix();
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw shape_error("ragged row list");
    m.set_row(static_cast<int>(i), rows[i]);
  }
  return m;
}

bool all_finite(const Matrix& m) { return all_finite(m.data); }

bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void require_finite(const Matrix& m, const char* what) {
  if (!all_finite(m)) throw numeric_error(std::string("non-finite entries in ") + what);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw shape_error("matmul: inner dimensions disagree");
  Matrix c(a.rows, b.cols, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    double* crow = c.data.data() + static_cast<std::size_t>(i) * c.cols;
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw shape_error("matmul_bt: column counts disagree");
  Matrix c(a.rows, b.rows, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    double* crow = c.data.data() + static_cast<std::size_t>(i) * c.cols;
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + static_cast<std::size_t>(j) * b.cols;
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      crow[j] = s;
    }
  }
  return c;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw shape_error("matmul_at: row counts disagree");
  Matrix c(a.cols, b.cols, 0.0);
  for (int k = 0; k < a.rows; ++k) {
    const double* arow = a.data.data() + static_cast<std::size_t>(k) * a.cols;
    const double* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
    for (int i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      double* crow = c.data.data() + static_cast<std::size_t>(i) * c.cols;
      for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw shape_error("operator+: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw shape_error("operator-: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

Matrix operator*(const Matrix& m, double s) {
  Matrix c = m;
  for (double& x : c.data) x *= s;
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw shape_error("hadamard: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
  return c;
}

void axpy(Matrix& y, double alpha, const Matrix& x) {
  if (!y.same_shape(x)) throw shape_error("axpy: shape mismatch");
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

Vec col_sum(const Matrix& m) {
  Vec s(m.cols, 0.0);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) s[j] += m(i, j);
  return s;
}

Vec row_mean(const Matrix& m) {
  Vec r(m.rows, 0.0);
  if (m.cols == 0) return r;
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m(i, j);
    r[i] = s / m.cols;
  }
  return r;
}

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw shape_error("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& v) { return std::sqrt(dot(v, v)); }

void axpy(Vec& y, double alpha, const Vec& x) {
  if (y.size() != x.size()) throw shape_error("axpy: length mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

Vec concat(const Vec& a, const Vec& b, const Vec& c) {
  Vec out;
  out.reserve(a.size() + b.size() + c.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

Matrix concat_cols(const Matrix& a, const Matrix& b, const Matrix& c) {
  if (a.rows != b.rows || a.rows != c.rows) throw shape_error("concat_cols: row count mismatch");
  Matrix out(a.rows, a.cols + b.cols + c.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) out(i, j) = a(i, j);
    for (int j = 0; j < b.cols; ++j) out(i, a.cols + j) = b(i, j);
    for (int j = 0; j < c.cols; ++j) out(i, a.cols + b.cols + j) = c(i, j);
  }
  return out;
}

Matrix cholesky(const Matrix& m) {
  if (m.rows != m.cols) throw shape_error("cholesky: matrix not square");
  require_finite(m, "cholesky input");
  const int n = m.rows;
  Matrix l(n, n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = m(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(s > 0.0)) throw numeric_error("cholesky: matrix not positive definite");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

double logdet_spd(const Matrix& m) {
  Matrix l = cholesky(m);
  double acc = 0.0;
  for (int i = 0; i < l.rows; ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

Matrix spd_inverse(const Matrix& m) {
  const Matrix l = cholesky(m);
  const int n = m.rows;
  Matrix inv(n, n, 0.0);
  // Solve L L^T x = e_j column by column.
  Vec y(n), x(n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      double s = (i == j) ? 1.0 : 0.0;
      for (int k = 0; k < i; ++k) s -= l(i, k) * y[k];
      y[i] = s / l(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
      double s = y[i];
      for (int k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
      x[i] = s / l(i, i);
    }
    for (int i = 0; i < n; ++i) inv(i, j) = x[i];
  }
  return inv;
}

}  // namespace hallucdet
