#pragma once

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace bahadur {

using Vec = std::vector<double>;

// Dense row-major matrix. Small and value-semantic; everything at desk scale.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
  const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
  double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
  bool empty() const { return rows == 0 || cols == 0; }
};

inline double dot(const double* x, const double* y, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

inline double dot(const Vec& x, const Vec& y) {
  assert(x.size() == y.size());
  return dot(x.data(), y.data(), static_cast<int>(x.size()));
}

inline double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

inline double norm_inf(const Vec& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::fabs(v));
  return m;
}

// Solves A x = b by Gaussian elimination with partial pivoting; A is n x n.
// Returns false when the system is numerically singular (pivot ratio below
// 1/cond_limit).
inline bool solve_linear(Matrix A, Vec b, Vec& x, double cond_limit = 1e10) {
  const int n = A.rows;
  assert(A.cols == n && static_cast<int>(b.size()) == n);
  double max_pivot = 0.0;
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    double best = std::fabs(A(k, k));
    for (int i = k + 1; i < n; ++i) {
      if (std::fabs(A(i, k)) > best) {
        best = std::fabs(A(i, k));
        piv = i;
      }
    }
    if (piv != k) {
      for (int j = 0; j < n; ++j) std::swap(A(k, j), A(piv, j));
      std::swap(b[k], b[piv]);
    }
    max_pivot = std::max(max_pivot, best);
    if (best <= 0.0 || best < max_pivot / cond_limit) return false;
    for (int i = k + 1; i < n; ++i) {
      double f = A(i, k) / A(k, k);
      for (int j = k; j < n; ++j) A(i, j) -= f * A(k, j);
      b[i] -= f * b[k];
    }
  }
  x.assign(n, 0.0);
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int j = i + 1; j < n; ++j) s -= A(i, j) * x[j];
    x[i] = s / A(i, i);
  }
  return true;
}

// Inverse via repeated solves; n is tiny (1+d) wherever this is used.
inline bool invert(const Matrix& A, Matrix& Ainv, double cond_limit = 1e10) {
  const int n = A.rows;
  Ainv = Matrix(n, n);
  for (int j = 0; j < n; ++j) {
    Vec e(n, 0.0), col;
    e[j] = 1.0;
    if (!solve_linear(A, e, col, cond_limit)) return false;
    for (int i = 0; i < n; ++i) Ainv(i, j) = col[i];
  }
  return true;
}

}  // namespace bahadur
