#pragma once

#include <cstddef>
#include <vector>

namespace krn::test {

// f(x, b) = |A (3x) - b|^2 with A = tridiag(-1, 2, -1) stored as a full
// matrix, so the reference shares no code or summation order with the
// interpreter. grad_x = 6 A^T y, grad_b = -2 y.
struct DenseLaplacian {
  double f = 0;
  std::vector<double> grad_x;
  std::vector<double> grad_b;
};

inline DenseLaplacian dense_laplacian(const std::vector<double>& x, const std::vector<double>& b) {
  std::size_t n = x.size();
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    a[i][i] = 2;
    if (i > 0) a[i][i - 1] = -1;
    if (i + 1 < n) a[i][i + 1] = -1;
  }
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0;
    for (std::size_t k = 0; k < n; ++k) acc += a[i][k] * (3 * x[k]);
    y[i] = acc - b[i];
  }
  DenseLaplacian out;
  out.grad_x.assign(n, 0.0);
  out.grad_b.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    out.f += y[i] * y[i];
    out.grad_b[i] = -2 * y[i];
  }
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i][j] * y[i];
    out.grad_x[j] = 6 * acc;
  }
  return out;
}

}  // namespace krn::test
