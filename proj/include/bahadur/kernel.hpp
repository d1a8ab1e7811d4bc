#pragma once

#include <cmath>
#include <stdexcept>

#include "bahadur/linalg.hpp"

namespace bahadur {

enum class KernelKind {
  UniformBall,             // constant on the unit ball
  FloorShiftedQuadratic,   // c_d (1 - ||u||^2 / 2) on the unit ball
};

inline double unit_ball_volume(int d) {
  // V_d = pi^{d/2} / Gamma(d/2 + 1)
  return std::pow(M_PI, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

// Kernel supported on the unit ball, symmetric, normalized to integrate to 1.
// The floor-shifted quadratic stays strictly positive on its support
// (value c_d/2 at the boundary), unlike Epanechnikov.
struct KernelSpec {
  KernelKind kind = KernelKind::FloorShiftedQuadratic;
  double h = 0.0;
  int d = 1;

  KernelSpec() = default;
  KernelSpec(KernelKind k, double bandwidth, int dim) : kind(k), h(bandwidth), d(dim) {
    if (!(h > 0.0) || d < 1) throw std::invalid_argument("KernelSpec: bandwidth and dimension must be positive");
  }

  // K(u) for u in R^d
  double value(const double* u) const {
    double nsq = 0.0;
    for (int j = 0; j < d; ++j) nsq += u[j] * u[j];
    if (nsq > 1.0) return 0.0;
    const double vd = unit_ball_volume(d);
    switch (kind) {
      case KernelKind::UniformBall:
        return 1.0 / vd;
      case KernelKind::FloorShiftedQuadratic: {
        const double c = 2.0 * (d + 2.0) / ((d + 4.0) * vd);
        return c * (1.0 - 0.5 * nsq);
      }
    }
    return 0.0;
  }

  // K_h(xi - x) = (1/h^d) K((xi - x)/h)
  double kh(const double* xi, const double* x) const {
    Vec u(d);
    for (int j = 0; j < d; ++j) u[j] = (xi[j] - x[j]) / h;
    return value(u.data()) / std::pow(h, d);
  }
};

}  // namespace bahadur
