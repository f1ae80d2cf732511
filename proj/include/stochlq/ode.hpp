#pragma once

#include "stochlq/error.hpp"
#include "stochlq/types.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace stochlq {

struct OdeOptions {
  double atol = 1e-12;
  double rtol = 1e-10;
  double initial_step = 1e-2;
  double min_step = 1e-13;
  double max_step = 0.25;
};

namespace ode_detail {

template <typename Rhs>
Vector rk4(Rhs& rhs, double t, const Vector& y, double h) {
  const Vector k1 = rhs(t, y);
  const Vector k2 = rhs(t + 0.5 * h, Vector(y + 0.5 * h * k1));
  const Vector k3 = rhs(t + 0.5 * h, Vector(y + 0.5 * h * k2));
  const Vector k4 = rhs(t + h, Vector(y + h * k3));
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace ode_detail

/// Adaptive classical RK4 with step doubling and local extrapolation.
/// Integrates y' = rhs(t, y) from t0 through `times` (monotone in the
/// direction of integration, forward or backward) and returns y at each.
template <typename Rhs>
std::vector<Vector> integrate_rk4(Rhs&& rhs, Vector y, double t0, const std::vector<double>& times,
                                  const OdeOptions& opt = {}) {
  std::vector<Vector> out;
  out.reserve(times.size());
  double t = t0;
  double h_abs = opt.initial_step;
  for (const double target : times) {
    while (std::abs(target - t) > 1e-14 * std::max(1.0, std::abs(target))) {
      const double dir = target > t ? 1.0 : -1.0;
      h_abs = std::min({h_abs, opt.max_step, std::abs(target - t)});
      const double h = dir * h_abs;
      const Vector full = ode_detail::rk4(rhs, t, y, h);
      const Vector half = ode_detail::rk4(rhs, t, y, 0.5 * h);
      const Vector two = ode_detail::rk4(rhs, t + 0.5 * h, half, 0.5 * h);
      const Vector diff = (two - full) / 15.0;
      double err = 0.0;
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double scale = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(two[i]));
        err = std::max(err, std::abs(diff[i]) / scale);
      }
      if (!std::isfinite(err)) err = 1e300;
      if (err <= 1.0) {
        t = (std::abs(target - (t + h)) <= 1e-14 * std::max(1.0, std::abs(target))) ? target : t + h;
        y = two + diff;
        const double grow = err == 0.0 ? 4.0 : std::min(4.0, 0.9 * std::pow(err, -0.2));
        h_abs *= std::max(1.0, grow);
      } else {
        h_abs *= std::max(0.1, 0.9 * std::pow(err, -0.2));
        if (h_abs < opt.min_step) {
          throw Error(ErrorKind::StepSizeUnderflow,
                      "adaptive RK4 step fell below " + std::to_string(opt.min_step) +
                          " near t=" + std::to_string(t));
        }
      }
    }
    out.push_back(y);
  }
  return out;
}

/// Piecewise cubic Hermite interpolant through (t_j, y_j, y'_j) on an
/// ascending grid; fourth-order accurate between samples.
class HermiteTrajectory {
 public:
  HermiteTrajectory() = default;
  HermiteTrajectory(std::vector<double> t, std::vector<Vector> y, std::vector<Vector> dy)
      : t_(std::move(t)), y_(std::move(y)), dy_(std::move(dy)) {}

  Vector operator()(double t) const {
    auto it = std::upper_bound(t_.begin(), t_.end(), t);
    std::size_t j = it == t_.begin() ? 0 : static_cast<std::size_t>(it - t_.begin()) - 1;
    j = std::min(j, t_.size() - 2);
    const double h = t_[j + 1] - t_[j];
    const double s = (t - t_[j]) / h;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
    const double h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s);
    const double h11 = s * s * (s - 1);
    return h00 * y_[j] + h10 * h * dy_[j] + h01 * y_[j + 1] + h11 * h * dy_[j + 1];
  }

  const std::vector<double>& times() const { return t_; }
  const std::vector<Vector>& values() const { return y_; }

 private:
  std::vector<double> t_;
  std::vector<Vector> y_;
  std::vector<Vector> dy_;
};

/// Column-major packing of a square matrix into a vector slice.
inline Vector pack(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unpack(const Eigen::Ref<const Vector>& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace stochlq
