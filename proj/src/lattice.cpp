#include "stochlq/lattice.hpp"

#include <limits>

namespace stochlq {

FiltrationLattice::FiltrationLattice(int depth, double step, int d)
    : depth_(depth), step_(step), sqrt_step_(std::sqrt(step)), d_(d) {
  if (depth < 0 || d < 0) throw Error(ErrorKind::BadDimensions, "lattice depth and d must be >= 0");
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw Error(ErrorKind::ConfigError, "lattice step must be positive", "lattice.step");
  }
}

std::size_t FiltrationLattice::total_nodes() const {
  return static_cast<std::size_t>(lattice_node_count(depth_, d_));
}

std::uint64_t lattice_node_count(int depth, int d) {
  std::uint64_t total = 0;
  for (int l = 0; l <= depth; ++l) {
    if (static_cast<long>(d) * l >= 63) return std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t n = std::uint64_t{1} << (d * l);
    if (total > std::numeric_limits<std::uint64_t>::max() - n) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    total += n;
  }
  return total;
}

NodeState FiltrationLattice::state(int level, std::size_t node) const {
  NodeState s;
  s.level = level;
  s.t = time(level);
  s.path_sum = Vector::Zero(d_);
  s.last_sign = Eigen::VectorXi::Zero(d_);
  std::size_t history = node;
  for (int m = 0; m < level; ++m) {
    const int c = static_cast<int>(history & ((std::size_t{1} << d_) - 1));
    for (int i = 0; i < d_; ++i) {
      s.path_sum[i] += increment(c, i);
      if (m == 0) s.last_sign[i] = sign(c, i);
    }
    history >>= d_;
  }
  return s;
}

std::string FiltrationLattice::path_string(int level, std::size_t node) const {
  std::string out;
  for (int m = level - 1; m >= 0; --m) {
    const int c = static_cast<int>((node >> (m * d_)) & ((std::size_t{1} << d_) - 1));
    if (!out.empty()) out += ' ';
    for (int i = 0; i < d_; ++i) {
      if (i > 0) out += '|';
      out += sign(c, i) > 0 ? '+' : '-';
    }
  }
  return out;
}

bool FiltrationLattice::same_grid(const FiltrationLattice& other) const {
  return d_ == other.d_ && std::abs(step_ - other.step_) <= 1e-14 * step_;
}

double level_mean(const AdaptedField<double>& field, const FiltrationLattice& lattice,
                  int level) {
  if (field.is_compact()) return field.at(level, 0);
  return root_expectation(lattice, field.level(level), level);
}

}  // namespace stochlq
