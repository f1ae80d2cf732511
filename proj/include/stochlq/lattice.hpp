#pragma once

#include "stochlq/error.hpp"
#include "stochlq/model.hpp"
#include "stochlq/types.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace stochlq {

/// Non-recombining Bernoulli tree for a d-dimensional Brownian filtration.
///
/// A node at level ℓ is identified by its sign history packed into an integer:
/// each step appends d bits (bit i set ⇔ component i moved +√Δ), most recent
/// step in the lowest bits. Children of `node` are therefore the contiguous
/// range [node·2^d, node·2^d + 2^d). Every child has probability 2^(−d), so
/// E[ξⁱ] = 0, E[(ξⁱ)²] = Δ and E[ξⁱξʲ] = 0 hold exactly.
///
/// The object only does index arithmetic; storage lives in AdaptedField.
class FiltrationLattice {
 public:
  FiltrationLattice() = default;
  FiltrationLattice(int depth, double step, int d);

  int depth() const { return depth_; }
  double step() const { return step_; }
  double sqrt_step() const { return sqrt_step_; }
  int dim() const { return d_; }
  double time(int level) const { return level * step_; }
  double horizon() const { return depth_ * step_; }

  int branching() const { return 1 << d_; }
  std::size_t nodes(int level) const { return std::size_t{1} << (d_ * level); }
  std::size_t total_nodes() const;

  std::size_t child(std::size_t node, int c) const {
    return (node << d_) | static_cast<std::size_t>(c);
  }
  std::size_t parent(std::size_t node) const { return node >> d_; }

  /// ±1 for component i of child slot c.
  static int sign(int c, int i) { return ((c >> i) & 1) ? 1 : -1; }
  double increment(int c, int i) const { return sign(c, i) * sqrt_step_; }

  /// Path summary used to evaluate factor-driven coefficients.
  NodeState state(int level, std::size_t node) const;

  /// Sign history of a node, oldest step first, as a string of '+'/'-' per
  /// component (components separated by '|' within a step).
  std::string path_string(int level, std::size_t node) const;

  /// Same lattice truncated or extended to another depth.
  FiltrationLattice with_depth(int depth) const { return {depth, step_, d_}; }

  bool same_grid(const FiltrationLattice& other) const;

 private:
  int depth_ = 0;
  double step_ = 1.0;
  double sqrt_step_ = 1.0;
  int d_ = 1;
};

/// Total node count Σ_{ℓ≤L} 2^(dℓ), saturating at UINT64_MAX.
std::uint64_t lattice_node_count(int depth, int d);

/// An adapted process on the lattice: one value per (level, node).
/// Compact fields store one value per level and are node-independent by
/// construction (deterministic quantities).
template <typename T>
class AdaptedField {
 public:
  AdaptedField() = default;

  static AdaptedField full(const FiltrationLattice& lattice, const T& init) {
    // Node ids are packed into 62 bits; deeper trees only exist compactly.
    if (static_cast<long>(lattice.dim()) * lattice.depth() > 62) {
      throw Error(ErrorKind::ConfigError, "lattice depth*d exceeds 62 bits", "lattice.depth");
    }
    AdaptedField out;
    out.compact_ = false;
    out.levels_.resize(lattice.depth() + 1);
    for (int l = 0; l <= lattice.depth(); ++l) out.levels_[l].assign(lattice.nodes(l), init);
    return out;
  }

  static AdaptedField compact(int depth, const T& init) {
    AdaptedField out;
    out.compact_ = true;
    out.levels_.assign(depth + 1, std::vector<T>(1, init));
    return out;
  }

  bool is_compact() const { return compact_; }
  int depth() const { return static_cast<int>(levels_.size()) - 1; }
  bool empty() const { return levels_.empty(); }

  T& at(int level, std::size_t node) { return levels_[level][compact_ ? 0 : node]; }
  const T& at(int level, std::size_t node) const {
    return levels_[level][compact_ ? 0 : node];
  }
  std::vector<T>& level(int l) { return levels_[l]; }
  const std::vector<T>& level(int l) const { return levels_[l]; }

  /// Values at the 2^d children of (level, node).
  std::vector<T> children(const FiltrationLattice& lattice, int level,
                          std::size_t node) const {
    const int b = lattice.branching();
    std::vector<T> out;
    out.reserve(b);
    for (int c = 0; c < b; ++c) out.push_back(at(level + 1, lattice.child(node, c)));
    return out;
  }

  /// Restriction to levels 0..depth.
  AdaptedField truncated(int depth) const {
    AdaptedField out;
    out.compact_ = compact_;
    out.levels_.assign(levels_.begin(), levels_.begin() + depth + 1);
    return out;
  }

 private:
  std::vector<std::vector<T>> levels_;
  bool compact_ = true;
};

namespace lattice_detail {
inline void require_children(std::size_t count, int d) {
  if (count != (std::size_t{1} << d)) {
    throw Error(ErrorKind::MissingChild, "expected " + std::to_string(1 << d) +
                                             " children, got " + std::to_string(count));
  }
}
}  // namespace lattice_detail

/// Exact conditional expectation: equal-weight average of the 2^d children.
template <typename T>
T condexp(std::span<const T> children, int d) {
  lattice_detail::require_children(children.size(), d);
  T acc = children[0];
  for (std::size_t c = 1; c < children.size(); ++c) acc = acc + children[c];
  T out = acc / static_cast<double>(children.size());
  return out;
}

/// Lattice integrand against dWⁱ: E[V ξⁱ]/Δ, which for d = 1 is
/// (V₊ − V₋)/(2√Δ).
template <typename T>
T martingale_coefficient(std::span<const T> children, int d, int i, double step) {
  lattice_detail::require_children(children.size(), d);
  T acc = children[0] * static_cast<double>(FiltrationLattice::sign(0, i));
  for (std::size_t c = 1; c < children.size(); ++c) {
    acc = acc + children[c] * static_cast<double>(FiltrationLattice::sign(static_cast<int>(c), i));
  }
  T out = acc / (static_cast<double>(children.size()) * std::sqrt(step));
  return out;
}

/// Second-order chaos coefficient E[V ξⁱ ξʲ]/Δ for i ≠ j (zero when d = 1).
template <typename T>
T cross_coefficient(std::span<const T> children, int d, int i, int j) {
  lattice_detail::require_children(children.size(), d);
  auto s = [&](std::size_t c) {
    return static_cast<double>(FiltrationLattice::sign(static_cast<int>(c), i) *
                               FiltrationLattice::sign(static_cast<int>(c), j));
  };
  T acc = children[0] * s(0);
  for (std::size_t c = 1; c < children.size(); ++c) acc = acc + children[c] * s(c);
  T out = acc / static_cast<double>(children.size());
  return out;
}

template <typename T>
T condexp(const std::vector<T>& children, int d) {
  return condexp(std::span<const T>(children), d);
}
template <typename T>
T martingale_coefficient(const std::vector<T>& children, int d, int i, double step) {
  return martingale_coefficient(std::span<const T>(children), d, i, step);
}
template <typename T>
T cross_coefficient(const std::vector<T>& children, int d, int i, int j) {
  return cross_coefficient(std::span<const T>(children), d, i, j);
}

/// Expectation at the root of a full or compact scalar field at one level.
double level_mean(const AdaptedField<double>& field, const FiltrationLattice& lattice,
                  int level);

/// Iterated conditional expectation of a level-L field down to the root.
template <typename T>
T root_expectation(const FiltrationLattice& lattice, const std::vector<T>& leaves,
                   int level) {
  std::vector<T> current = leaves;
  for (int l = level - 1; l >= 0; --l) {
    std::vector<T> next;
    next.reserve(lattice.nodes(l));
    for (std::size_t node = 0; node < lattice.nodes(l); ++node) {
      const std::size_t first = lattice.child(node, 0);
      next.push_back(condexp(
          std::span<const T>(current.data() + first, lattice.branching()), lattice.dim()));
    }
    current = std::move(next);
  }
  return current.front();
}

}  // namespace stochlq
