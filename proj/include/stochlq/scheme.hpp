#pragma once

#include <string>
#include <string_view>

namespace stochlq {

/// How a backward lattice step turns child values into the node value.
///  - Explicit: P = P̂ + Δ·G(P̂, Q̂).
///  - Implicit: P = P̂ + Δ·G(P, Q̂), fixed point iterated to 1e-12.
///  - Exact:    the Riccati difference equation of the Euler-discretized
///              lattice control problem; coincides with backward dynamic
///              programming on the same lattice up to roundoff.
///  - Continuous: values sampled from an ODE solution (deterministic route).
enum class Scheme { Explicit, Implicit, Exact, Continuous };

std::string to_string(Scheme s);
Scheme parse_scheme(std::string_view name);

}  // namespace stochlq
