#pragma once

#include "stochlq/error.hpp"
#include "stochlq/lattice.hpp"
#include "stochlq/types.hpp"

#include <sstream>
#include <vector>

namespace stochlq {

template <typename Scalar>
using MatFamily = std::vector<Mat<Scalar>>;

/// I + Σ Dᵢᵀ P Dᵢ.
template <typename Scalar>
Mat<Scalar> inner_matrix(const MatFamily<Scalar>& D, const Mat<Scalar>& P, Eigen::Index k) {
  Mat<Scalar> N = Mat<Scalar>::Identity(k, k);
  for (const auto& Di : D) N.noalias() += Di.transpose() * P * Di;
  return sym(N);
}

/// P B + Σ (Cᵢᵀ P Dᵢ + Qᵢ Dᵢ).
template <typename Scalar>
Mat<Scalar> coupling_matrix(const Mat<Scalar>& B, const MatFamily<Scalar>& C,
                            const MatFamily<Scalar>& D, const Mat<Scalar>& P,
                            const MatFamily<Scalar>& Q) {
  Mat<Scalar> M = P * B;
  for (std::size_t i = 0; i < D.size(); ++i) {
    M.noalias() += C[i].transpose() * P * D[i];
    if (i < Q.size()) M.noalias() += Q[i] * D[i];
  }
  return M;
}

/// Cholesky of a symmetric positive definite inner matrix, raising
/// SingularInnerMatrix when its smallest eigenvalue drops below `floor`.
template <typename Scalar>
Eigen::LLT<Mat<Scalar>> factor_inner(const Mat<Scalar>& N, Scalar floor = Scalar(1e-10)) {
  const Scalar lmin = min_eigenvalue(N);
  if (!(lmin > floor)) {
    std::ostringstream msg;
    msg << "inner matrix has smallest eigenvalue " << lmin;
    throw Error(ErrorKind::SingularInnerMatrix, msg.str());
  }
  return Eigen::LLT<Mat<Scalar>>(N);
}

/// Λ = −(I + Σ DᵀPD)⁻¹ Mᵀ.
template <typename Scalar>
Mat<Scalar> feedback_gain(const Mat<Scalar>& B, const MatFamily<Scalar>& C,
                          const MatFamily<Scalar>& D, const Mat<Scalar>& P,
                          const MatFamily<Scalar>& Q) {
  const Mat<Scalar> M = coupling_matrix(B, C, D, P, Q);
  const auto llt = factor_inner(inner_matrix(D, P, B.cols()));
  return -llt.solve(M.transpose());
}

/// G(A,B,C,D;S;P,Q) = AᵀP + PA + S + Σ(CᵢᵀPCᵢ + CᵢᵀQᵢ + QᵢCᵢ) − M N⁻¹ Mᵀ, symmetrized.
template <typename Scalar>
Mat<Scalar> generator_G(const Mat<Scalar>& A, const Mat<Scalar>& B, const MatFamily<Scalar>& C,
                        const MatFamily<Scalar>& D, const Mat<Scalar>& S, const Mat<Scalar>& P,
                        const MatFamily<Scalar>& Q) {
  Mat<Scalar> G = A.transpose() * P + P * A + S;
  for (std::size_t i = 0; i < C.size(); ++i) {
    G.noalias() += C[i].transpose() * P * C[i];
    if (i < Q.size()) {
      G.noalias() += C[i].transpose() * Q[i];
      G.noalias() += Q[i] * C[i];
    }
  }
  const Mat<Scalar> M = coupling_matrix(B, C, D, P, Q);
  const auto llt = factor_inner(inner_matrix(D, P, B.cols()));
  G.noalias() -= M * llt.solve(M.transpose());
  return sym(G);
}

/// Chaos moments of the child values of a node-valued matrix V:
///   hat   = E[V],
///   lin_i = E[V ξⁱ]/Δ,
///   cross_{ij} = E[V ξⁱ ξʲ]/Δ for i < j (stored row-major over pairs).
template <typename Scalar>
struct ChildMoments {
  Mat<Scalar> hat;
  MatFamily<Scalar> lin;
  MatFamily<Scalar> cross;

  const Mat<Scalar>& pair(int i, int j, int d) const {
    if (i > j) std::swap(i, j);
    return cross[i * d - i * (i + 1) / 2 + (j - i - 1)];
  }
};

template <typename Scalar>
ChildMoments<Scalar> child_moments(std::span<const Mat<Scalar>> children, int d, double step) {
  ChildMoments<Scalar> m;
  m.hat = condexp(children, d);
  for (int i = 0; i < d; ++i) m.lin.push_back(martingale_coefficient(children, d, i, step));
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) m.cross.push_back(cross_coefficient(children, d, i, j));
  }
  return m;
}

/// Moments of a node-independent value: every child equals V.
template <typename Scalar>
ChildMoments<Scalar> constant_moments(const Mat<Scalar>& V, int d) {
  ChildMoments<Scalar> m;
  m.hat = V;
  m.lin.assign(d, Mat<Scalar>::Zero(V.rows(), V.cols()));
  m.cross.assign(d * (d - 1) / 2, Mat<Scalar>::Zero(V.rows(), V.cols()));
  return m;
}

/// E[Xᵀ V Y] for X = X₀ + Σ Xⁱξⁱ, Y = Y₀ + Σ Yʲξʲ using the chaos moments of V.
template <typename Scalar>
Mat<Scalar> moment_bilinear(const ChildMoments<Scalar>& m, double step, const Mat<Scalar>& X0,
                            const MatFamily<Scalar>& X, const Mat<Scalar>& Y0,
                            const MatFamily<Scalar>& Y) {
  const int d = static_cast<int>(X.size());
  Mat<Scalar> out = X0.transpose() * m.hat * Y0;
  for (int i = 0; i < d; ++i) {
    out.noalias() += step * (X0.transpose() * m.lin[i] * Y[i]);
    out.noalias() += step * (X[i].transpose() * m.lin[i] * Y0);
    out.noalias() += step * (X[i].transpose() * m.hat * Y[i]);
    for (int j = 0; j < d; ++j) {
      if (j != i) out.noalias() += step * (X[i].transpose() * m.pair(i, j, d) * Y[j]);
    }
  }
  return out;
}

/// One backward step of the Riccati difference equation for the lattice
/// problem X⁺ = (I + ΔA)x + ΔBu + Σ(Cⁱx + Dⁱu)ξⁱ with running cost
/// Δ(xᵀSx + |u|²):
///   R_uu = ΔI + E[GᵀP⁺G],  R_ux = E[GᵀP⁺F],
///   P    = ΔS + E[FᵀP⁺F] − R_uxᵀ R_uu⁻¹ R_ux,  Λ = −R_uu⁻¹ R_ux.
template <typename Scalar>
struct ExactStep {
  Mat<Scalar> P;
  Mat<Scalar> gain;
  Mat<Scalar> Ruu;
};

template <typename Scalar>
ExactStep<Scalar> exact_riccati_step(const Mat<Scalar>& A, const Mat<Scalar>& B,
                                     const MatFamily<Scalar>& C, const MatFamily<Scalar>& D,
                                     const Mat<Scalar>& S, const ChildMoments<Scalar>& m,
                                     double step) {
  const Eigen::Index n = A.rows();
  const Eigen::Index k = B.cols();
  const Mat<Scalar> F0 = Mat<Scalar>::Identity(n, n) + step * A;
  const Mat<Scalar> G0 = step * B;
  ExactStep<Scalar> out;
  out.Ruu = sym(Mat<Scalar>(step * Mat<Scalar>::Identity(k, k) +
                            moment_bilinear(m, step, G0, D, G0, D)));
  const Mat<Scalar> Rux = moment_bilinear(m, step, G0, D, F0, C);
  const Mat<Scalar> Rxx = step * S + moment_bilinear(m, step, F0, C, F0, C);
  const auto llt = factor_inner<Scalar>(out.Ruu / step);
  out.gain = -llt.solve(Rux) / step;
  out.P = sym(Mat<Scalar>(Rxx + Rux.transpose() * out.gain));
  return out;
}

}  // namespace stochlq
