#include "stochlq/model.hpp"

#include "stochlq/error.hpp"

#include <algorithm>
#include <cmath>

namespace stochlq {

NodeState NodeState::at_time(double t, int d) {
  NodeState s;
  s.t = t;
  s.path_sum = Vector::Zero(d);
  s.last_sign = Eigen::VectorXi::Zero(d);
  return s;
}

std::string to_string(CoefficientKind kind) {
  switch (kind) {
    case CoefficientKind::Constant: return "Constant";
    case CoefficientKind::TimeVaryingDeterministic: return "TimeVaryingDeterministic";
    case CoefficientKind::FactorDriven: return "FactorDriven";
  }
  return "Unknown";
}

double TimeTerm::profile(double t) const {
  return shape == Shape::Sine ? std::sin(omega * t + phase) : std::exp(-rate * t);
}

double TimeTerm::sup_profile() const { return 1.0; }

double FactorTerm::factor(const NodeState& s) const {
  if (component >= s.path_sum.size()) return 0.0;
  const double z = source == Source::PathSum ? s.path_sum[component]
                                              : static_cast<double>(s.last_sign[component]);
  const double x = scale * z;
  return map == Map::Tanh ? std::tanh(x) : std::clamp(x, -1.0, 1.0);
}

CoefficientProcess CoefficientProcess::constant(Matrix value) {
  CoefficientProcess p;
  p.base = std::move(value);
  return p;
}

Matrix CoefficientProcess::at(const NodeState& s) const {
  Matrix out = base;
  if (time) out += time->profile(s.t) * time->amp;
  if (factor) out += factor->factor(s) * factor->amp;
  if (discount != 0.0) out *= std::exp(-discount * s.t);
  return out;
}

namespace {
double op_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  if (m.cols() == 1 || m.rows() == 1) return m.norm();
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}
}  // namespace

double CoefficientProcess::analytic_bound() const {
  double b = op_norm(base);
  if (time) b += time->sup_profile() * op_norm(time->amp);
  if (factor) b += op_norm(factor->amp);
  // e^(−discount·t) ≤ 1 for t ≥ 0 and discount ≥ 0.
  if (discount < 0.0) return std::numeric_limits<double>::infinity();
  return b;
}

CoefficientModel CoefficientModel::zero(Dimensions dims) {
  CoefficientModel m;
  m.dims = dims;
  m.A = CoefficientProcess::constant(Matrix::Zero(dims.n, dims.n));
  m.B = CoefficientProcess::constant(Matrix::Zero(dims.n, dims.k));
  m.S = CoefficientProcess::constant(Matrix::Zero(dims.n, dims.n));
  for (int i = 0; i < dims.d; ++i) {
    m.C.push_back(CoefficientProcess::constant(Matrix::Zero(dims.n, dims.n)));
    m.D.push_back(CoefficientProcess::constant(Matrix::Zero(dims.n, dims.k)));
  }
  m.forcing.f = CoefficientProcess::constant(Matrix::Zero(dims.n, 1));
  return m;
}

CoefficientModel CoefficientModel::constant(const Matrix& A, const Matrix& B,
                                            const MatrixFamily& C, const MatrixFamily& D,
                                            const Matrix& S, const Vector& f) {
  CoefficientModel m;
  m.dims = {static_cast<int>(A.rows()), static_cast<int>(B.cols()), static_cast<int>(C.size())};
  m.A = CoefficientProcess::constant(A);
  m.B = CoefficientProcess::constant(B);
  m.S = CoefficientProcess::constant(S);
  for (const auto& c : C) m.C.push_back(CoefficientProcess::constant(c));
  for (const auto& d : D) m.D.push_back(CoefficientProcess::constant(d));
  m.forcing.f = CoefficientProcess::constant(f);
  return m;
}

CoefficientKind CoefficientModel::kind() const {
  bool factor = false;
  bool varying = false;
  auto visit = [&](const CoefficientProcess& p) {
    factor = factor || p.factor.has_value();
    varying = varying || p.time.has_value() || p.discount != 0.0;
  };
  visit(A);
  visit(B);
  visit(S);
  visit(forcing.f);
  for (const auto& c : C) visit(c);
  for (const auto& d : D) visit(d);
  if (factor) return CoefficientKind::FactorDriven;
  if (varying) return CoefficientKind::TimeVaryingDeterministic;
  return CoefficientKind::Constant;
}

bool CoefficientModel::is_noise_free() const {
  auto zero = [](const CoefficientProcess& p) {
    return p.base.isZero(0.0) && (!p.time || p.time->amp.isZero(0.0)) &&
           (!p.factor || p.factor->amp.isZero(0.0));
  };
  return std::all_of(C.begin(), C.end(), zero) && std::all_of(D.begin(), D.end(), zero);
}

bool CoefficientModel::forcing_is_zero() const {
  const auto& p = forcing.f;
  return p.base.isZero(0.0) && (!p.time || p.time->amp.isZero(0.0)) &&
         (!p.factor || p.factor->amp.isZero(0.0));
}

Coefficients CoefficientModel::at(const NodeState& s) const {
  Coefficients c;
  c.A = A.at(s);
  c.B = B.at(s);
  c.S = sym(S.at(s));
  c.C.reserve(dims.d);
  c.D.reserve(dims.d);
  for (int i = 0; i < dims.d; ++i) {
    c.C.push_back(C[i].at(s));
    c.D.push_back(D[i].at(s));
  }
  c.f = forcing.f.at(s);
  return c;
}

CoefficientModel CoefficientModel::without_forcing() const {
  CoefficientModel m = *this;
  m.forcing = ForcingSpec{};
  m.forcing.f = CoefficientProcess::constant(Matrix::Zero(dims.n, 1));
  m.forcing.integrability = Integrability::SquareIntegrableDecaying;
  return m;
}

double dissipativity_margin(const CoefficientModel& model,
                            const std::vector<NodeState>& points) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& s : points) {
    const Matrix A = model.A.at(s);
    Matrix M = sym(A);
    for (int i = 0; i < model.dims.d; ++i) {
      const Matrix C = model.C[i].at(s);
      M += 0.5 * C.transpose() * C;
    }
    worst = std::max(worst, max_eigenvalue(M));
  }
  return 0.0 - worst;
}

}  // namespace stochlq
