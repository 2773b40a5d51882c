#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "switchts/types.hpp"

namespace switchts {

enum class ParamForm { Dense, Diagonal, Dplr };
enum class Discretization { Bilinear, Zoh };

/// Continuous-time single-input single-output state space system
///   x'(t) = A x(t) + B u(t),  y(t) = C x(t) + D u(t)
/// in dense, diagonal, or diagonal-plus-low-rank (A = diag(lambda) - P P^*)
/// parameterization.
struct ContinuousSSM {
  int state_dim = 0;
  ParamForm form = ParamForm::Dense;
  CMat a;        // dense only
  CVec lambda;   // diagonal / dplr
  CMat low_rank; // dplr only, N x r
  CVec b;
  CVec c;
  double d = 0.0;

  static ContinuousSSM dense(CMat a, CVec b, CVec c, double d = 0.0) {
    ContinuousSSM s;
    s.state_dim = static_cast<int>(a.rows());
    s.form = ParamForm::Dense;
    s.a = std::move(a);
    s.b = std::move(b);
    s.c = std::move(c);
    s.d = d;
    s.validate();
    return s;
  }

  static ContinuousSSM diagonal(CVec lambda, CVec b, CVec c, double d = 0.0) {
    ContinuousSSM s;
    s.state_dim = static_cast<int>(lambda.size());
    s.form = ParamForm::Diagonal;
    s.lambda = std::move(lambda);
    s.b = std::move(b);
    s.c = std::move(c);
    s.d = d;
    s.validate();
    return s;
  }

  static ContinuousSSM dplr(CVec lambda, CMat low_rank, CVec b, CVec c, double d = 0.0) {
    ContinuousSSM s;
    s.state_dim = static_cast<int>(lambda.size());
    s.form = ParamForm::Dplr;
    s.lambda = std::move(lambda);
    s.low_rank = std::move(low_rank);
    s.b = std::move(b);
    s.c = std::move(c);
    s.d = d;
    s.validate();
    return s;
  }

  /// Assembles the dense state matrix for any parameterization.
  CMat densified() const {
    switch (form) {
      case ParamForm::Dense:
        return a;
      case ParamForm::Diagonal:
        return CMat(lambda.asDiagonal());
      case ParamForm::Dplr:
        return CMat(lambda.asDiagonal()) - low_rank * low_rank.adjoint();
    }
    throw std::logic_error("unreachable");
  }

  void validate() const {
    if (state_dim < 1) throw std::invalid_argument("ContinuousSSM: state_dim must be >= 1");
    if (b.size() != state_dim || c.size() != state_dim)
      throw std::invalid_argument("ContinuousSSM: B and C must have length state_dim");
    if (form == ParamForm::Dense) {
      if (a.rows() != state_dim || a.cols() != state_dim)
        throw std::invalid_argument("ContinuousSSM: A must be state_dim x state_dim");
      if (!a.allFinite()) throw std::invalid_argument("ContinuousSSM: A has non-finite entries");
    } else {
      if (lambda.size() != state_dim)
        throw std::invalid_argument("ContinuousSSM: lambda must have length state_dim");
      for (int n = 0; n < state_dim; ++n) {
        if (!(lambda(n).real() < 0.0))
          throw std::invalid_argument("ContinuousSSM: Re(lambda) must be negative for stability");
      }
      if (form == ParamForm::Dplr && low_rank.rows() != state_dim)
        throw std::invalid_argument("ContinuousSSM: low-rank factor must have state_dim rows");
    }
  }
};

/// Discrete-time counterpart (A_bar, B_bar, C_bar, D) at step size delta.
/// DPLR systems are densified before discretization, so the discrete form is
/// either Dense or Diagonal.
struct DiscretizedSSM {
  int state_dim = 0;
  ParamForm form = ParamForm::Dense;
  CMat a;      // dense form
  CVec a_diag; // diagonal form
  CVec b;
  CVec c;
  double d = 0.0;
  double delta = 0.0;
  Discretization method = Discretization::Bilinear;

  static DiscretizedSSM dense(CMat a, CVec b, CVec c, double d = 0.0, double delta = 1.0) {
    DiscretizedSSM s;
    s.state_dim = static_cast<int>(a.rows());
    s.form = ParamForm::Dense;
    s.a = std::move(a);
    s.b = std::move(b);
    s.c = std::move(c);
    s.d = d;
    s.delta = delta;
    return s;
  }

  static DiscretizedSSM diagonal(CVec a_diag, CVec b, CVec c, double d = 0.0, double delta = 1.0) {
    DiscretizedSSM s;
    s.state_dim = static_cast<int>(a_diag.size());
    s.form = ParamForm::Diagonal;
    s.a_diag = std::move(a_diag);
    s.b = std::move(b);
    s.c = std::move(c);
    s.d = d;
    s.delta = delta;
    return s;
  }

  /// Convenience constructors for scalar systems, used heavily in tests.
  static DiscretizedSSM scalar(Complex a, Complex b, Complex c, double d = 0.0) {
    CVec av(1), bv(1), cv(1);
    av(0) = a;
    bv(0) = b;
    cv(0) = c;
    return diagonal(std::move(av), std::move(bv), std::move(cv), d);
  }

  CVec apply_a(const CVec& x) const {
    if (form == ParamForm::Diagonal) return a_diag.cwiseProduct(x);
    return a * x;
  }

  CVec step_state(const CVec& x, Complex u) const { return apply_a(x) + b * u; }
};

/// Convolution kernel K_bar of length L; complex internally, callers read the
/// real part for real-valued signal paths.
struct ConvKernel {
  CVec values;
  int length = 0;

  Vec real_taps() const { return values.real(); }
};

/// HiPPO-LegS state matrix: strictly lower-triangular coupling with diagonal
/// -(n+1); zero above the diagonal.
inline Mat hippo_legs(int n) {
  if (n < 1) throw std::invalid_argument("hippo_legs: dimension must be >= 1");
  Mat a = Mat::Zero(n, n);
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < row; ++col) {
      a(row, col) = -std::sqrt((2.0 * row + 1.0) * (2.0 * col + 1.0));
    }
    a(row, row) = -(row + 1.0);
  }
  return a;
}

/// S4 normal-part initialization: skew-symmetric coupling plus -1/2 on the
/// diagonal, with input vector B_n = sqrt(2n+1). The skew structure keeps all
/// eigenvalue real parts at -1/2.
inline std::pair<Mat, Vec> s4_init(int n) {
  if (n < 1) throw std::invalid_argument("s4_init: dimension must be >= 1");
  Mat a = Mat::Zero(n, n);
  Vec b(n);
  for (int row = 0; row < n; ++row) {
    b(row) = std::sqrt(2.0 * row + 1.0);
    for (int col = 0; col < n; ++col) {
      if (row > col) {
        a(row, col) = -std::sqrt((2.0 * row + 1.0) * (2.0 * col + 1.0));
      } else if (row == col) {
        a(row, col) = -0.5;
      } else {
        a(row, col) = std::sqrt((2.0 * row + 1.0) * (2.0 * col + 1.0));
      }
    }
  }
  return {a, b};
}

/// S4D-Inv diagonal initialization:
///   lambda_n = -1/2 + i (N/pi) (N/(2n+1) - 1).
/// The companion input vector is all ones.
inline CVec s4d_inv_init(int n) {
  if (n < 1) throw std::invalid_argument("s4d_inv_init: dimension must be >= 1");
  CVec lambda(n);
  for (int k = 0; k < n; ++k) {
    const double imag = (n / M_PI) * (static_cast<double>(n) / (2.0 * k + 1.0) - 1.0);
    lambda(k) = Complex(-0.5, imag);
  }
  return lambda;
}

/// Bilinear (GBT with alpha = 1/2) or zero-order-hold discretization.
/// ZOH requires the diagonal form; DPLR systems are densified first.
inline DiscretizedSSM discretize(const ContinuousSSM& ssm, double delta, Discretization method) {
  if (!(delta > 0.0)) throw std::invalid_argument("discretize: step size must be positive");
  DiscretizedSSM out;
  out.state_dim = ssm.state_dim;
  out.b = CVec(ssm.state_dim);
  out.c = ssm.c;
  out.d = ssm.d;
  out.delta = delta;
  out.method = method;

  if (method == Discretization::Zoh) {
    if (ssm.form != ParamForm::Diagonal)
      throw std::invalid_argument("discretize: zoh requires the diagonal parameterization");
    out.form = ParamForm::Diagonal;
    out.a_diag = CVec(ssm.state_dim);
    for (int n = 0; n < ssm.state_dim; ++n) {
      const Complex lam = ssm.lambda(n);
      if (std::abs(lam) == 0.0)
        throw std::runtime_error("discretize: degenerate eigenvalue lambda = 0 under zoh");
      const Complex edl = std::exp(delta * lam);
      out.a_diag(n) = edl;
      out.b(n) = (edl - 1.0) / lam * ssm.b(n);
    }
    return out;
  }

  if (ssm.form == ParamForm::Diagonal) {
    out.form = ParamForm::Diagonal;
    out.a_diag = CVec(ssm.state_dim);
    for (int n = 0; n < ssm.state_dim; ++n) {
      const Complex denom = 1.0 - 0.5 * delta * ssm.lambda(n);
      if (std::abs(denom) < 1e-14)
        throw std::runtime_error("discretize: (I - delta/2 A) is singular");
      out.a_diag(n) = (1.0 + 0.5 * delta * ssm.lambda(n)) / denom;
      out.b(n) = delta * ssm.b(n) / denom;
    }
    return out;
  }

  const CMat a_dense = ssm.densified();
  const int n = ssm.state_dim;
  const CMat lhs = CMat::Identity(n, n) - (0.5 * delta) * a_dense;
  Eigen::PartialPivLU<CMat> lu(lhs);
  const double rcond_proxy = std::abs(lu.determinant());
  if (!(rcond_proxy > 1e-300))
    throw std::runtime_error("discretize: (I - delta/2 A) is singular");
  out.form = ParamForm::Dense;
  out.a = lu.solve(CMat::Identity(n, n) + (0.5 * delta) * a_dense);
  out.b = lu.solve(CVec(delta * ssm.b));
  return out;
}

namespace detail {
inline Complex dot_unconjugated(const CVec& a, const CVec& b) {
  return (a.array() * b.array()).sum();
}
} // namespace detail

/// K_bar_l = C_bar A_bar^l B_bar for l = 0..len-1, evaluated by propagating
/// the state vector (no explicit matrix powers).
inline ConvKernel kernel_direct(const DiscretizedSSM& dssm, int len) {
  if (len < 1) throw std::invalid_argument("kernel_direct: length must be >= 1");
  ConvKernel k;
  k.length = len;
  k.values = CVec(len);
  CVec state = dssm.b;
  k.values(0) = detail::dot_unconjugated(dssm.c, state);
  for (int l = 1; l < len; ++l) {
    if (dssm.form == ParamForm::Diagonal) {
      state = dssm.a_diag.cwiseProduct(state);
    } else {
      state = dssm.a * state;
    }
    k.values(l) = detail::dot_unconjugated(dssm.c, state);
  }
  return k;
}

/// Vandermonde evaluation of the kernel for diagonal systems:
///   K_bar_l = sum_n C_n A_bar_n^l B_bar_n,
/// swept row-by-row over the state dimensions with running powers.
inline ConvKernel kernel_vandermonde(const DiscretizedSSM& dssm, int len) {
  if (dssm.form != ParamForm::Diagonal)
    throw std::invalid_argument("kernel_vandermonde: diagonal parameterization required");
  if (len < 1) throw std::invalid_argument("kernel_vandermonde: length must be >= 1");
  ConvKernel k;
  k.length = len;
  k.values = CVec::Zero(len);
  for (int n = 0; n < dssm.state_dim; ++n) {
    const Complex weight = dssm.c(n) * dssm.b(n);
    Complex power = 1.0;
    for (int l = 0; l < len; ++l) {
      k.values(l) += weight * power;
      power *= dssm.a_diag(n);
    }
  }
  return k;
}

/// Runs the discrete recurrence x_k = A_bar x_{k-1} + B_bar u_k,
/// y_k = Re(C_bar x_k) + D u_k, starting from x0 (zero by default).
inline Vec apply_recurrent(const DiscretizedSSM& dssm, const Vec& u, CVec x0 = CVec()) {
  CVec state = x0.size() == 0 ? CVec(CVec::Zero(dssm.state_dim)) : std::move(x0);
  if (state.size() != dssm.state_dim)
    throw std::invalid_argument("apply_recurrent: initial state has wrong dimension");
  Vec y(u.size());
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    state = dssm.step_state(state, u(k));
    y(k) = detail::dot_unconjugated(dssm.c, state).real() + dssm.d * u(k);
  }
  return y;
}

/// Final state after running the recurrence over u (used by chunked paths).
inline CVec final_state(const DiscretizedSSM& dssm, const Vec& u, CVec x0 = CVec()) {
  CVec state = x0.size() == 0 ? CVec(CVec::Zero(dssm.state_dim)) : std::move(x0);
  for (Eigen::Index k = 0; k < u.size(); ++k) state = dssm.step_state(state, u(k));
  return state;
}

/// Largest eigenvalue magnitude of A_bar.
inline double spectral_radius(const DiscretizedSSM& dssm) {
  if (dssm.form == ParamForm::Diagonal) return dssm.a_diag.cwiseAbs().maxCoeff();
  Eigen::ComplexEigenSolver<CMat> solver(dssm.a, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// Stability classification with tolerance 1e-9 on |eig|.
inline bool is_discrete_stable(const DiscretizedSSM& dssm) {
  return spectral_radius(dssm) < 1.0 - 1e-9;
}

} // namespace switchts
