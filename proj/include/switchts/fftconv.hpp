#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "switchts/ssm.hpp"
#include "switchts/types.hpp"

namespace switchts {

namespace fft_detail {

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// In-place iterative radix-2 FFT (inverse = true divides by size).
inline void fft_inplace(std::vector<Complex>& data, bool inverse) {
  const std::size_t n = data.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a nonzero power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const Complex w_len(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      Complex w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const Complex even = data[i + j];
        const Complex odd = data[i + j + len / 2] * w;
        data[i + j] = even + odd;
        data[i + j + len / 2] = even - odd;
        w *= w_len;
      }
    }
  }
  if (inverse) {
    for (auto& v : data) v /= static_cast<double>(n);
  }
}

} // namespace fft_detail

/// Causal linear convolution of a complex kernel with a real input, truncated
/// to the input length. The FFT size is the next power of two >= 2L-1.
inline CVec fft_convolve_complex(const CVec& kernel, const Vec& u) {
  if (kernel.size() == 0) throw std::invalid_argument("fft_convolve: empty kernel");
  const std::size_t out_len = static_cast<std::size_t>(u.size());
  if (out_len == 0) return CVec();
  const std::size_t k_len = std::min<std::size_t>(kernel.size(), out_len);
  const std::size_t size = fft_detail::next_pow2(2 * out_len - 1);
  std::vector<Complex> fk(size, Complex(0.0, 0.0));
  std::vector<Complex> fu(size, Complex(0.0, 0.0));
  for (std::size_t i = 0; i < k_len; ++i) fk[i] = kernel(static_cast<Eigen::Index>(i));
  for (std::size_t i = 0; i < out_len; ++i) fu[i] = Complex(u(static_cast<Eigen::Index>(i)), 0.0);
  fft_detail::fft_inplace(fk, false);
  fft_detail::fft_inplace(fu, false);
  for (std::size_t i = 0; i < size; ++i) fk[i] *= fu[i];
  fft_detail::fft_inplace(fk, true);
  CVec y(out_len);
  for (std::size_t i = 0; i < out_len; ++i) y(static_cast<Eigen::Index>(i)) = fk[i];
  return y;
}

/// y_k = sum_{j<=k} K_j u_{k-j}; real output path.
inline Vec fft_convolve(const ConvKernel& kernel, const Vec& u) {
  return fft_convolve_complex(kernel.values, u).real();
}

/// Precomputed chunk operators of the state-passing algorithm:
///   a_pow = A_bar^chunk, m_ux columns [A^{N'-1}B, ..., B],
///   m_xy rows [C, CA, ..., CA^{N'-1}].
struct ChunkOperators {
  int chunk_size = 0;
  ParamForm form = ParamForm::Dense;
  CMat a_pow;      // dense form of A_bar^chunk
  CVec a_pow_diag; // diagonal form
  CMat m_ux;       // N x chunk
  CMat m_xy;       // chunk x N

  CVec apply_a_pow(const CVec& x) const {
    if (form == ParamForm::Diagonal) return a_pow_diag.cwiseProduct(x);
    return a_pow * x;
  }
};

/// Builds the chunk operators by repeated state propagation (no explicit
/// matrix power routine; diagonal systems stay elementwise).
inline ChunkOperators precompute_chunk_operators(const DiscretizedSSM& dssm, int chunk) {
  if (chunk < 1) throw std::invalid_argument("precompute_chunk_operators: chunk size must be >= 1");
  const int n = dssm.state_dim;
  ChunkOperators ops;
  ops.chunk_size = chunk;
  ops.form = dssm.form;
  ops.m_ux = CMat(n, chunk);
  ops.m_xy = CMat(chunk, n);

  // m_ux right-to-left: column chunk-1 is B, column j-1 = A * column j.
  CVec col = dssm.b;
  ops.m_ux.col(chunk - 1) = col;
  for (int j = chunk - 2; j >= 0; --j) {
    col = dssm.form == ParamForm::Diagonal ? CVec(dssm.a_diag.cwiseProduct(col)) : CVec(dssm.a * col);
    ops.m_ux.col(j) = col;
  }

  // m_xy top-to-bottom: row 0 is C, row j+1 = row j * A.
  Eigen::RowVectorXcd row = dssm.c.transpose();
  ops.m_xy.row(0) = row;
  for (int j = 1; j < chunk; ++j) {
    row = dssm.form == ParamForm::Diagonal
              ? Eigen::RowVectorXcd(row.cwiseProduct(dssm.a_diag.transpose()))
              : Eigen::RowVectorXcd(row * dssm.a);
    ops.m_xy.row(j) = row;
  }

  if (dssm.form == ParamForm::Diagonal) {
    ops.a_pow_diag = CVec::Ones(n);
    for (int j = 0; j < chunk; ++j) ops.a_pow_diag = ops.a_pow_diag.cwiseProduct(dssm.a_diag);
  } else {
    CMat pow = CMat::Identity(n, n);
    for (int j = 0; j < chunk; ++j) pow = dssm.a * pow;
    ops.a_pow = pow;
  }
  return ops;
}

/// State-passing convolution: the input is split into L/N' chunks, each chunk
/// is convolved with the length-N' kernel by FFT, and the recurrence carries
/// the state across chunk boundaries:
///   y^(c) = m_xy x^(c-1) + K * u^(c) + D u^(c),
///   x^(c) = a_pow x^(c-1) + m_ux u^(c).
inline Vec state_passing_convolve(const DiscretizedSSM& dssm, const Vec& u, int chunk) {
  if (chunk < 1) throw std::invalid_argument("state_passing_convolve: chunk size must be >= 1");
  const Eigen::Index len = u.size();
  if (len == 0) return Vec();
  if (len % chunk != 0)
    throw std::invalid_argument("state_passing_convolve: input length must be a multiple of the chunk size");

  const ConvKernel kernel = dssm.form == ParamForm::Diagonal ? kernel_vandermonde(dssm, chunk)
                                                             : kernel_direct(dssm, chunk);
  const ChunkOperators ops = precompute_chunk_operators(dssm, chunk);
  const Eigen::Index num_chunks = len / chunk;

  Vec y(len);
  CVec state = CVec::Zero(dssm.state_dim);
  for (Eigen::Index c = 0; c < num_chunks; ++c) {
    const Vec u_chunk = u.segment(c * chunk, chunk);
    const CVec conv = fft_convolve_complex(kernel.values, u_chunk);
    // The recurrence emits after absorbing u_k (kernel tap 0 is C_bar B_bar),
    // so the state carried from the previous chunk enters the output through
    // one extra factor of A_bar before m_xy.
    const CVec carried = ops.m_xy * dssm.apply_a(state);
    for (int j = 0; j < chunk; ++j) {
      y(c * chunk + j) = (carried(j) + conv(j)).real() + dssm.d * u_chunk(j);
    }
    state = ops.apply_a_pow(state) + ops.m_ux * u_chunk;
  }
  return y;
}

/// Padding wrapper for callers whose length is not a multiple of the chunk
/// size: zero-pads to the next multiple and truncates the output. The core
/// contract stays strict.
inline Vec state_passing_convolve_padded(const DiscretizedSSM& dssm, const Vec& u, int chunk) {
  const Eigen::Index len = u.size();
  if (len == 0) return Vec();
  if (len % chunk == 0) return state_passing_convolve(dssm, u, chunk);
  const Eigen::Index padded_len = (len / chunk + 1) * chunk;
  Vec padded = Vec::Zero(padded_len);
  padded.head(len) = u;
  Vec y = state_passing_convolve(dssm, padded, chunk);
  return y.head(len);
}

} // namespace switchts
