#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "switchts/rng.hpp"
#include "switchts/types.hpp"

namespace switchts::snlds {

constexpr double kCovarianceFloor = 1e-6;
constexpr double kGammaFloor = 1e-12;
constexpr double kLogvarClamp = 20.0;

namespace detail {

inline Mat floor_spd(const Mat& m) {
  Mat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  Vec vals = es.eigenvalues().cwiseMax(kCovarianceFloor);
  return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

inline Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

inline double log_sum_exp(const Vec& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// Multivariate Gaussian log density with a cached Cholesky factor.
struct GaussianDensity {
  Eigen::LLT<Mat> llt;
  double log_norm = 0.0;
  int dim = 0;

  explicit GaussianDensity(const Mat& cov) : llt(cov), dim(static_cast<int>(cov.rows())) {
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("GaussianDensity: covariance is not positive definite");
    double log_det = 0.0;
    for (int i = 0; i < dim; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
    log_norm = -0.5 * (dim * std::log(2.0 * M_PI) + log_det);
  }

  double log_pdf(const Vec& value, const Vec& mean) const {
    const Vec diff = value - mean;
    const Vec white = llt.matrixL().solve(diff);
    return log_norm - 0.5 * white.squaredNorm();
  }

  Vec sample(const Vec& mean, Rng& rng) const {
    Vec eps(dim);
    for (int i = 0; i < dim; ++i) eps(i) = rng.normal();
    return mean + llt.matrixL() * eps;
  }
};

} // namespace detail

/// Switching (non)linear dynamical system:
///   s_t ~ Cat(softmax(f_s(x_{t-1}, s_{t-1}))),
///   z_t ~ N(f_z(z_{t-1}, s_t), Q),  x_t ~ N(f_x(z_t), R).
/// The linear-Gaussian family keeps f_x, f_z affine; fixed nonlinear maps can
/// replace the means for generation and evidence evaluation.
struct SnldsModel {
  int num_modes = 0;
  int state_dim = 0;
  int obs_dim = 0;

  Mat emission_matrix; // D x Lz
  Vec emission_bias;   // D
  Mat emission_cov;    // R
  std::function<Vec(const Vec&)> emission_fn;

  std::vector<Mat> dynamics_matrix; // per mode, Lz x Lz
  std::vector<Vec> dynamics_bias;   // per mode, Lz
  Mat dynamics_cov;                 // Q_z
  std::function<Vec(const Vec&, int)> dynamics_fn;

  std::vector<Mat> trans_weight; // per previous mode, K x D
  std::vector<Vec> trans_bias;   // per previous mode, K

  Vec pi_logits;              // K
  std::vector<Vec> init_mean; // per mode, Lz
  Mat init_cov;               // Lz x Lz

  bool linear_gaussian() const { return !emission_fn && !dynamics_fn; }

  Vec emission_mean(const Vec& z) const {
    return emission_fn ? emission_fn(z) : Vec(emission_matrix * z + emission_bias);
  }

  Vec dynamics_mean(const Vec& z, int mode) const {
    return dynamics_fn ? dynamics_fn(z, mode)
                       : Vec(dynamics_matrix[mode] * z + dynamics_bias[mode]);
  }

  Vec initial_distribution() const { return detail::softmax(pi_logits); }

  /// Applies the covariance eigenvalue floor and checks shapes.
  void validate() {
    if (num_modes < 1 || state_dim < 1 || obs_dim < 1)
      throw std::invalid_argument("SnldsModel: dimensions must be positive");
    auto expect = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("SnldsModel: bad shape for ") + what);
    };
    expect(emission_matrix.rows() == obs_dim && emission_matrix.cols() == state_dim, "emission matrix");
    expect(emission_bias.size() == obs_dim, "emission bias");
    expect(static_cast<int>(dynamics_matrix.size()) == num_modes, "dynamics matrices");
    expect(static_cast<int>(dynamics_bias.size()) == num_modes, "dynamics biases");
    expect(static_cast<int>(trans_weight.size()) == num_modes, "transition weights");
    expect(static_cast<int>(trans_bias.size()) == num_modes, "transition biases");
    expect(pi_logits.size() == num_modes, "initial logits");
    expect(static_cast<int>(init_mean.size()) == num_modes, "initial means");
    for (int k = 0; k < num_modes; ++k) {
      expect(dynamics_matrix[k].rows() == state_dim && dynamics_matrix[k].cols() == state_dim,
             "dynamics matrix");
      expect(dynamics_bias[k].size() == state_dim, "dynamics bias");
      expect(trans_weight[k].rows() == num_modes && trans_weight[k].cols() == obs_dim,
             "transition weight");
      expect(trans_bias[k].size() == num_modes, "transition bias");
      expect(init_mean[k].size() == state_dim, "initial mean");
    }
    emission_cov = detail::floor_spd(emission_cov);
    dynamics_cov = detail::floor_spd(dynamics_cov);
    init_cov = detail::floor_spd(init_cov);
  }
};

/// Row j is the categorical distribution of s_t given s_{t-1} = j and the
/// previous observation.
inline Mat mode_transition_matrix(const SnldsModel& model, const Vec& x_prev) {
  if (!x_prev.allFinite()) throw std::invalid_argument("mode_transition_matrix: non-finite input");
  Mat out(model.num_modes, model.num_modes);
  for (int j = 0; j < model.num_modes; ++j) {
    out.row(j) = detail::softmax(model.trans_bias[j] + model.trans_weight[j] * x_prev).transpose();
  }
  return out;
}

/// Log local evidence table: entry (t, k) is the log density of (z_t, x_t)
/// under mode k, i.e. log N(z_t | f_z(z_{t-1}, k), Q) + log N(x_t | f_x(z_t), R)
/// (the initial density at t = 0).
inline Mat local_evidence(const SnldsModel& model, const Mat& x, const Mat& z) {
  const auto steps = x.rows();
  if (z.rows() != steps) throw std::invalid_argument("local_evidence: x and z length mismatch");
  if (x.cols() != model.obs_dim || z.cols() != model.state_dim)
    throw std::invalid_argument("local_evidence: dimension mismatch");
  const detail::GaussianDensity emission(model.emission_cov);
  const detail::GaussianDensity dynamics(model.dynamics_cov);
  const detail::GaussianDensity initial(model.init_cov);

  Mat log_e(steps, model.num_modes);
  for (Eigen::Index t = 0; t < steps; ++t) {
    const Vec xt = x.row(t).transpose();
    const Vec zt = z.row(t).transpose();
    const double emis = emission.log_pdf(xt, model.emission_mean(zt));
    for (int k = 0; k < model.num_modes; ++k) {
      const double dyn = t == 0
                             ? initial.log_pdf(zt, model.init_mean[k])
                             : dynamics.log_pdf(zt, model.dynamics_mean(z.row(t - 1).transpose(), k));
      log_e(t, k) = dyn + emis;
    }
  }
  return log_e;
}

/// Smoothed discrete-state posteriors from the scaled alpha-beta recursion.
struct PosteriorMarginals {
  Mat gamma;           // T x K
  std::vector<Mat> xi; // T-1 of K x K; entry i couples (s_i, s_{i+1})
  double loglik = 0.0;
};

inline PosteriorMarginals forward_backward(const Vec& init_probs, const std::vector<Mat>& trans,
                                           const Mat& log_evidence) {
  const auto steps = log_evidence.rows();
  const auto num_modes = log_evidence.cols();
  if (init_probs.size() != num_modes)
    throw std::invalid_argument("forward_backward: initial distribution size mismatch");
  if (static_cast<Eigen::Index>(trans.size()) != std::max<Eigen::Index>(steps - 1, 0))
    throw std::invalid_argument("forward_backward: need T-1 transition matrices");
  for (const Mat& p : trans) {
    for (Eigen::Index j = 0; j < num_modes; ++j) {
      if (std::abs(p.row(j).sum() - 1.0) > 1e-9)
        throw std::invalid_argument("forward_backward: transition rows must sum to 1");
    }
  }

  Mat scaled_evidence(steps, num_modes);
  Vec shifts(steps);
  for (Eigen::Index t = 0; t < steps; ++t) {
    shifts(t) = log_evidence.row(t).maxCoeff();
    if (!std::isfinite(shifts(t)))
      throw std::runtime_error("forward_backward: impossible observation (all-zero evidence row)");
    scaled_evidence.row(t) = (log_evidence.row(t).array() - shifts(t)).exp();
  }

  Mat alpha(steps, num_modes);
  Vec scale(steps);
  Vec a = init_probs.cwiseProduct(scaled_evidence.row(0).transpose());
  scale(0) = a.sum();
  if (!(scale(0) > 0.0))
    throw std::runtime_error("forward_backward: impossible observation at the first step");
  alpha.row(0) = (a / scale(0)).transpose();
  for (Eigen::Index t = 1; t < steps; ++t) {
    a = scaled_evidence.row(t).transpose().cwiseProduct(trans[t - 1].transpose() *
                                                        alpha.row(t - 1).transpose());
    scale(t) = a.sum();
    if (!(scale(t) > 0.0))
      throw std::runtime_error("forward_backward: impossible observation (vanishing forward mass)");
    alpha.row(t) = (a / scale(t)).transpose();
  }

  Mat beta = Mat::Ones(steps, num_modes);
  for (Eigen::Index t = steps - 2; t >= 0; --t) {
    const Vec weighted =
        scaled_evidence.row(t + 1).transpose().cwiseProduct(beta.row(t + 1).transpose());
    beta.row(t) = (trans[t] * weighted / scale(t + 1)).transpose();
  }

  PosteriorMarginals out;
  out.gamma = alpha.cwiseProduct(beta);
  out.xi.reserve(steps > 0 ? steps - 1 : 0);
  for (Eigen::Index t = 0; t + 1 < steps; ++t) {
    Mat pair(num_modes, num_modes);
    for (Eigen::Index j = 0; j < num_modes; ++j) {
      for (Eigen::Index k = 0; k < num_modes; ++k) {
        pair(j, k) = alpha(t, j) * trans[t](j, k) * scaled_evidence(t + 1, k) * beta(t + 1, k) /
                     scale(t + 1);
      }
    }
    out.xi.push_back(std::move(pair));
  }
  out.loglik = scale.array().log().sum() + shifts.sum();
  return out;
}

/// Log-space forward pass; returns the same log likelihood as the scaled
/// recursion (used as a numerical cross-check and by the regularizer
/// backprop).
inline double forward_loglik_logspace(const Vec& init_probs, const std::vector<Mat>& trans,
                                      const Mat& log_evidence) {
  const auto steps = log_evidence.rows();
  const auto num_modes = log_evidence.cols();
  Vec la = init_probs.array().log().matrix() + log_evidence.row(0).transpose();
  for (Eigen::Index t = 1; t < steps; ++t) {
    Vec next(num_modes);
    for (Eigen::Index k = 0; k < num_modes; ++k) {
      Vec terms = la + trans[t - 1].col(k).array().log().matrix();
      next(k) = detail::log_sum_exp(terms) + log_evidence(t, k);
    }
    la = next;
  }
  return detail::log_sum_exp(la);
}

/// Per-step KL(uniform || gamma_t), gamma floored before the log.
inline double ce_regularizer(const Mat& gamma) {
  const auto num_modes = gamma.cols();
  const double uniform = 1.0 / static_cast<double>(num_modes);
  double total = 0.0;
  for (Eigen::Index t = 0; t < gamma.rows(); ++t) {
    for (Eigen::Index k = 0; k < num_modes; ++k) {
      total += uniform * (std::log(uniform) - std::log(std::max(gamma(t, k), kGammaFloor)));
    }
  }
  return total;
}

/// S4-style variational encoder:
///   g_t = A^x g_{t-1} + B^x x_t,   h^x_t = tanh(C^x g_t),
///   h^z_t = A^z h^z_{t-1} + B^z h^x_t,
///   q(z_t) = N(W_m h^z_t + b_m, diag exp(W_v h^z_t + b_v)).
/// The nonlinearity sits on the h^x outputs; a flag extends it to h^z.
struct VariationalPosterior {
  int obs_dim = 0;
  int x_state_dim = 0;
  int z_state_dim = 0;
  int latent_dim = 0;

  Mat a_x, b_x, c_x; // Hx x Hx, Hx x D, Hx x Hx
  Mat a_z, b_z;      // Hz x Hz, Hz x Hx
  Mat head_mean_w;   // Lz x Hz
  Vec head_mean_b;   // Lz
  Mat head_logvar_w; // Lz x Hz
  Vec head_logvar_b; // Lz
  bool tanh_on_hz = false;

  void validate() const {
    if (obs_dim < 1 || x_state_dim < 1 || z_state_dim < 1 || latent_dim < 1)
      throw std::invalid_argument("VariationalPosterior: dimensions must be positive");
    if (a_x.rows() != x_state_dim || a_x.cols() != x_state_dim || b_x.rows() != x_state_dim ||
        b_x.cols() != obs_dim || c_x.rows() != x_state_dim || c_x.cols() != x_state_dim ||
        a_z.rows() != z_state_dim || a_z.cols() != z_state_dim || b_z.rows() != z_state_dim ||
        b_z.cols() != x_state_dim || head_mean_w.rows() != latent_dim ||
        head_mean_w.cols() != z_state_dim || head_mean_b.size() != latent_dim ||
        head_logvar_w.rows() != latent_dim || head_logvar_w.cols() != z_state_dim ||
        head_logvar_b.size() != latent_dim)
      throw std::invalid_argument("VariationalPosterior: inconsistent shapes");
  }
};

struct EncodeResult {
  Mat x_state;    // T x Hx, pre-output recurrence state g_t
  Mat hx;         // T x Hx, tanh(C^x g_t)
  Mat hz;         // T x Hz
  Mat hz_act;     // T x Hz, equals hz unless tanh_on_hz
  Mat mean;       // T x Lz
  Mat logvar;     // T x Lz, clamped to [-kLogvarClamp, kLogvarClamp]
  Mat eps;        // T x Lz
  Mat z;          // mean + exp(logvar / 2) .* eps
};

inline EncodeResult encode(const VariationalPosterior& posterior, const Mat& x,
                           std::uint64_t seed) {
  if (!x.allFinite()) throw std::invalid_argument("encode: non-finite input");
  if (x.cols() != posterior.obs_dim) throw std::invalid_argument("encode: obs dimension mismatch");
  const auto steps = x.rows();
  EncodeResult r;
  r.x_state = Mat(steps, posterior.x_state_dim);
  r.hx = Mat(steps, posterior.x_state_dim);
  r.hz = Mat(steps, posterior.z_state_dim);
  r.hz_act = Mat(steps, posterior.z_state_dim);
  r.mean = Mat(steps, posterior.latent_dim);
  r.logvar = Mat(steps, posterior.latent_dim);
  r.eps = Mat(steps, posterior.latent_dim);
  r.z = Mat(steps, posterior.latent_dim);

  Rng rng(seed);
  Vec g = Vec::Zero(posterior.x_state_dim);
  Vec hz = Vec::Zero(posterior.z_state_dim);
  for (Eigen::Index t = 0; t < steps; ++t) {
    g = posterior.a_x * g + posterior.b_x * x.row(t).transpose();
    r.x_state.row(t) = g.transpose();
    const Vec hx = (posterior.c_x * g).array().tanh().matrix();
    r.hx.row(t) = hx.transpose();
    hz = posterior.a_z * hz + posterior.b_z * hx;
    r.hz.row(t) = hz.transpose();
    const Vec hz_act = posterior.tanh_on_hz ? Vec(hz.array().tanh().matrix()) : hz;
    r.hz_act.row(t) = hz_act.transpose();
    const Vec mean = posterior.head_mean_w * hz_act + posterior.head_mean_b;
    Vec logvar = posterior.head_logvar_w * hz_act + posterior.head_logvar_b;
    logvar = logvar.cwiseMax(-kLogvarClamp).cwiseMin(kLogvarClamp);
    r.mean.row(t) = mean.transpose();
    r.logvar.row(t) = logvar.transpose();
    for (int i = 0; i < posterior.latent_dim; ++i) r.eps(t, i) = rng.normal();
    r.z.row(t) = (mean.array() + (logvar.array() / 2.0).exp() * r.eps.row(t).transpose().array())
                     .transpose();
  }
  return r;
}

/// Closed-form entropy of the diagonal Gaussian posterior.
inline double posterior_entropy(const Mat& logvar) {
  const double per_coord = 0.5 * (std::log(2.0 * M_PI) + 1.0);
  return per_coord * static_cast<double>(logvar.size()) + 0.5 * logvar.sum();
}

struct LossReport {
  double elbo = 0.0;
  double likelihood_term = 0.0;
  double entropy_term = 0.0;
  double ce_term = 0.0;
  double eta = 0.0;
  double total = 0.0;
};

namespace detail {

inline std::vector<Mat> transition_stack(const SnldsModel& model, const Mat& x) {
  std::vector<Mat> trans;
  const auto steps = x.rows();
  trans.reserve(steps > 0 ? steps - 1 : 0);
  for (Eigen::Index t = 0; t + 1 < steps; ++t) {
    trans.push_back(mode_transition_matrix(model, x.row(t).transpose()));
  }
  return trans;
}

} // namespace detail

/// Monte-Carlo ELBO: reparameterized z samples, exact discrete marginalization
/// by the forward-backward pass, closed-form entropy. The report also carries
/// the cross-entropy regularizer averaged over samples and the total
/// ELBO - eta * CE.
inline LossReport elbo(const SnldsModel& model, const VariationalPosterior& posterior,
                       const Mat& x, int num_samples, std::uint64_t seed, double eta = 0.0) {
  if (num_samples < 1) throw std::invalid_argument("elbo: need at least one sample");
  const std::vector<Mat> trans = detail::transition_stack(model, x);
  const Vec init = model.initial_distribution();

  LossReport report;
  report.eta = eta;
  double entropy = 0.0;
  for (int s = 0; s < num_samples; ++s) {
    const EncodeResult enc = encode(posterior, x, mix_seed(seed, static_cast<std::uint64_t>(s)));
    const Mat log_e = local_evidence(model, x, enc.z);
    const PosteriorMarginals marginals = forward_backward(init, trans, log_e);
    report.likelihood_term += marginals.loglik;
    report.ce_term += ce_regularizer(marginals.gamma);
    if (s == 0) entropy = posterior_entropy(enc.logvar);
  }
  report.likelihood_term /= num_samples;
  report.ce_term /= num_samples;
  report.entropy_term = entropy;
  report.elbo = report.likelihood_term + report.entropy_term;
  report.total = report.elbo - eta * report.ce_term;
  return report;
}

/// Gradient container mirroring every learnable parameter. Covariances are
/// parameterized by the log of their diagonals (the analytic-gradient path
/// requires diagonal covariance matrices).
struct SnldsGradients {
  Mat emission_matrix;
  Vec emission_bias;
  Vec emission_logvar;
  std::vector<Mat> dynamics_matrix;
  std::vector<Vec> dynamics_bias;
  Vec dynamics_logvar;
  std::vector<Mat> trans_weight;
  std::vector<Vec> trans_bias;
  Vec pi_logits;
  std::vector<Vec> init_mean;
  Vec init_logvar;

  Mat a_x, b_x, c_x, a_z, b_z;
  Mat head_mean_w, head_logvar_w;
  Vec head_mean_b, head_logvar_b;

  static SnldsGradients zeros(const SnldsModel& m, const VariationalPosterior& q) {
    SnldsGradients g;
    g.emission_matrix = Mat::Zero(m.obs_dim, m.state_dim);
    g.emission_bias = Vec::Zero(m.obs_dim);
    g.emission_logvar = Vec::Zero(m.obs_dim);
    g.dynamics_logvar = Vec::Zero(m.state_dim);
    g.init_logvar = Vec::Zero(m.state_dim);
    g.pi_logits = Vec::Zero(m.num_modes);
    for (int k = 0; k < m.num_modes; ++k) {
      g.dynamics_matrix.push_back(Mat::Zero(m.state_dim, m.state_dim));
      g.dynamics_bias.push_back(Vec::Zero(m.state_dim));
      g.trans_weight.push_back(Mat::Zero(m.num_modes, m.obs_dim));
      g.trans_bias.push_back(Vec::Zero(m.num_modes));
      g.init_mean.push_back(Vec::Zero(m.state_dim));
    }
    g.a_x = Mat::Zero(q.x_state_dim, q.x_state_dim);
    g.b_x = Mat::Zero(q.x_state_dim, q.obs_dim);
    g.c_x = Mat::Zero(q.x_state_dim, q.x_state_dim);
    g.a_z = Mat::Zero(q.z_state_dim, q.z_state_dim);
    g.b_z = Mat::Zero(q.z_state_dim, q.x_state_dim);
    g.head_mean_w = Mat::Zero(q.latent_dim, q.z_state_dim);
    g.head_mean_b = Vec::Zero(q.latent_dim);
    g.head_logvar_w = Mat::Zero(q.latent_dim, q.z_state_dim);
    g.head_logvar_b = Vec::Zero(q.latent_dim);
    return g;
  }

  void scale(double factor) {
    auto sc = [factor](auto& m) { m *= factor; };
    sc(emission_matrix); sc(emission_bias); sc(emission_logvar);
    for (auto& m : dynamics_matrix) sc(m);
    for (auto& v : dynamics_bias) sc(v);
    sc(dynamics_logvar);
    for (auto& m : trans_weight) sc(m);
    for (auto& v : trans_bias) sc(v);
    sc(pi_logits);
    for (auto& v : init_mean) sc(v);
    sc(init_logvar);
    sc(a_x); sc(b_x); sc(c_x); sc(a_z); sc(b_z);
    sc(head_mean_w); sc(head_mean_b); sc(head_logvar_w); sc(head_logvar_b);
  }
};

namespace detail {

inline void require_diagonal(const Mat& cov, const char* name) {
  for (Eigen::Index i = 0; i < cov.rows(); ++i) {
    for (Eigen::Index j = 0; j < cov.cols(); ++j) {
      if (i != j && std::abs(cov(i, j)) > 1e-12)
        throw std::invalid_argument(std::string("analytic gradients require a diagonal ") + name +
                                    " covariance (finite-difference fallback available)");
    }
  }
}

/// Flattened parameter order shared by flatten/apply/gradient.
template <typename ModelLike, typename PostLike, typename Fn>
void for_each_block(ModelLike& m, PostLike& q, Fn&& fn) {
  fn(m.emission_matrix);
  fn(m.emission_bias);
  for (auto& a : m.dynamics_matrix) fn(a);
  for (auto& b : m.dynamics_bias) fn(b);
  for (auto& w : m.trans_weight) fn(w);
  for (auto& b : m.trans_bias) fn(b);
  fn(m.pi_logits);
  for (auto& v : m.init_mean) fn(v);
  fn(q.a_x);
  fn(q.b_x);
  fn(q.c_x);
  fn(q.a_z);
  fn(q.b_z);
  fn(q.head_mean_w);
  fn(q.head_mean_b);
  fn(q.head_logvar_w);
  fn(q.head_logvar_b);
}

} // namespace detail

/// Number of scalar parameters (including the three log-diagonal covariance
/// blocks appended after the matrix blocks).
inline Eigen::Index parameter_count(const SnldsModel& model, const VariationalPosterior& posterior) {
  Eigen::Index n = 0;
  detail::for_each_block(const_cast<SnldsModel&>(model), const_cast<VariationalPosterior&>(posterior),
                         [&n](auto& block) { n += block.size(); });
  return n + model.obs_dim + 2 * model.state_dim;
}

/// Serializes every learnable parameter; covariances enter as log diagonals.
inline Vec flatten_parameters(const SnldsModel& model, const VariationalPosterior& posterior) {
  detail::require_diagonal(model.emission_cov, "emission");
  detail::require_diagonal(model.dynamics_cov, "dynamics");
  detail::require_diagonal(model.init_cov, "initial");
  Vec out(parameter_count(model, posterior));
  Eigen::Index at = 0;
  detail::for_each_block(const_cast<SnldsModel&>(model), const_cast<VariationalPosterior&>(posterior),
                         [&](auto& block) {
                           for (Eigen::Index i = 0; i < block.rows(); ++i)
                             for (Eigen::Index j = 0; j < block.cols(); ++j) out(at++) = block(i, j);
                         });
  for (int i = 0; i < model.obs_dim; ++i) out(at++) = std::log(model.emission_cov(i, i));
  for (int i = 0; i < model.state_dim; ++i) out(at++) = std::log(model.dynamics_cov(i, i));
  for (int i = 0; i < model.state_dim; ++i) out(at++) = std::log(model.init_cov(i, i));
  return out;
}

inline void apply_parameters(SnldsModel& model, VariationalPosterior& posterior, const Vec& v) {
  if (v.size() != parameter_count(model, posterior))
    throw std::invalid_argument("apply_parameters: wrong vector length");
  Eigen::Index at = 0;
  detail::for_each_block(model, posterior, [&](auto& block) {
    for (Eigen::Index i = 0; i < block.rows(); ++i)
      for (Eigen::Index j = 0; j < block.cols(); ++j) block(i, j) = v(at++);
  });
  model.emission_cov = Mat::Zero(model.obs_dim, model.obs_dim);
  for (int i = 0; i < model.obs_dim; ++i) model.emission_cov(i, i) = std::exp(v(at++));
  model.dynamics_cov = Mat::Zero(model.state_dim, model.state_dim);
  for (int i = 0; i < model.state_dim; ++i) model.dynamics_cov(i, i) = std::exp(v(at++));
  model.init_cov = Mat::Zero(model.state_dim, model.state_dim);
  for (int i = 0; i < model.state_dim; ++i) model.init_cov(i, i) = std::exp(v(at++));
}

inline Vec flatten_gradients(const SnldsGradients& grads) {
  Eigen::Index n = 0;
  detail::for_each_block(const_cast<SnldsGradients&>(grads), const_cast<SnldsGradients&>(grads),
                         [](auto&) {});
  // The gradient struct mirrors the flatten order manually (the head blocks of
  // for_each_block live on different member names for model and posterior).
  std::vector<const Mat*> mats;
  std::vector<const Vec*> vecs;
  (void)n;
  Vec out;
  std::vector<double> vals;
  auto push_mat = [&vals](const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) vals.push_back(m(i, j));
  };
  auto push_vec = [&vals](const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) vals.push_back(v(i));
  };
  push_mat(grads.emission_matrix);
  push_vec(grads.emission_bias);
  for (const auto& m : grads.dynamics_matrix) push_mat(m);
  for (const auto& v : grads.dynamics_bias) push_vec(v);
  for (const auto& m : grads.trans_weight) push_mat(m);
  for (const auto& v : grads.trans_bias) push_vec(v);
  push_vec(grads.pi_logits);
  for (const auto& v : grads.init_mean) push_vec(v);
  push_mat(grads.a_x);
  push_mat(grads.b_x);
  push_mat(grads.c_x);
  push_mat(grads.a_z);
  push_mat(grads.b_z);
  push_mat(grads.head_mean_w);
  push_vec(grads.head_mean_b);
  push_mat(grads.head_logvar_w);
  push_vec(grads.head_logvar_b);
  push_vec(grads.emission_logvar);
  push_vec(grads.dynamics_logvar);
  push_vec(grads.init_logvar);
  out = Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  return out;
}

namespace detail {

/// Accumulates parameter and z gradients of the weighted evidence factors:
/// sum_{t,k} weight(t,k) * grad log N(z_t | ., Q or P0) and the emission
/// factor with weight sum_k weight(t,k). Covariances must be diagonal.
inline void accumulate_evidence_gradients(const SnldsModel& model, const Mat& x, const Mat& z,
                                          const Mat& weights, SnldsGradients& grads,
                                          Mat& z_grad) {
  const auto steps = x.rows();
  const Vec r_diag = model.emission_cov.diagonal();
  const Vec q_diag = model.dynamics_cov.diagonal();
  const Vec p0_diag = model.init_cov.diagonal();

  for (Eigen::Index t = 0; t < steps; ++t) {
    const Vec xt = x.row(t).transpose();
    const Vec zt = z.row(t).transpose();
    const double wsum = weights.row(t).sum();

    // Emission factor, shared across modes.
    const Vec xdiff = xt - (model.emission_matrix * zt + model.emission_bias);
    const Vec xwhite = xdiff.cwiseQuotient(r_diag);
    grads.emission_bias += wsum * xwhite;
    grads.emission_matrix += wsum * xwhite * zt.transpose();
    grads.emission_logvar +=
        wsum * 0.5 * (xdiff.cwiseAbs2().cwiseQuotient(r_diag) - Vec::Ones(model.obs_dim));
    z_grad.row(t) += wsum * (model.emission_matrix.transpose() * xwhite).transpose();

    if (t == 0) {
      for (int k = 0; k < model.num_modes; ++k) {
        const double w = weights(0, k);
        const Vec zdiff = zt - model.init_mean[k];
        const Vec zwhite = zdiff.cwiseQuotient(p0_diag);
        grads.init_mean[k] += w * zwhite;
        grads.init_logvar +=
            w * 0.5 * (zdiff.cwiseAbs2().cwiseQuotient(p0_diag) - Vec::Ones(model.state_dim));
        z_grad.row(0) -= w * zwhite.transpose();
      }
    } else {
      const Vec zprev = z.row(t - 1).transpose();
      for (int k = 0; k < model.num_modes; ++k) {
        const double w = weights(t, k);
        const Vec zdiff = zt - (model.dynamics_matrix[k] * zprev + model.dynamics_bias[k]);
        const Vec zwhite = zdiff.cwiseQuotient(q_diag);
        grads.dynamics_bias[k] += w * zwhite;
        grads.dynamics_matrix[k] += w * zwhite * zprev.transpose();
        grads.dynamics_logvar +=
            w * 0.5 * (zdiff.cwiseAbs2().cwiseQuotient(q_diag) - Vec::Ones(model.state_dim));
        z_grad.row(t) -= w * zwhite.transpose();
        z_grad.row(t - 1) += w * (model.dynamics_matrix[k].transpose() * zwhite).transpose();
      }
    }
  }
}

/// Transition-logit gradients from an adjoint on log P_t(j, k):
/// d logits_t(j, m) = adj(j, m) - rowsum_k adj(j, k) * p(j, m).
inline void accumulate_transition_gradients(const SnldsModel& model, const Mat& x,
                                            const std::vector<Mat>& trans,
                                            const std::vector<Mat>& adjoints,
                                            SnldsGradients& grads) {
  for (std::size_t i = 0; i < adjoints.size(); ++i) {
    const Vec xt = x.row(static_cast<Eigen::Index>(i)).transpose();
    for (int j = 0; j < model.num_modes; ++j) {
      const double row_total = adjoints[i].row(j).sum();
      const Vec dlogits =
          adjoints[i].row(j).transpose() - row_total * trans[i].row(j).transpose();
      grads.trans_bias[j] += dlogits;
      grads.trans_weight[j] += dlogits * xt.transpose();
    }
  }
}

struct CeAdjoints {
  Mat evidence;             // T x K, dCE/dlogE
  std::vector<Mat> trans;   // T-1 of K x K, dCE/dlogP
  Vec pi;                   // K, dCE/dlogpi
};

/// Reverse-mode differentiation of the cross-entropy regularizer through the
/// log-space forward-backward recursions.
inline CeAdjoints ce_adjoints(const Vec& init_probs, const std::vector<Mat>& trans,
                              const Mat& log_evidence) {
  const auto steps = log_evidence.rows();
  const auto num_modes = log_evidence.cols();
  const double uniform = 1.0 / static_cast<double>(num_modes);

  Mat log_trans_all(num_modes * std::max<Eigen::Index>(steps - 1, 0), num_modes);
  for (Eigen::Index t = 0; t + 1 < steps; ++t) {
    log_trans_all.middleRows(t * num_modes, num_modes) = trans[t].array().log().matrix();
  }
  auto log_trans = [&](Eigen::Index t) { return log_trans_all.middleRows(t * num_modes, num_modes); };

  Mat la(steps, num_modes), lb(steps, num_modes);
  la.row(0) = init_probs.array().log().matrix().transpose() + log_evidence.row(0);
  for (Eigen::Index t = 1; t < steps; ++t) {
    for (Eigen::Index k = 0; k < num_modes; ++k) {
      const Vec terms = la.row(t - 1).transpose() + log_trans(t - 1).col(k);
      la(t, k) = log_sum_exp(terms) + log_evidence(t, k);
    }
  }
  lb.row(steps - 1).setZero();
  for (Eigen::Index t = steps - 2; t >= 0; --t) {
    for (Eigen::Index j = 0; j < num_modes; ++j) {
      const Vec terms =
          log_trans(t).row(j).transpose() + log_evidence.row(t + 1).transpose() + lb.row(t + 1).transpose();
      lb(t, j) = log_sum_exp(terms);
    }
  }

  // gamma_t = softmax(la_t + lb_t); CE = sum_t sum_k u (log u - loggamma).
  // Adjoints on la and lb rows (identical expressions).
  Mat adj_la = Mat::Zero(steps, num_modes);
  Mat adj_lb = Mat::Zero(steps, num_modes);
  for (Eigen::Index t = 0; t < steps; ++t) {
    Vec combined = (la.row(t) + lb.row(t)).transpose();
    const double norm = log_sum_exp(combined);
    Vec gamma = (combined.array() - norm).exp();
    Vec g(num_modes);
    for (Eigen::Index k = 0; k < num_modes; ++k) {
      const double log_gamma = combined(k) - norm;
      g(k) = log_gamma > std::log(kGammaFloor) ? -uniform : 0.0;
    }
    const Vec row_adj = g - g.sum() * gamma;
    adj_la.row(t) += row_adj.transpose();
    adj_lb.row(t) += row_adj.transpose();
  }

  CeAdjoints out;
  out.evidence = Mat::Zero(steps, num_modes);
  out.trans.assign(steps > 0 ? steps - 1 : 0, Mat::Zero(num_modes, num_modes));
  out.pi = Vec::Zero(num_modes);

  // Reverse of the forward recursion: descending t.
  for (Eigen::Index t = steps - 1; t >= 1; --t) {
    out.evidence.row(t) += adj_la.row(t);
    for (Eigen::Index k = 0; k < num_modes; ++k) {
      const double a = adj_la(t, k);
      if (a == 0.0) continue;
      Vec terms = la.row(t - 1).transpose() + log_trans(t - 1).col(k);
      const double norm = log_sum_exp(terms);
      const Vec w = (terms.array() - norm).exp();
      adj_la.row(t - 1) += a * w.transpose();
      out.trans[t - 1].col(k) += a * w;
    }
  }
  out.evidence.row(0) += adj_la.row(0);
  out.pi += adj_la.row(0).transpose();

  // Reverse of the backward recursion: ascending t.
  for (Eigen::Index t = 0; t + 1 < steps; ++t) {
    for (Eigen::Index j = 0; j < num_modes; ++j) {
      const double a = adj_lb(t, j);
      if (a == 0.0) continue;
      Vec terms =
          log_trans(t).row(j).transpose() + log_evidence.row(t + 1).transpose() + lb.row(t + 1).transpose();
      const double norm = log_sum_exp(terms);
      const Vec w = (terms.array() - norm).exp();
      out.trans[t].row(j) += a * w.transpose();
      out.evidence.row(t + 1) += a * w.transpose();
      adj_lb.row(t + 1) += a * w.transpose();
    }
  }
  return out;
}

} // namespace detail

/// Analytic gradient of ELBO - eta * CE for the linear-Gaussian family with
/// diagonal covariances. theta-gradients follow the smoothed-marginal
/// weighting of the per-factor score terms; phi-gradients flow through the
/// reparameterized samples and the closed-form entropy. Deterministic given
/// the seed.
inline SnldsGradients elbo_gradient(const SnldsModel& model, const VariationalPosterior& posterior,
                                    const Mat& x, std::uint64_t seed, int num_samples = 1,
                                    double eta = 0.0, LossReport* report_out = nullptr) {
  if (!model.linear_gaussian())
    throw std::invalid_argument(
        "elbo_gradient: nonlinear emission/dynamics maps are unsupported for analytic gradients "
        "(finite-difference fallback available)");
  detail::require_diagonal(model.emission_cov, "emission");
  detail::require_diagonal(model.dynamics_cov, "dynamics");
  detail::require_diagonal(model.init_cov, "initial");
  if (num_samples < 1) throw std::invalid_argument("elbo_gradient: need at least one sample");

  const auto steps = x.rows();
  const std::vector<Mat> trans = detail::transition_stack(model, x);
  const Vec init = model.initial_distribution();

  SnldsGradients grads = SnldsGradients::zeros(model, posterior);
  LossReport report;
  report.eta = eta;

  Mat mean_grad_total = Mat::Zero(steps, posterior.latent_dim);
  Mat logvar_grad_total = Mat::Zero(steps, posterior.latent_dim);
  EncodeResult first_enc;

  for (int s = 0; s < num_samples; ++s) {
    const EncodeResult enc = encode(posterior, x, mix_seed(seed, static_cast<std::uint64_t>(s)));
    if (s == 0) first_enc = enc;
    const Mat log_e = local_evidence(model, x, enc.z);
    const PosteriorMarginals marginals = forward_backward(init, trans, log_e);
    report.likelihood_term += marginals.loglik;
    report.ce_term += ce_regularizer(marginals.gamma);

    // Evidence weights and transition adjoints for the likelihood part.
    Mat evidence_weights = marginals.gamma;
    std::vector<Mat> trans_adjoints = marginals.xi;
    Vec pi_adjoint = marginals.gamma.row(0).transpose();

    if (eta != 0.0) {
      const detail::CeAdjoints ce = detail::ce_adjoints(init, trans, log_e);
      evidence_weights -= eta * ce.evidence;
      for (std::size_t i = 0; i < trans_adjoints.size(); ++i) trans_adjoints[i] -= eta * ce.trans[i];
      pi_adjoint -= eta * ce.pi;
    }

    Mat z_grad = Mat::Zero(steps, model.state_dim);
    detail::accumulate_evidence_gradients(model, x, enc.z, evidence_weights, grads, z_grad);
    detail::accumulate_transition_gradients(model, x, trans, trans_adjoints, grads);
    grads.pi_logits += pi_adjoint - pi_adjoint.sum() * init;

    // Reparameterization: z = mean + exp(logvar/2) eps.
    mean_grad_total += z_grad;
    logvar_grad_total += (z_grad.array() * (enc.z - enc.mean).array() * 0.5).matrix();
  }

  const double inv = 1.0 / static_cast<double>(num_samples);
  grads.scale(inv);
  mean_grad_total *= inv;
  logvar_grad_total *= inv;
  report.likelihood_term *= inv;
  report.ce_term *= inv;
  report.entropy_term = posterior_entropy(first_enc.logvar);
  report.elbo = report.likelihood_term + report.entropy_term;
  report.total = report.elbo - eta * report.ce_term;

  // Entropy contributes 0.5 per unclamped logvar coordinate.
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (int i = 0; i < posterior.latent_dim; ++i) {
      if (std::abs(first_enc.logvar(t, i)) < kLogvarClamp) logvar_grad_total(t, i) += 0.5;
    }
  }

  // Backprop through the encoder heads and the two recurrences. The clamp on
  // logvar zeroes the gradient where it is active.
  Mat head_grad_hz = Mat::Zero(steps, posterior.z_state_dim);
  for (Eigen::Index t = 0; t < steps; ++t) {
    const Vec gm = mean_grad_total.row(t).transpose();
    Vec gv = logvar_grad_total.row(t).transpose();
    for (int i = 0; i < posterior.latent_dim; ++i) {
      if (std::abs(first_enc.logvar(t, i)) >= kLogvarClamp) gv(i) = 0.0;
    }
    const Vec hz_act = first_enc.hz_act.row(t).transpose();
    grads.head_mean_w += gm * hz_act.transpose();
    grads.head_mean_b += gm;
    grads.head_logvar_w += gv * hz_act.transpose();
    grads.head_logvar_b += gv;
    Vec ghz = posterior.head_mean_w.transpose() * gm + posterior.head_logvar_w.transpose() * gv;
    if (posterior.tanh_on_hz) {
      const Vec hz_raw = first_enc.hz.row(t).transpose();
      ghz = ghz.cwiseProduct((1.0 - hz_raw.array().tanh().square()).matrix());
    }
    head_grad_hz.row(t) = ghz.transpose();
  }

  Mat hx_grad = Mat::Zero(steps, posterior.x_state_dim);
  Vec carry_z = Vec::Zero(posterior.z_state_dim);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const Vec total = head_grad_hz.row(t).transpose() + carry_z;
    const Vec hz_prev = t > 0 ? Vec(first_enc.hz.row(t - 1).transpose())
                              : Vec(Vec::Zero(posterior.z_state_dim));
    grads.a_z += total * hz_prev.transpose();
    grads.b_z += total * first_enc.hx.row(t);
    hx_grad.row(t) += (posterior.b_z.transpose() * total).transpose();
    carry_z = posterior.a_z.transpose() * total;
  }

  Vec carry_x = Vec::Zero(posterior.x_state_dim);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const Vec hx = first_enc.hx.row(t).transpose();
    const Vec pre_tanh_grad =
        hx_grad.row(t).transpose().cwiseProduct((1.0 - hx.array().square()).matrix());
    const Vec g_state = first_enc.x_state.row(t).transpose();
    grads.c_x += pre_tanh_grad * g_state.transpose();
    const Vec total = posterior.c_x.transpose() * pre_tanh_grad + carry_x;
    const Vec g_prev = t > 0 ? Vec(first_enc.x_state.row(t - 1).transpose())
                             : Vec(Vec::Zero(posterior.x_state_dim));
    grads.a_x += total * g_prev.transpose();
    grads.b_x += total * x.row(t);
    carry_x = posterior.a_x.transpose() * total;
  }

  if (report_out != nullptr) *report_out = report;
  return grads;
}

/// Central finite differences of the total loss over the flattened parameter
/// vector; works for any model the elbo() path supports (including fixed
/// nonlinear maps, whose closures are treated as constants).
inline Vec finite_difference_gradient(const SnldsModel& model, const VariationalPosterior& posterior,
                                      const Mat& x, std::uint64_t seed, int num_samples = 1,
                                      double eta = 0.0, double step = 1e-5) {
  const Vec base = flatten_parameters(model, posterior);
  Vec grad(base.size());
  SnldsModel m = model;
  VariationalPosterior q = posterior;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    Vec up = base, down = base;
    up(i) += step;
    down(i) -= step;
    apply_parameters(m, q, up);
    const double hi = elbo(m, q, x, num_samples, seed, eta).total;
    apply_parameters(m, q, down);
    const double lo = elbo(m, q, x, num_samples, seed, eta).total;
    grad(i) = (hi - lo) / (2.0 * step);
  }
  return grad;
}

struct FitConfig {
  double learning_rate = 1e-3;
  int epochs = 50;
  double eta0 = 100.0;      // regularizer weight, annealed linearly to zero
  int num_samples = 1;
  std::uint64_t seed = 0;
  double clip_norm = 10.0;  // global gradient-norm clip; <= 0 disables
};

struct FitResult {
  SnldsModel model;
  VariationalPosterior posterior;
  std::vector<double> loss_trace; // mean total loss per epoch
  bool aborted = false;           // non-finite loss encountered
};

/// eta anneals linearly from eta0 to zero over the first half of training.
inline double eta_schedule(double eta0, int epoch, int epochs) {
  const double half = 0.5 * epochs;
  if (epoch >= half || half <= 0.0) return 0.0;
  return eta0 * (1.0 - static_cast<double>(epoch) / half);
}

/// Deterministic gradient ascent on ELBO - eta * CE over a fixed-order
/// traversal of the trajectories, one update per trajectory.
inline FitResult fit(const SnldsModel& model, const VariationalPosterior& posterior,
                     const std::vector<Mat>& trajectories, const FitConfig& config) {
  if (trajectories.empty()) throw std::invalid_argument("fit: no trajectories");
  FitResult result;
  result.model = model;
  result.posterior = posterior;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double eta = eta_schedule(config.eta0, epoch, config.epochs);
    const Vec before = flatten_parameters(result.model, result.posterior);
    double epoch_loss = 0.0;
    bool finite = true;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
      LossReport report;
      const std::uint64_t traj_seed =
          mix_seed(config.seed, static_cast<std::uint64_t>(epoch) * 1000003ULL + i);
      const SnldsGradients grads = elbo_gradient(result.model, result.posterior, trajectories[i],
                                                 traj_seed, config.num_samples, eta, &report);
      epoch_loss += report.total;
      if (!std::isfinite(report.total)) {
        finite = false;
        break;
      }
      Vec g = flatten_gradients(grads);
      if (config.clip_norm > 0.0) {
        const double norm = g.norm();
        if (norm > config.clip_norm) g *= config.clip_norm / norm;
      }
      Vec params = flatten_parameters(result.model, result.posterior);
      params += config.learning_rate * g;
      apply_parameters(result.model, result.posterior, params);
    }
    if (!finite) {
      apply_parameters(result.model, result.posterior, before);
      result.aborted = true;
      break;
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(trajectories.size()));
  }
  return result;
}

struct SegmentationResult {
  std::vector<int> labels;
  Mat gamma;
  double loglik = 0.0;
};

/// Posterior mode labels: encode, run the forward-backward smoother, take the
/// argmax of gamma per step (ties to the lowest mode index).
inline SegmentationResult segment(const SnldsModel& model, const VariationalPosterior& posterior,
                                  const Mat& x, std::uint64_t seed) {
  const EncodeResult enc = encode(posterior, x, seed);
  const Mat log_e = local_evidence(model, x, enc.z);
  const PosteriorMarginals marginals =
      forward_backward(model.initial_distribution(), detail::transition_stack(model, x), log_e);
  SegmentationResult out;
  out.gamma = marginals.gamma;
  out.loglik = marginals.loglik;
  out.labels.resize(x.rows());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    int best = 0;
    for (int k = 1; k < model.num_modes; ++k) {
      if (marginals.gamma(t, k) > marginals.gamma(t, best)) best = k;
    }
    out.labels[static_cast<std::size_t>(t)] = best;
  }
  return out;
}

struct Trajectory {
  Mat x; // T x D
  Mat z; // T x Lz
  std::vector<int> s;
};

/// Ancestral sampling of (s, z, x).
inline Trajectory generate(const SnldsModel& model, int steps, std::uint64_t seed) {
  if (steps < 1) throw std::invalid_argument("generate: need at least one step");
  Rng rng(seed);
  const detail::GaussianDensity emission(model.emission_cov);
  const detail::GaussianDensity dynamics(model.dynamics_cov);
  const detail::GaussianDensity initial(model.init_cov);

  Trajectory out;
  out.x = Mat(steps, model.obs_dim);
  out.z = Mat(steps, model.state_dim);
  out.s.resize(steps);

  int mode = rng.categorical(model.initial_distribution());
  Vec z = initial.sample(model.init_mean[mode], rng);
  Vec x = emission.sample(model.emission_mean(z), rng);
  out.s[0] = mode;
  out.z.row(0) = z.transpose();
  out.x.row(0) = x.transpose();
  for (int t = 1; t < steps; ++t) {
    const Mat trans = mode_transition_matrix(model, x);
    mode = rng.categorical(trans.row(mode).transpose());
    z = dynamics.sample(model.dynamics_mean(z, mode), rng);
    x = emission.sample(model.emission_mean(z), rng);
    out.s[t] = mode;
    out.z.row(t) = z.transpose();
    out.x.row(t) = x.transpose();
  }
  return out;
}

/// Frame accuracy maximized over all label permutations (num_modes <= 8).
inline double permutation_accuracy(const std::vector<int>& predicted,
                                   const std::vector<int>& truth, int num_modes) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("permutation_accuracy: length mismatch");
  if (num_modes < 1 || num_modes > 8)
    throw std::invalid_argument("permutation_accuracy: exhaustive search supports 1..8 modes");
  std::vector<int> perm(num_modes);
  for (int i = 0; i < num_modes; ++i) perm[i] = i;
  double best = 0.0;
  do {
    std::size_t hits = 0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      const int p = predicted[t];
      if (p >= 0 && p < num_modes && perm[static_cast<std::size_t>(p)] == truth[t]) ++hits;
    }
    best = std::max(best, static_cast<double>(hits) / static_cast<double>(truth.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

} // namespace switchts::snlds
