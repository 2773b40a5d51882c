#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "switchts/types.hpp"

namespace switchts::changefinder {

/// Sequentially discounting AR estimation settings.
struct SdarConfig {
  int order = 2;               // AR order k
  double discount = 0.02;      // r in (0,1)
  double variance_floor = 1e-6;

  void validate() const {
    if (order < 1) throw std::invalid_argument("SdarConfig: order must be >= 1");
    if (!(discount > 0.0 && discount < 1.0))
      throw std::invalid_argument("SdarConfig: discount must lie in (0,1)");
    if (!(variance_floor > 0.0))
      throw std::invalid_argument("SdarConfig: variance floor must be positive");
  }
};

/// Online AR state with exponentially discounted moment statistics. The
/// discounted ML objective is maximized by re-solving the Yule-Walker system
/// from the discounted lag autocovariances at every step. Dimensions beyond
/// one are handled as independent scalar channels (diagonal noise covariance).
struct SdarState {
  int dim = 0;
  int order = 0;
  Vec mean;                 // running discounted mean, one per channel
  Mat autocov;              // (order+1) x dim discounted lag autocovariances
  Mat ar_coeffs;            // order x dim, solved each step
  Vec noise_var;            // discounted residual variance per channel
  std::deque<Vec> history;  // most recent observation first
  long steps_seen = 0;

  static SdarState init(int dim, const SdarConfig& config) {
    config.validate();
    SdarState s;
    s.dim = dim;
    s.order = config.order;
    s.mean = Vec::Zero(dim);
    s.autocov = Mat::Zero(config.order + 1, dim);
    s.autocov.row(0).setOnes(); // prior variance 1
    s.ar_coeffs = Mat::Zero(config.order, dim);
    s.noise_var = Vec::Ones(dim);
    return s;
  }

  /// One-step-ahead predictive mean under the current (pre-update) model.
  Vec predict() const {
    Vec w = mean;
    for (int lag = 1; lag <= order && lag <= static_cast<int>(history.size()); ++lag) {
      const Vec& past = history[lag - 1];
      w += ar_coeffs.row(lag - 1).transpose().cwiseProduct(past - mean);
    }
    return w;
  }
};

namespace detail {

inline double gaussian_log_pdf(double x, double mean, double var) {
  const double diff = x - mean;
  return -0.5 * (std::log(2.0 * M_PI * var) + diff * diff / var);
}

/// Solves the per-channel Yule-Walker system from the discounted lag
/// autocovariances, with a small ridge for conditioning.
inline void solve_yule_walker(SdarState& state) {
  const int k = state.order;
  for (int ch = 0; ch < state.dim; ++ch) {
    Mat toeplitz(k, k);
    Vec rhs(k);
    for (int i = 0; i < k; ++i) {
      rhs(i) = state.autocov(i + 1, ch);
      for (int j = 0; j < k; ++j) toeplitz(i, j) = state.autocov(std::abs(i - j), ch);
    }
    toeplitz.diagonal().array() += 1e-8;
    state.ar_coeffs.col(ch) = toeplitz.ldlt().solve(rhs);
  }
}

} // namespace detail

/// Scores x_t under the pre-update model (the prior N(0, I) during the first
/// `order` steps), then folds x_t into the discounted statistics:
/// mean, lag autocovariances, AR coefficients, residual variance.
inline double sdar_step(SdarState& state, const Vec& x, const SdarConfig& config) {
  if (x.size() != state.dim) throw std::invalid_argument("sdar_step: dimension mismatch");
  if (!x.allFinite()) throw std::invalid_argument("sdar_step: non-finite observation");
  const double r = config.discount;

  const bool warmed_up = static_cast<int>(state.history.size()) >= state.order;
  Vec predicted;
  double log_density = 0.0;
  if (warmed_up) {
    predicted = state.predict();
    for (int ch = 0; ch < state.dim; ++ch) {
      const double var = std::max(state.noise_var(ch), config.variance_floor);
      log_density += detail::gaussian_log_pdf(x(ch), predicted(ch), var);
    }
  } else {
    for (int ch = 0; ch < state.dim; ++ch) {
      log_density += detail::gaussian_log_pdf(x(ch), 0.0, 1.0);
    }
  }

  state.mean = (1.0 - r) * state.mean + r * x;
  const Vec centered = x - state.mean;
  for (int lag = 0; lag <= state.order; ++lag) {
    if (lag > static_cast<int>(state.history.size())) break;
    const Vec past_centered = lag == 0 ? centered : Vec(state.history[lag - 1] - state.mean);
    state.autocov.row(lag) =
        (1.0 - r) * state.autocov.row(lag) + r * centered.cwiseProduct(past_centered).transpose();
  }
  detail::solve_yule_walker(state);

  const Vec residual = warmed_up ? Vec(x - predicted) : centered;
  state.noise_var = (1.0 - r) * state.noise_var + r * residual.cwiseAbs2();

  state.history.push_front(x);
  if (static_cast<int>(state.history.size()) > state.order) state.history.pop_back();
  ++state.steps_seen;
  return log_density;
}

/// Score(x_t) = -log p_{t-1}(x_t | x^{t-1}) for every step of the series.
inline Vec outlier_scores(const Mat& series, const SdarConfig& config) {
  if (series.rows() < 1) throw std::invalid_argument("outlier_scores: empty series");
  SdarState state = SdarState::init(static_cast<int>(series.cols()), config);
  Vec scores(series.rows());
  for (Eigen::Index t = 0; t < series.rows(); ++t) {
    scores(t) = -sdar_step(state, series.row(t).transpose(), config);
  }
  return scores;
}

/// Trailing mean over a window of T scores; for t < T the average runs over
/// the available prefix.
inline Vec smooth(const Vec& scores, int window) {
  if (window < 1) throw std::invalid_argument("smooth: window must be >= 1");
  Vec out(scores.size());
  double running = 0.0;
  for (Eigen::Index t = 0; t < scores.size(); ++t) {
    running += scores(t);
    if (t >= window) running -= scores(t - window);
    const double denom = std::min<Eigen::Index>(t + 1, window);
    out(t) = running / static_cast<double>(denom);
  }
  return out;
}

/// The three score streams of the two-stage detector.
struct ScoreSeries {
  Vec outlier;  // stage-1 Score(x_t)
  Vec smoothed; // y_t
  Vec change;   // Score(t)
  int window = 0;
};

/// Stage 1 scores the raw series, the smoothed scores y_t feed a second SDAR,
/// and its smoothed scores are the change scores.
inline ScoreSeries change_scores(const Mat& series, const SdarConfig& stage1,
                                 const SdarConfig& stage2, int window) {
  ScoreSeries out;
  out.window = window;
  out.outlier = outlier_scores(series, stage1);
  out.smoothed = smooth(out.outlier, window);
  const Mat smoothed_as_series = out.smoothed;
  out.change = smooth(outlier_scores(smoothed_as_series, stage2), window);
  return out;
}

/// Threshold rule for turning change scores into discrete change points.
struct ThresholdPolicy {
  enum class Kind { MeanStd, Quantile, Fixed };
  Kind kind = Kind::MeanStd;
  double kappa = 8.0;   // MeanStd: mean + kappa * std over the series
  double quantile = 0.99;
  double fixed_value = 0.0;
  // Candidates inside the estimator warm-up are skipped; negative means
  // "auto": 2/discount of stage 2 plus four smoothing windows.
  int ignore_prefix = -1;

  double threshold(const Vec& change) const {
    if (kind == Kind::Fixed) return fixed_value;
    if (kind == Kind::Quantile) {
      std::vector<double> sorted(change.data(), change.data() + change.size());
      std::sort(sorted.begin(), sorted.end());
      const double pos = quantile * static_cast<double>(sorted.size() - 1);
      const auto lo = static_cast<std::size_t>(pos);
      const auto hi = std::min(lo + 1, sorted.size() - 1);
      return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    }
    const double mean = change.mean();
    const double var = (change.array() - mean).square().mean();
    return mean + kappa * std::sqrt(var);
  }
};

inline int resolve_ignore_prefix(const ThresholdPolicy& policy, int window, double stage2_discount) {
  if (policy.ignore_prefix >= 0) return policy.ignore_prefix;
  return static_cast<int>(2.0 / stage2_discount) + 4 * window;
}

/// Local maxima of the change score above the policy threshold, picked
/// greedily in descending score order with a minimum separation; indices are
/// returned ascending.
inline std::vector<int> extract_change_points(const ScoreSeries& scores,
                                              const ThresholdPolicy& policy, int min_separation,
                                              int ignore_prefix = -1) {
  if (min_separation < 1) throw std::invalid_argument("extract_change_points: separation must be >= 1");
  const Vec& change = scores.change;
  const Eigen::Index len = change.size();
  if (len == 0) return {};
  const double cut = policy.threshold(change);
  const int skip = ignore_prefix >= 0 ? ignore_prefix : std::max(0, policy.ignore_prefix);

  std::vector<int> candidates;
  for (Eigen::Index t = std::max<Eigen::Index>(1, skip); t + 1 < len; ++t) {
    if (change(t) <= cut) continue;
    if (change(t) >= change(t - 1) && change(t) > change(t + 1)) {
      candidates.push_back(static_cast<int>(t));
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](int a, int b) { return change(a) > change(b); });
  std::vector<int> accepted;
  for (int cand : candidates) {
    bool clashes = false;
    for (int got : accepted) {
      if (std::abs(got - cand) < min_separation) {
        clashes = true;
        break;
      }
    }
    if (!clashes) accepted.push_back(cand);
  }
  std::sort(accepted.begin(), accepted.end());
  return accepted;
}

/// Bundled detector configuration with the library defaults.
struct DetectorConfig {
  SdarConfig stage1{};
  SdarConfig stage2{};
  int window = 25;
  int min_separation = 50;
  ThresholdPolicy policy{};
};

struct DetectionResult {
  ScoreSeries scores;
  std::vector<int> change_points;
};

inline DetectionResult detect(const Mat& series, const DetectorConfig& config) {
  DetectionResult out;
  out.scores = change_scores(series, config.stage1, config.stage2, config.window);
  const int skip = resolve_ignore_prefix(config.policy, config.window, config.stage2.discount);
  out.change_points =
      extract_change_points(out.scores, config.policy, config.min_separation, skip);
  return out;
}

} // namespace switchts::changefinder
