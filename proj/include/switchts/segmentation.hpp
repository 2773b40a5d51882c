#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "switchts/changefinder.hpp"
#include "switchts/fftconv.hpp"
#include "switchts/ssm.hpp"
#include "switchts/types.hpp"

namespace switchts::segmentation {

/// Half-open slice [start, end) of the input series.
struct Segment {
  int start = 0;
  int end = 0;
  Vec values;
};

struct SegmentFeatures {
  double mean = 0.0;
  double std = 0.0; // population convention
};

/// Concatenation of same-group segments with linear-interpolation bridges.
struct MergedDataset {
  Vec values;
  std::vector<int> source_segments;            // segment ids, in original order
  std::vector<std::pair<int, int>> bridge_spans; // [start, end) in merged indices
};

inline std::vector<Segment> split_at_change_points(const Vec& series,
                                                   const std::vector<int>& change_points) {
  const int len = static_cast<int>(series.size());
  int prev = 0;
  for (int cp : change_points) {
    if (cp <= 0 || cp >= len) throw std::invalid_argument("split: change point out of range");
    if (cp <= prev) throw std::invalid_argument("split: change points must be strictly ascending");
    prev = cp;
  }
  std::vector<Segment> out;
  int start = 0;
  for (int cp : change_points) {
    out.push_back({start, cp, series.segment(start, cp - start)});
    start = cp;
  }
  out.push_back({start, len, series.segment(start, len - start)});
  return out;
}

inline SegmentFeatures segment_features(const Segment& seg) {
  if (seg.values.size() == 0) throw std::invalid_argument("segment_features: empty segment");
  SegmentFeatures f;
  f.mean = seg.values.mean();
  f.std = std::sqrt((seg.values.array() - f.mean).square().mean());
  return f;
}

/// Greedy single-pass grouping: a segment joins the first group whose
/// representative (running mean of member features) is close in mean relative
/// to the pooled spread and similar in spread ratio; otherwise it opens a new
/// group. Returns the group id per segment.
inline std::vector<int> group_segments(const std::vector<SegmentFeatures>& features,
                                       double mean_tol, double std_ratio) {
  if (!(mean_tol > 0.0) || !(std_ratio >= 1.0))
    throw std::invalid_argument("group_segments: need mean_tol > 0 and std_ratio >= 1");
  constexpr double kEps = 1e-9;
  std::vector<int> assignment(features.size(), -1);
  std::vector<SegmentFeatures> reps;
  std::vector<int> counts;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    for (std::size_t g = 0; g < reps.size(); ++g) {
      const double pooled = std::sqrt(0.5 * (f.std * f.std + reps[g].std * reps[g].std));
      const bool mean_ok = std::abs(f.mean - reps[g].mean) <= mean_tol * std::max(pooled, kEps);
      const double hi = std::max(f.std, reps[g].std);
      const double lo = std::max(std::min(f.std, reps[g].std), kEps);
      if (mean_ok && hi / lo <= std_ratio) {
        assignment[i] = static_cast<int>(g);
        const double n = static_cast<double>(counts[g]);
        reps[g].mean = (reps[g].mean * n + f.mean) / (n + 1.0);
        reps[g].std = (reps[g].std * n + f.std) / (n + 1.0);
        ++counts[g];
        break;
      }
    }
    if (assignment[i] < 0) {
      assignment[i] = static_cast<int>(reps.size());
      reps.push_back(f);
      counts.push_back(1);
    }
  }
  return assignment;
}

/// Concatenates segments in order with `gap` interpolated points between
/// consecutive segments; bridge values are linearly spaced strictly between
/// the adjoining boundary values.
inline MergedDataset merge_group(const std::vector<Segment>& segments,
                                 const std::vector<int>& segment_ids, int gap) {
  if (gap < 0) throw std::invalid_argument("merge_group: gap must be nonnegative");
  if (segments.empty()) throw std::invalid_argument("merge_group: no segments");
  MergedDataset out;
  out.source_segments = segment_ids;
  Eigen::Index total = 0;
  for (const auto& s : segments) total += s.values.size();
  total += static_cast<Eigen::Index>(gap) * (static_cast<Eigen::Index>(segments.size()) - 1);
  out.values = Vec(total);
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i > 0 && gap > 0) {
      const double left = segments[i - 1].values(segments[i - 1].values.size() - 1);
      const double right = segments[i].values(0);
      out.bridge_spans.emplace_back(static_cast<int>(pos), static_cast<int>(pos + gap));
      for (int j = 1; j <= gap; ++j) {
        out.values(pos++) = left + (right - left) * static_cast<double>(j) / (gap + 1.0);
      }
    }
    out.values.segment(pos, segments[i].values.size()) = segments[i].values;
    pos += segments[i].values.size();
  }
  return out;
}

/// Picks the group whose (mean, std) is closest (Euclidean) to the tail
/// window's (mean, std); ties go to the lowest group id.
inline int match_group_to_recent(const std::vector<MergedDataset>& groups, const Vec& series,
                                 int tail_window) {
  if (groups.empty()) throw std::invalid_argument("match_group_to_recent: no groups");
  if (tail_window < 1 || tail_window > series.size())
    throw std::invalid_argument("match_group_to_recent: bad tail window");
  const Vec tail = series.tail(tail_window);
  const double tmean = tail.mean();
  const double tstd = std::sqrt((tail.array() - tmean).square().mean());
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const Vec& v = groups[g].values;
    const double gmean = v.mean();
    const double gstd = std::sqrt((v.array() - gmean).square().mean());
    const double dist = std::hypot(gmean - tmean, gstd - tstd);
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<int>(g);
    }
  }
  return best;
}

/// Frozen-core readout configuration. Channels are S4D-Inv systems of size
/// `state_dim`, zoh-discretized at log-spaced steps starting from `delta`
/// (two decades across the channel bank).
struct ReadoutConfig {
  int depth = 2;
  int feature_dim = 2; // H channels per layer
  int state_dim = 4;   // N
  double delta = 0.01;
  double ridge = 1e-6;
  bool include_input_column = true;
  bool exclude_bridges = false;
  // Masked-training rows: when mask_len > 0, extra least-squares rows come
  // from forward passes whose input is zeroed over a trailing window (the
  // P x 1 + F x 0 scheme), tiled at `mask_tiles` offsets. This teaches the
  // readout to predict through the mask it will see at forecast time.
  int mask_len = 0;
  int mask_tiles = 4;
};

/// Linear readout over frozen S4D state features: A_bar, B_bar come from
/// s4d_inv_init + zoh and are never touched by fitting; the learned part is
/// the complex output map per channel plus the feedthrough and bias.
struct ReadoutModel {
  std::vector<DiscretizedSSM> ssm_stack; // one entry per layer-channel
  Vec weights;  // [2N real coords per channel ..., input column, bias]
  int depth = 0;
  int feature_dim = 0;
  int state_dim = 0;
  bool include_input_column = true;
  double standardize_mean = 0.0;
  double standardize_std = 1.0;
  double train_mse = 0.0; // in original (de-standardized) units

  int channels() const { return depth * feature_dim; }
  int feature_columns() const { return channels() * 2 * state_dim + (include_input_column ? 1 : 0) + 1; }

  /// Learned complex output map of one channel: C_n = w_re - i * w_im.
  CVec channel_c(int channel) const {
    CVec c(state_dim);
    const int base = channel * 2 * state_dim;
    for (int n = 0; n < state_dim; ++n) {
      c(n) = Complex(weights(base + n), -weights(base + state_dim + n));
    }
    return c;
  }

  double feedthrough() const {
    return include_input_column ? weights(weights.size() - 2) : 0.0;
  }
};

namespace detail {

inline std::vector<DiscretizedSSM> build_stack(const ReadoutConfig& config) {
  const int m = config.depth * config.feature_dim;
  if (m < 1 || config.state_dim < 1)
    throw std::invalid_argument("readout: depth, feature_dim, state_dim must be positive");
  const CVec lambda = s4d_inv_init(config.state_dim);
  std::vector<DiscretizedSSM> stack;
  stack.reserve(m);
  for (int j = 0; j < m; ++j) {
    const double expo = m > 1 ? static_cast<double>(j) / (m - 1) : 0.0;
    const double delta_j = config.delta * std::pow(100.0, expo);
    const auto cont = ContinuousSSM::diagonal(lambda, CVec::Ones(config.state_dim),
                                              CVec::Ones(config.state_dim), 0.0);
    stack.push_back(discretize(cont, delta_j, Discretization::Zoh));
  }
  return stack;
}

/// State features of every channel over u, computed with the FFT convolution:
/// column block per channel holds Re then Im of the N state trajectories.
inline Mat state_features(const std::vector<DiscretizedSSM>& stack, const Vec& u,
                          const ReadoutConfig& config) {
  const Eigen::Index len = u.size();
  const int n = config.state_dim;
  Mat phi(len, static_cast<Eigen::Index>(stack.size()) * 2 * n + (config.include_input_column ? 1 : 0) + 1);
  Eigen::Index col = 0;
  for (const auto& dssm : stack) {
    for (int s = 0; s < n; ++s) {
      // State impulse response of coordinate s: B_bar_s * A_bar_s^l.
      CVec kernel(len);
      Complex power = dssm.b(s);
      for (Eigen::Index l = 0; l < len; ++l) {
        kernel(l) = power;
        power *= dssm.a_diag(s);
      }
      const CVec traj = fft_convolve_complex(kernel, u);
      phi.col(col + s) = traj.real();
      phi.col(col + n + s) = traj.imag();
    }
    col += 2 * n;
  }
  if (config.include_input_column) phi.col(col++) = u;
  phi.col(col) = Vec::Ones(len);
  return phi;
}

} // namespace detail

/// Ridge least squares of the feature matrix against an explicit target.
/// Rows whose index appears in `skip_rows` (sorted) are excluded.
inline ReadoutModel fit_readout_to_target(const Vec& input, const Vec& target,
                                          const ReadoutConfig& config,
                                          const std::vector<int>& skip_rows = {}) {
  if (input.size() != target.size())
    throw std::invalid_argument("fit_readout_to_target: input/target length mismatch");
  if (input.size() < 2 * config.state_dim)
    throw std::invalid_argument("fit_readout_to_target: series too short for the state size");
  ReadoutModel model;
  model.ssm_stack = detail::build_stack(config);
  model.depth = config.depth;
  model.feature_dim = config.feature_dim;
  model.state_dim = config.state_dim;
  model.include_input_column = config.include_input_column;

  const Mat phi_all = detail::state_features(model.ssm_stack, input, config);
  Mat phi;
  Vec y;
  if (skip_rows.empty()) {
    phi = phi_all;
    y = target;
  } else {
    std::vector<int> keep;
    keep.reserve(input.size());
    std::size_t k = 0;
    for (int t = 0; t < input.size(); ++t) {
      while (k < skip_rows.size() && skip_rows[k] < t) ++k;
      if (k < skip_rows.size() && skip_rows[k] == t) continue;
      keep.push_back(t);
    }
    phi = Mat(keep.size(), phi_all.cols());
    y = Vec(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      phi.row(i) = phi_all.row(keep[i]);
      y(i) = target(keep[i]);
    }
  }

  Mat gram = phi.transpose() * phi;
  gram.diagonal().array() += config.ridge;
  model.weights = gram.ldlt().solve(phi.transpose() * y);
  model.train_mse = (phi * model.weights - y).squaredNorm() / static_cast<double>(y.size());
  return model;
}

/// Fits the one-step-ahead readout on a merged dataset: the series is
/// standardized, features at step t predict the value at t+1. Bridge rows can
/// be excluded from the loss.
inline ReadoutModel fit_readout(const MergedDataset& data, const ReadoutConfig& config) {
  const Vec& raw = data.values;
  if (raw.size() < std::max(2, 2 * config.state_dim))
    throw std::invalid_argument("fit_readout: merged dataset too short");
  const double mu = raw.mean();
  double sd = std::sqrt((raw.array() - mu).square().mean());
  if (sd < 1e-12) sd = 1.0;
  const Vec u = (raw.array() - mu) / sd;

  const Vec input = u.head(u.size() - 1);
  const Vec target = u.tail(u.size() - 1);
  std::vector<int> skip;
  if (config.exclude_bridges) {
    for (const auto& [b0, b1] : data.bridge_spans) {
      // Row t predicts value t+1: skip rows whose target lies in a bridge.
      for (int t = std::max(0, b0 - 1); t < b1 && t < static_cast<int>(input.size()); ++t) {
        skip.push_back(t);
      }
    }
    std::sort(skip.begin(), skip.end());
    skip.erase(std::unique(skip.begin(), skip.end()), skip.end());
  }
  ReadoutModel model = fit_readout_to_target(input, target, config, skip);

  if (config.mask_len > 0 && config.mask_tiles > 0) {
    const int len = static_cast<int>(input.size());
    const Mat phi_plain = detail::state_features(model.ssm_stack, input, config);
    std::vector<Mat> blocks{phi_plain};
    std::vector<Vec> targets{target};
    Eigen::Index rows = phi_plain.rows();
    for (int j = 0; j < config.mask_tiles; ++j) {
      const int mask_end = len - j * std::max(1, len / (2 * config.mask_tiles));
      const int mask_start = mask_end - config.mask_len;
      if (mask_start < len / 4) break;
      Vec masked = input;
      masked.segment(mask_start, mask_end - mask_start).setZero();
      const Mat phi_masked = detail::state_features(model.ssm_stack, masked, config);
      blocks.push_back(phi_masked.middleRows(mask_start, mask_end - mask_start));
      targets.push_back(target.segment(mask_start, mask_end - mask_start));
      rows += mask_end - mask_start;
    }
    Mat phi_fit(rows, phi_plain.cols());
    Vec y_fit(rows);
    Eigen::Index at = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      phi_fit.middleRows(at, blocks[b].rows()) = blocks[b];
      y_fit.segment(at, targets[b].size()) = targets[b];
      at += blocks[b].rows();
    }
    Mat gram = phi_fit.transpose() * phi_fit;
    gram.diagonal().array() += config.ridge;
    model.weights = gram.ldlt().solve(phi_fit.transpose() * y_fit);
    // Reported train loss stays the plain one-step residual.
    model.train_mse =
        (phi_plain * model.weights - target).squaredNorm() / static_cast<double>(target.size());
  }

  model.standardize_mean = mu;
  model.standardize_std = sd;
  model.train_mse *= sd * sd;
  return model;
}

/// Masked forecast: the input is the past followed by `horizon` zeros (in
/// standardized units), one causal forward pass, and the last `horizon`
/// outputs de-standardized.
inline Vec predict_masked(const ReadoutModel& model, const Vec& past, int horizon) {
  if (horizon < 1) throw std::invalid_argument("predict_masked: horizon must be >= 1");
  if (past.size() < 1) throw std::invalid_argument("predict_masked: empty past");
  ReadoutConfig config;
  config.depth = model.depth;
  config.feature_dim = model.feature_dim;
  config.state_dim = model.state_dim;
  config.include_input_column = model.include_input_column;
  Vec u(past.size() + horizon);
  u.head(past.size()) = (past.array() - model.standardize_mean) / model.standardize_std;
  u.tail(horizon).setZero();
  const Mat phi = detail::state_features(model.ssm_stack, u, config);
  const Vec out = phi * model.weights;
  return (out.tail(horizon).array() * model.standardize_std + model.standardize_mean).matrix();
}

struct PipelineConfig {
  int horizon = 250;
  changefinder::DetectorConfig detector{};
  double mean_tol = 0.5;   // alpha
  double std_ratio = 1.5;  // rho
  int gap = 10;            // interpolated points between merged segments
  int tail_window = 0;     // 0 = length of the last segment
  ReadoutConfig readout{};

  PipelineConfig() {
    // The pipeline prefers detection power: a false split is re-merged by the
    // grouping stage, a missed one degrades to the no-split fit.
    detector.policy.kappa = 4.0;
  }
};

struct GroupReport {
  std::vector<int> segment_ids;
  double mean = 0.0;
  double std = 0.0;
};

struct PipelineResult {
  std::vector<int> change_points;
  std::vector<SegmentFeatures> features;     // per segment
  std::vector<int> assignment;               // group id per segment
  std::vector<GroupReport> groups;
  int chosen_group = 0;
  Vec forecast;
  Vec baseline_forecast;
  double mse_train = 0.0;
  double mse_test = 0.0;
  double baseline_mse_train = 0.0;
  double baseline_mse_test = 0.0;
};

/// Full S4-split run: detect change points on the training prefix, split,
/// group by (mean, std), merge with bridges, match the group to the most
/// recent data, fit the frozen-core readout, and forecast the held-out tail.
/// The no-split baseline fits the same readout on the whole training prefix.
inline PipelineResult s4_split_pipeline(const Vec& series, const PipelineConfig& config) {
  const int horizon = config.horizon;
  if (horizon < 1) throw std::invalid_argument("s4_split_pipeline: horizon must be >= 1");
  if (series.size() <= horizon + 4 * std::max(2, config.readout.state_dim))
    throw std::invalid_argument("s4_split_pipeline: series too short for the horizon");
  const Vec train = series.head(series.size() - horizon);
  const Vec test = series.tail(horizon);

  PipelineResult result;
  const auto detection = changefinder::detect(train, config.detector);
  result.change_points = detection.change_points;

  const auto segments = split_at_change_points(train, result.change_points);
  result.features.reserve(segments.size());
  for (const auto& seg : segments) result.features.push_back(segment_features(seg));
  result.assignment = group_segments(result.features, config.mean_tol, config.std_ratio);

  const int num_groups = *std::max_element(result.assignment.begin(), result.assignment.end()) + 1;
  std::vector<MergedDataset> merged(num_groups);
  for (int g = 0; g < num_groups; ++g) {
    std::vector<Segment> members;
    std::vector<int> ids;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (result.assignment[i] == g) {
        members.push_back(segments[i]);
        ids.push_back(static_cast<int>(i));
      }
    }
    merged[g] = merge_group(members, ids, config.gap);
    GroupReport report;
    report.segment_ids = ids;
    report.mean = merged[g].values.mean();
    report.std = std::sqrt((merged[g].values.array() - report.mean).square().mean());
    result.groups.push_back(std::move(report));
  }

  const int tail_window =
      config.tail_window > 0 ? config.tail_window : static_cast<int>(segments.back().values.size());
  result.chosen_group =
      match_group_to_recent(merged, train, std::min<int>(tail_window, train.size()));

  ReadoutConfig readout = config.readout;
  if (readout.mask_len == 0) readout.mask_len = horizon;
  const ReadoutModel split_model = fit_readout(merged[result.chosen_group], readout);
  result.mse_train = split_model.train_mse;
  result.forecast = predict_masked(split_model, merged[result.chosen_group].values, horizon);
  result.mse_test = (result.forecast - test).squaredNorm() / horizon;

  MergedDataset whole;
  whole.values = train;
  whole.source_segments = {0};
  const ReadoutModel base_model = fit_readout(whole, readout);
  result.baseline_mse_train = base_model.train_mse;
  result.baseline_forecast = predict_masked(base_model, train, horizon);
  result.baseline_mse_test = (result.baseline_forecast - test).squaredNorm() / horizon;
  return result;
}

} // namespace switchts::segmentation
