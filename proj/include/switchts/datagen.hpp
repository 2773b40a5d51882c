#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "switchts/rng.hpp"
#include "switchts/types.hpp"

namespace switchts::datagen {

/// Synthetic series with ground-truth mode labels.
struct LabeledSeries {
  Mat values;              // T x d
  std::vector<int> labels; // length T
  std::string generator;
  std::string params_json; // generator parameters, serialized by the caller
  std::uint64_t seed = 0;
};

/// One block of i.i.d. Gaussian samples per (mean, stddev, length) entry;
/// the label is the block index.
struct GaussianBlock {
  double mean = 0.0;
  double stddev = 1.0;
  int length = 0;
};

inline LabeledSeries gen_switching_gaussian(const std::vector<GaussianBlock>& blocks,
                                            std::uint64_t seed) {
  if (blocks.empty()) throw std::invalid_argument("gen_switching_gaussian: empty block spec");
  Eigen::Index total = 0;
  for (const auto& b : blocks) {
    if (b.length <= 0) throw std::invalid_argument("gen_switching_gaussian: block length must be positive");
    if (b.stddev < 0.0) throw std::invalid_argument("gen_switching_gaussian: stddev must be >= 0");
    total += b.length;
  }
  LabeledSeries out;
  out.generator = "switching";
  out.seed = seed;
  out.values = Mat(total, 1);
  out.labels.resize(total);
  Rng rng(seed);
  Eigen::Index t = 0;
  for (std::size_t blk = 0; blk < blocks.size(); ++blk) {
    for (int i = 0; i < blocks[blk].length; ++i, ++t) {
      out.values(t, 0) = rng.normal(blocks[blk].mean, blocks[blk].stddev);
      out.labels[t] = static_cast<int>(blk);
    }
  }
  return out;
}

struct LorenzParams {
  double alpha = 10.0;
  double beta = 28.0;
  double gamma = 8.0 / 3.0;
};

enum class LorenzObservation { X1Standardized, Full };

inline std::array<double, 3> lorenz_derivative(const std::array<double, 3>& x,
                                               const LorenzParams& p) {
  return {p.alpha * (x[1] - x[0]), x[0] * (p.beta - x[2]) - x[1], x[0] * x[1] - p.gamma * x[2]};
}

/// Fixed-step RK4 integration of the Lorenz system. The observation is either
/// the standardized first coordinate or the full state; the label marks the
/// attractor lobe, sign(x1).
inline LabeledSeries gen_lorenz(const LorenzParams& params, int steps, double dt,
                                std::uint64_t seed,
                                LorenzObservation obs = LorenzObservation::X1Standardized,
                                double noise_std = 0.0,
                                const std::array<double, 3>* initial = nullptr) {
  if (!(dt > 0.0)) throw std::invalid_argument("gen_lorenz: dt must be positive");
  if (steps < 1) throw std::invalid_argument("gen_lorenz: need at least one step");

  Rng rng(seed);
  std::array<double, 3> x;
  if (initial != nullptr) {
    x = *initial;
  } else {
    x = {1.0 + 0.1 * rng.normal(), 1.0 + 0.1 * rng.normal(), 1.0 + 0.1 * rng.normal()};
  }

  Mat states(steps, 3);
  std::vector<int> labels(steps);
  for (int t = 0; t < steps; ++t) {
    states.row(t) << x[0], x[1], x[2];
    labels[t] = x[0] > 0.0 ? 1 : 0;

    const auto k1 = lorenz_derivative(x, params);
    std::array<double, 3> mid;
    for (int i = 0; i < 3; ++i) mid[i] = x[i] + 0.5 * dt * k1[i];
    const auto k2 = lorenz_derivative(mid, params);
    for (int i = 0; i < 3; ++i) mid[i] = x[i] + 0.5 * dt * k2[i];
    const auto k3 = lorenz_derivative(mid, params);
    for (int i = 0; i < 3; ++i) mid[i] = x[i] + dt * k3[i];
    const auto k4 = lorenz_derivative(mid, params);
    for (int i = 0; i < 3; ++i) x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    for (double v : x) {
      if (!std::isfinite(v))
        throw std::runtime_error("gen_lorenz: trajectory blew up at step " + std::to_string(t));
    }
  }

  LabeledSeries out;
  out.generator = "lorenz";
  out.seed = seed;
  out.labels = std::move(labels);
  if (obs == LorenzObservation::Full) {
    out.values = states;
  } else {
    Vec x1 = states.col(0);
    const double mean = x1.mean();
    double sd = std::sqrt((x1.array() - mean).square().mean());
    if (sd < 1e-12) sd = 1.0;
    out.values = Mat((x1.array() - mean) / sd);
  }
  if (noise_std > 0.0) {
    for (Eigen::Index t = 0; t < out.values.rows(); ++t) {
      for (Eigen::Index j = 0; j < out.values.cols(); ++j) {
        out.values(t, j) += rng.normal(0.0, noise_std);
      }
    }
  }
  return out;
}

struct BouncingBallConfig {
  int num_trajectories = 1;
  int steps = 200;
  double board = 256.0;
  double vel_lo = -5.0;
  double vel_hi = 5.0;
  double noise_std = 0.0;
};

namespace detail {

/// Specular reflection into [0, board]; high velocities fold repeatedly.
inline void reflect(double& pos, double& vel, double board) {
  while (pos < 0.0 || pos > board) {
    if (pos < 0.0) {
      pos = -pos;
      vel = -vel;
    } else {
      pos = 2.0 * board - pos;
      vel = -vel;
    }
  }
}

inline int quadrant_label(double vx, double vy) {
  // Zero (either sign) counts as positive.
  const int qx = vx < 0.0 ? 1 : 0;
  const int qy = vy < 0.0 ? 1 : 0;
  return qx + 2 * qy;
}

} // namespace detail

/// 2-D ball on a square board with elastic wall reflections. Observations are
/// positions; the label is the velocity-sign quadrant.
inline std::vector<LabeledSeries> gen_bouncing_ball(const BouncingBallConfig& config,
                                                    std::uint64_t seed) {
  if (!(config.board > 0.0)) throw std::invalid_argument("gen_bouncing_ball: board must be positive");
  if (!(config.vel_lo < config.vel_hi))
    throw std::invalid_argument("gen_bouncing_ball: velocity range must be nonempty");
  if (config.steps < 1 || config.num_trajectories < 1)
    throw std::invalid_argument("gen_bouncing_ball: steps and trajectory count must be positive");

  std::vector<LabeledSeries> out;
  out.reserve(config.num_trajectories);
  for (int traj = 0; traj < config.num_trajectories; ++traj) {
    Rng rng = Rng::with_stream(seed, static_cast<std::uint64_t>(traj));
    double px = rng.uniform(0.0, config.board);
    double py = rng.uniform(0.0, config.board);
    double vx = rng.uniform(config.vel_lo, config.vel_hi);
    double vy = rng.uniform(config.vel_lo, config.vel_hi);

    LabeledSeries series;
    series.generator = "ball";
    series.seed = seed;
    series.values = Mat(config.steps, 2);
    series.labels.resize(config.steps);
    for (int t = 0; t < config.steps; ++t) {
      series.values(t, 0) = px;
      series.values(t, 1) = py;
      series.labels[t] = detail::quadrant_label(vx, vy);
      px += vx;
      py += vy;
      detail::reflect(px, vx, config.board);
      detail::reflect(py, vy, config.board);
    }
    if (config.noise_std > 0.0) {
      for (int t = 0; t < config.steps; ++t) {
        series.values(t, 0) += rng.normal(0.0, config.noise_std);
        series.values(t, 1) += rng.normal(0.0, config.noise_std);
      }
    }
    out.push_back(std::move(series));
  }
  return out;
}

} // namespace switchts::datagen
