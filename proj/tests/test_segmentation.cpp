#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "switchts/datagen.hpp"
#include "switchts/rng.hpp"
#include "switchts/segmentation.hpp"

using namespace switchts;
using namespace switchts::segmentation;

TEST_CASE("split_at_change_points covers the series") {
  Vec s = Vec::LinSpaced(10, 0.0, 9.0);
  const auto one_cut = split_at_change_points(s, {4});
  REQUIRE(one_cut.size() == 2);
  CHECK(one_cut[0].start == 0);
  CHECK(one_cut[0].end == 4);
  CHECK(one_cut[1].start == 4);
  CHECK(one_cut[1].end == 10);

  const auto no_cut = split_at_change_points(s, {});
  REQUIRE(no_cut.size() == 1);
  CHECK(no_cut[0].end == 10);

  Vec six = Vec::LinSpaced(6, 0.0, 5.0);
  const auto two_cuts = split_at_change_points(six, {2, 4});
  REQUIRE(two_cuts.size() == 3);
  CHECK(two_cuts[1].start == 2);
  CHECK(two_cuts[1].end == 4);

  CHECK_THROWS_AS(split_at_change_points(s, {0}), std::invalid_argument);
  CHECK_THROWS_AS(split_at_change_points(s, {10}), std::invalid_argument);
  CHECK_THROWS_AS(split_at_change_points(s, {4, 4}), std::invalid_argument);
  CHECK_THROWS_AS(split_at_change_points(s, {5, 3}), std::invalid_argument);

  // Cover property: concatenating the slices reproduces the series.
  Eigen::Index total = 0;
  for (const auto& seg : two_cuts) {
    CHECK(seg.start == total);
    total = seg.end;
    CHECK((seg.values - six.segment(seg.start, seg.end - seg.start)).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(total == six.size());
}

TEST_CASE("segment_features population statistics") {
  Segment constant{0, 3, Vec::Ones(3)};
  auto f = segment_features(constant);
  CHECK(f.mean == Catch::Approx(1.0));
  CHECK(f.std == Catch::Approx(0.0));

  Vec v(2);
  v << 0.0, 2.0;
  f = segment_features({0, 2, v});
  CHECK(f.mean == Catch::Approx(1.0));
  CHECK(f.std == Catch::Approx(1.0));

  v << -3.0, 3.0;
  f = segment_features({0, 2, v});
  CHECK(f.mean == Catch::Approx(0.0));
  CHECK(f.std == Catch::Approx(3.0));

  CHECK_THROWS_AS(segment_features({0, 0, Vec()}), std::invalid_argument);
}

TEST_CASE("group_segments rule examples") {
  std::vector<SegmentFeatures> identical(4, SegmentFeatures{2.0, 0.5});
  auto groups = group_segments(identical, 0.5, 1.5);
  CHECK(groups == std::vector<int>{0, 0, 0, 0});

  std::vector<SegmentFeatures> far{{0.0, 1.0}, {100.0, 1.0}};
  groups = group_segments(far, 0.5, 1.5);
  CHECK(groups == std::vector<int>{0, 1});

  std::vector<SegmentFeatures> alternating{{0.0, 1.0}, {5.0, 1.0}, {0.0, 1.0}};
  groups = group_segments(alternating, 0.5, 1.5);
  CHECK(groups == std::vector<int>{0, 1, 0});
}

TEST_CASE("merge_group bridges") {
  Vec a(3), b(2);
  a << 0.0, 0.5, 1.0;
  b << 3.0, 3.5;
  Segment s0{0, 3, a}, s1{10, 12, b};

  const auto mid = merge_group({s0, s1}, {0, 1}, 1);
  REQUIRE(mid.values.size() == 6);
  CHECK(mid.values(3) == Catch::Approx(2.0)); // midpoint of 1.0 and 3.0
  REQUIRE(mid.bridge_spans.size() == 1);
  CHECK(mid.bridge_spans[0].first == 3);
  CHECK(mid.bridge_spans[0].second == 4);

  const auto plain = merge_group({s0, s1}, {0, 1}, 0);
  CHECK(plain.values.size() == 5);
  CHECK(plain.bridge_spans.empty());

  Vec c(1), d(1);
  c << 0.0;
  d << 1.0;
  const auto spaced = merge_group({{0, 1, c}, {5, 6, d}}, {0, 1}, 3);
  CHECK(spaced.values(1) == Catch::Approx(0.25));
  CHECK(spaced.values(2) == Catch::Approx(0.5));
  CHECK(spaced.values(3) == Catch::Approx(0.75));

  // Bridge affinity: second differences vanish across any bridge.
  for (const auto& [b0, b1] : spaced.bridge_spans) {
    for (int t = std::max(1, b0); t < b1 - 1; ++t) {
      const double second_diff =
          spaced.values(t + 1) - 2.0 * spaced.values(t) + spaced.values(t - 1);
      CHECK(std::abs(second_diff) <= 1e-12);
    }
  }
}

TEST_CASE("match_group_to_recent picks the statistically closest group") {
  using datagen::GaussianBlock;
  // Two groups with distinct levels; the tail comes from the second regime.
  const auto data = datagen::gen_switching_gaussian(
      {GaussianBlock{0.0, 1.0, 400}, GaussianBlock{6.0, 1.0, 400}}, 8);
  const Vec series = data.values.col(0);
  MergedDataset g0, g1;
  g0.values = series.head(400);
  g1.values = series.tail(400);
  CHECK(match_group_to_recent({g0, g1}, series, 200) == 1);

  CHECK(match_group_to_recent({g0}, series, 200) == 0);

  // Exact tie: two identical groups resolve to the lower id.
  CHECK(match_group_to_recent({g1, g1}, series, 200) == 0);
}

TEST_CASE("fit_readout on a zero target") {
  MergedDataset data;
  data.values = Vec::Zero(256);
  const ReadoutConfig config{};
  const ReadoutModel model = fit_readout(data, config);
  CHECK(model.train_mse <= 1e-12);
  CHECK(model.weights.cwiseAbs().maxCoeff() <= 1e-6);
  const Vec f = predict_masked(model, data.values, 5);
  CHECK(f.cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("fit_readout recovers a planted channel map") {
  ReadoutConfig config;
  config.depth = 1;
  config.feature_dim = 1;
  config.state_dim = 4;
  config.delta = 0.05;
  config.ridge = 1e-10;

  Rng rng(31);
  const int len = 2048;
  Vec u(len);
  for (int i = 0; i < len; ++i) u(i) = rng.normal();

  const auto stack = segmentation::detail::build_stack(config);
  CVec planted(4);
  for (int n = 0; n < 4; ++n) planted(n) = Complex(rng.normal(), rng.normal());
  auto system = stack[0];
  system.c = planted;
  Vec target(len);
  {
    CVec state = CVec::Zero(4);
    for (int t = 0; t < len; ++t) {
      state = system.a_diag.cwiseProduct(state) + system.b * u(t);
      target(t) = (planted.array() * state.array()).sum().real();
    }
  }
  const ReadoutModel model = fit_readout_to_target(u, target, config);
  const CVec recovered = model.channel_c(0);
  CHECK((recovered - planted).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(std::abs(model.feedthrough()) <= 1e-6);
}

TEST_CASE("fit_readout cannot exceed the variance baseline on white noise") {
  Rng rng(5);
  MergedDataset data;
  data.values = Vec(1024);
  for (int i = 0; i < 1024; ++i) data.values(i) = rng.normal(2.0, 1.5);
  const ReadoutModel model = fit_readout(data, ReadoutConfig{});
  const double var = (data.values.array() - data.values.mean()).square().mean();
  CHECK(model.train_mse <= var * 1.05);
}

TEST_CASE("frozen core is bit-identical before and after fitting") {
  ReadoutConfig config;
  const auto reference = segmentation::detail::build_stack(config);
  MergedDataset data;
  Rng rng(9);
  data.values = Vec(300);
  for (int i = 0; i < 300; ++i) data.values(i) = rng.normal();
  const ReadoutModel model = fit_readout(data, config);
  REQUIRE(model.ssm_stack.size() == reference.size());
  for (std::size_t j = 0; j < reference.size(); ++j) {
    CHECK(std::memcmp(model.ssm_stack[j].a_diag.data(), reference[j].a_diag.data(),
                      sizeof(Complex) * config.state_dim) == 0);
    CHECK(std::memcmp(model.ssm_stack[j].b.data(), reference[j].b.data(),
                      sizeof(Complex) * config.state_dim) == 0);
  }
}

TEST_CASE("predict_masked: horizon one equals the (P+1)-th model output") {
  Rng rng(13);
  MergedDataset data;
  data.values = Vec(400);
  for (int i = 0; i < 400; ++i) data.values(i) = std::sin(0.1 * i) + 0.1 * rng.normal();
  ReadoutConfig config;
  const ReadoutModel model = fit_readout(data, config);

  const Vec past = data.values.head(350);
  const Vec one = predict_masked(model, past, 1);
  REQUIRE(one.size() == 1);

  Vec padded(351);
  padded.head(350) = (past.array() - model.standardize_mean) / model.standardize_std;
  padded(350) = 0.0;
  const Mat phi = segmentation::detail::state_features(model.ssm_stack, padded, config);
  const Vec outputs = phi * model.weights;
  const double expected = outputs(350) * model.standardize_std + model.standardize_mean;
  CHECK(one(0) == Catch::Approx(expected).margin(1e-12));

  CHECK_THROWS_AS(predict_masked(model, past, 0), std::invalid_argument);
}

TEST_CASE("masked forecast continues a pure sinusoid") {
  const int len = 2000, horizon = 20;
  Vec s(len);
  for (int i = 0; i < len; ++i) s(i) = std::sin(2.0 * M_PI * i / 100.0);
  MergedDataset data;
  data.values = s.head(len - horizon);
  ReadoutConfig config;
  config.state_dim = 8;
  config.mask_len = horizon;
  const ReadoutModel model = fit_readout(data, config);
  const Vec forecast = predict_masked(model, data.values, horizon);
  const Vec truth = s.tail(horizon);
  const double mse = (forecast - truth).squaredNorm() / horizon;
  const double power = truth.squaredNorm() / horizon;
  CHECK(mse <= 0.1 * power);
}

TEST_CASE("pipeline on a stationary series degrades to the plain fit") {
  using datagen::GaussianBlock;
  const auto data = datagen::gen_switching_gaussian({GaussianBlock{1.0, 1.0, 3000}}, 99);
  PipelineConfig config;
  config.horizon = 200;
  const auto result = s4_split_pipeline(data.values.col(0), config);
  CHECK(result.change_points.empty());
  REQUIRE(result.groups.size() == 1);
  CHECK(result.chosen_group == 0);
  // One segment, no bridges: the split fit and the baseline coincide.
  CHECK(result.mse_test == Catch::Approx(result.baseline_mse_test).margin(1e-12));
}

TEST_CASE("pipeline beats the no-split baseline on two-regime data") {
  using datagen::GaussianBlock;
  int split_wins = 0;
  std::vector<double> split_mse, base_mse;
  for (int seed = 0; seed < 10; ++seed) {
    const auto data = datagen::gen_switching_gaussian(
        {GaussianBlock{0.0, 1.0, 1250}, GaussianBlock{5.0, 1.0, 1250},
         GaussianBlock{0.0, 1.0, 1250}, GaussianBlock{5.0, 1.0, 1250}},
        6200 + seed);
    PipelineConfig config;
    config.horizon = 250;
    const auto result = s4_split_pipeline(data.values.col(0), config);
    split_mse.push_back(result.mse_test);
    base_mse.push_back(result.baseline_mse_test);
    if (result.mse_test <= result.baseline_mse_test) ++split_wins;
  }
  std::sort(split_mse.begin(), split_mse.end());
  std::sort(base_mse.begin(), base_mse.end());
  const double split_median = 0.5 * (split_mse[4] + split_mse[5]);
  const double base_median = 0.5 * (base_mse[4] + base_mse[5]);
  INFO("split median " << split_median << " baseline median " << base_median
                       << " wins " << split_wins);
  CHECK(split_median <= base_median);
}

TEST_CASE("pipeline is deterministic") {
  using datagen::GaussianBlock;
  const auto data = datagen::gen_switching_gaussian(
      {GaussianBlock{0.0, 1.0, 1500}, GaussianBlock{4.0, 1.0, 1500}}, 77);
  PipelineConfig config;
  config.horizon = 200;
  const auto a = s4_split_pipeline(data.values.col(0), config);
  const auto b = s4_split_pipeline(data.values.col(0), config);
  CHECK(a.change_points == b.change_points);
  CHECK(a.chosen_group == b.chosen_group);
  CHECK((a.forecast - b.forecast).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.mse_test == b.mse_test);
}
