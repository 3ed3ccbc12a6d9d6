#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "hiss/errors.hpp"
#include "hiss/preprocess.hpp"

namespace pp = hiss::preprocess;
using hiss::Series;

namespace {

Series random_series(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double offset = 0.0) {
  std::normal_distribution<double> n(offset, 2.0);
  Series s(rows, cols);
  for (auto& v : s.values) v = n(rng);
  return s;
}

pp::RawChannelSeries sampled(double hz, double seconds, double (*f)(double)) {
  pp::RawChannelSeries r;
  r.nominal_hz = hz;
  const auto n = static_cast<std::size_t>(std::floor(seconds * hz)) + 1;
  r.values = Series(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    r.timestamps.push_back(static_cast<double>(i) / hz);
    r.values.values[i] = f(r.timestamps.back());
  }
  return r;
}

// Steady-state amplitude of a filtered unit sinusoid from a least-squares
// sin/cos fit over the last `fit_rows` samples.
double measured_gain(const pp::ButterworthFilter& f, double freq, double fs) {
  const std::size_t n = 6000, fit_rows = 2000;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2 * std::numbers::pi * freq * static_cast<double>(i) / fs);
  const auto y = f.filter(x);
  double ss = 0, cc = 0, sc = 0, ys = 0, yc = 0;
  for (std::size_t i = n - fit_rows; i < n; ++i) {
    const double ph = 2 * std::numbers::pi * freq * static_cast<double>(i) / fs;
    const double s = std::sin(ph), c = std::cos(ph);
    ss += s * s;
    cc += c * c;
    sc += s * c;
    ys += y[i] * s;
    yc += y[i] * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (ys * cc - yc * sc) / det;
  const double b = (yc * ss - ys * sc) / det;
  return std::hypot(a, b);
}

}  // namespace

TEST(Resample, ConstantAndRamp) {
  auto c = sampled(37, 3, [](double) { return 4.25; });
  for (double v : pp::resample(c, 50).values) EXPECT_EQ(v, 4.25);
  auto r = sampled(37, 3, [](double t) { return 3.0 * t - 1.0; });
  const Series out = pp::resample(r, 50);
  for (std::size_t i = 0; i < out.rows; ++i) EXPECT_NEAR(out.values[i], 3.0 * i / 50.0 - 1.0, 1e-13);
}

TEST(Resample, SineAgainstAnalytic) {
  auto s = sampled(37, 4, [](double t) { return std::sin(2 * std::numbers::pi * t); });
  const Series out = pp::resample(s, 50);
  double err = 0.0;
  for (std::size_t i = 0; i < out.rows; ++i)
    err = std::max(err, std::abs(out.values[i] - std::sin(2 * std::numbers::pi * i / 50.0)));
  const double h = 1.0 / 37.0, w = 2 * std::numbers::pi;
  EXPECT_LT(err, h * h * w * w / 8.0);
}

TEST(Resample, Errors) {
  auto s = sampled(10, 1, [](double t) { return t; });
  EXPECT_THROW(pp::resample_at(s, {1.5}), hiss::ExtrapolationError);
  pp::RawChannelSeries one;
  one.timestamps = {0.0};
  one.values = Series(1, 1);
  EXPECT_THROW(pp::resample(one, 10), hiss::LengthError);
}

TEST(Align, TicksCloseWholeStrides) {
  auto s = sampled(50, 2, [](double t) { return t; });
  auto l = sampled(5, 2, [](double t) { return 10 * t; });
  const auto a = pp::align(s, l, 50, 5);
  EXPECT_EQ(a.stride, 10u);
  EXPECT_EQ(a.sensor.rows, a.stride * a.label.rows);
  for (std::size_t i = 0; i < a.label.rows; ++i)
    EXPECT_NEAR(a.label.values[i], 10 * a.sensor.values[(i + 1) * 10 - 1], 1e-12);
  EXPECT_THROW(pp::align(s, l, 50, 7), hiss::RateError);
}

TEST(Resting, ExamplesAndMeanZero) {
  for (double v : pp::subtract_resting(Series(40, 2, 3.5)).values) EXPECT_EQ(v, 0.0);

  Series step(60, 1, 5.0);
  for (std::size_t r = 30; r < 60; ++r) step.values[r] = 8.0;
  const Series s = pp::subtract_resting(step, 25);
  EXPECT_EQ(s.values[0], 0.0);
  EXPECT_EQ(s.values[59], 3.0);

  std::mt19937_64 rng(51);
  const Series out = pp::subtract_resting(random_series(100, 3, rng, 7.0));
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < pp::kRestingWarmup; ++r) m += out.at(r, c);
    EXPECT_NEAR(m / pp::kRestingWarmup, 0.0, 1e-12);
  }
  EXPECT_THROW(pp::subtract_resting(Series(10, 1), 25), hiss::LengthError);
}

TEST(Diffs, ConstantRampAndTelescoping) {
  const Series c = pp::append_diffs(Series(10, 2, 1.5));
  EXPECT_EQ(c.cols, 4u);
  for (std::size_t r = 0; r < 10; ++r) {
    EXPECT_EQ(c.at(r, 2), 0.0);
    EXPECT_EQ(c.at(r, 3), 0.0);
  }
  Series ramp(10, 1);
  for (std::size_t r = 0; r < 10; ++r) ramp.values[r] = 0.25 * r;
  const Series d = pp::append_diffs(ramp);
  for (std::size_t r = 1; r < 10; ++r) EXPECT_EQ(d.at(r, 1), 0.25);

  std::mt19937_64 rng(52);
  const Series x = random_series(200, 3, rng);
  const Series dx = pp::append_diffs(x);
  for (std::size_t c = 0; c < 3; ++c) {
    double acc = x.at(0, c);
    for (std::size_t r = 1; r < 200; ++r) {
      acc += dx.at(r, 3 + c);
      EXPECT_NEAR(acc, x.at(r, c), 1e-12);
    }
  }
}

TEST(Norm, FitApplyInverse) {
  std::mt19937_64 rng(53);
  const Series a = random_series(300, 3, rng, 4.0), b = random_series(120, 3, rng, 4.0);
  const auto stats = pp::NormStats::fit({&a, &b});
  const Series na = stats.apply(a), nb = stats.apply(b);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, n = 0;
    for (const Series* s : {&na, &nb})
      for (std::size_t r = 0; r < s->rows; ++r) m += s->at(r, c), ++n;
    m /= n;
    double v = 0;
    for (const Series* s : {&na, &nb})
      for (std::size_t r = 0; r < s->rows; ++r) v += (s->at(r, c) - m) * (s->at(r, c) - m);
    EXPECT_NEAR(m, 0.0, 1e-10);
    EXPECT_NEAR(std::sqrt(v / n), 1.0, 1e-10);
  }
  const Series back = stats.denormalize(na);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(back.values[i], a.values[i], 1e-12);

  const auto copy = stats;
  (void)stats.apply(random_series(50, 3, rng, -9.0));
  EXPECT_EQ(stats, copy);
  EXPECT_EQ(pp::NormStats::from_json(stats.to_json()), stats);
  EXPECT_THROW(stats.apply(Series(3, 2)), hiss::ShapeError);
}

TEST(Norm, ConstantDimensionPassesThrough) {
  Series s(20, 2);
  for (std::size_t r = 0; r < 20; ++r) {
    s.at(r, 0) = 7.0;
    s.at(r, 1) = static_cast<double>(r);
  }
  const auto stats = pp::NormStats::fit({&s});
  EXPECT_TRUE(stats.constant()[0]);
  EXPECT_EQ(stats.warnings().size(), 1u);
  const Series n = stats.apply(s);
  for (std::size_t r = 0; r < 20; ++r) EXPECT_EQ(n.at(r, 0), 7.0);
}

TEST(Butterworth, DcGainIsOne) {
  for (int order : {3, 5}) {
    const pp::ButterworthFilter f({order, 2.5, 50.0});
    std::vector<double> num, den;
    f.transfer_function(num, den);
    double sn = 0, sd = 0;
    for (double v : num) sn += v;
    for (double v : den) sd += v;
    EXPECT_NEAR(sn / sd, 1.0, 1e-9);
    const auto y = f.filter(std::vector<double>(2000, 3.0));
    EXPECT_NEAR(y.back(), 3.0, 3e-9);
    EXPECT_NEAR(std::abs(f.response(0.0)), 1.0, 1e-12);
  }
}

TEST(Butterworth, MinusThreeDbAtCutoff) {
  for (double fc : {0.75, 2.5, 7.5}) {
    const pp::ButterworthFilter f({5, fc, 50.0});
    const double db = 20 * std::log10(measured_gain(f, fc, 50.0));
    EXPECT_NEAR(db, -3.0103, 0.2) << fc;
    EXPECT_NEAR(std::norm(f.response(fc)), 0.5, 1e-12);
  }
}

TEST(Butterworth, ResponseAgainstAnalogPrototype) {
  const double fs = 50.0, fc = 2.5;
  const int n = 5;
  const pp::ButterworthFilter f({n, fc, fs});
  for (const auto& p : f.poles()) EXPECT_LT(std::abs(p), 1.0);
  for (int i = 1; i <= 10; ++i) {
    const double freq = 0.5 * i;
    const double analog = 1.0 / std::sqrt(1.0 + std::pow(freq / fc, 2 * n));
    // The bilinear map sends digital f to analog fs/pi * tan(pi f / fs).
    const double warped = fs / std::numbers::pi * std::tan(std::numbers::pi * freq / fs);
    const double prewarp_c = fs / std::numbers::pi * std::tan(std::numbers::pi * fc / fs);
    const double exact = 1.0 / std::sqrt(1.0 + std::pow(warped / prewarp_c, 2 * n));
    const double tolerance = std::abs(exact - analog) + 1e-12;
    const double measured = measured_gain(f, freq, fs);
    EXPECT_NEAR(measured, analog, tolerance + 1e-4) << freq;
    EXPECT_NEAR(measured, exact, 1e-4) << freq;
    EXPECT_NEAR(std::abs(f.response(freq)), std::sqrt(f.analytic_gain(freq)), 1e-12);
  }
}

TEST(Butterworth, RejectsBadSpecs) {
  EXPECT_THROW(pp::ButterworthFilter({5, 25.0, 50.0}), hiss::FilterError);
  EXPECT_THROW(pp::ButterworthFilter({0, 2.5, 50.0}), hiss::FilterError);
  EXPECT_THROW(pp::ButterworthFilter({5, -1.0, 50.0}), hiss::FilterError);
}

TEST(Frames, IdentityAndAxisRotation) {
  const pp::FrameCalib id{{pp::Quaternion{}, pp::Quaternion{}}, pp::Quaternion{}};
  const std::vector<pp::Vec3> a = {{1, 2, 3}, {-4, 0.5, 9}};
  EXPECT_EQ(pp::imu_to_reference(a, id), a);

  const double h = std::sqrt(0.5);
  const auto r = pp::rotation_matrix({h, 0, 0, h});
  const auto v = pp::rotate(r, {1, 0, 0});
  EXPECT_NEAR(v[0], 0.0, 1e-15);
  EXPECT_NEAR(v[1], 1.0, 1e-15);
  EXPECT_NEAR(v[2], 0.0, 1e-15);
  EXPECT_THROW(pp::rotation_matrix({1, 1, 0, 0}), hiss::CalibError);
}

TEST(Frames, CompositionOrderAndNorms) {
  std::mt19937_64 rng(54);
  std::normal_distribution<double> n;
  auto unit = [&] {
    pp::Quaternion q{n(rng), n(rng), n(rng), n(rng)};
    const double s = q.norm();
    return pp::Quaternion{q.w / s, q.x / s, q.y / s, q.z / s};
  };
  pp::FrameCalib calib;
  calib.inertial_to_vicon = unit();
  std::vector<pp::Vec3> a;
  for (int t = 0; t < 50; ++t) {
    calib.imu_to_inertial.push_back(unit());
    a.push_back({n(rng), n(rng), n(rng)});
  }
  const auto out = pp::imu_to_reference(a, calib);
  const auto outer = pp::rotation_matrix(calib.inertial_to_vicon);
  for (int t = 0; t < 50; ++t) {
    const auto seq = pp::rotate(outer, pp::rotate(pp::rotation_matrix(calib.imu_to_inertial[t]), a[t]));
    const auto swapped = pp::rotate(pp::rotation_matrix(calib.imu_to_inertial[t]), pp::rotate(outer, a[t]));
    double err = 0, diff = 0;
    for (int i = 0; i < 3; ++i) {
      err = std::max(err, std::abs(out[t][i] - seq[i]));
      diff = std::max(diff, std::abs(out[t][i] - swapped[i]));
    }
    EXPECT_LT(err, 1e-12);
    EXPECT_GT(diff, 1e-6);
    EXPECT_NEAR(std::hypot(out[t][0], out[t][1], out[t][2]), std::hypot(a[t][0], a[t][1], a[t][2]), 1e-12);
  }
}
