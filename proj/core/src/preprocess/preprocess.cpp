#include "hiss/preprocess.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "hiss/errors.hpp"
#include "json_util.hpp"

namespace hiss::preprocess {

namespace {

constexpr double kTimeSlack = 1e-9;

void require_rows(const Series& s, std::size_t n, const char* who) {
  if (s.rows < n) {
    throw LengthError(std::string(who) + " needs at least " + std::to_string(n) + " rows, got " +
                      std::to_string(s.rows));
  }
}

}  // namespace

void RawChannelSeries::validate() const {
  if (timestamps.size() != values.rows) throw ShapeError("timestamp count does not match sample rows");
  if (values.values.size() != values.rows * values.cols) throw ShapeError("sample block has the wrong size");
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (!(timestamps[i] > timestamps[i - 1])) {
      throw DomainError("timestamps must be strictly increasing (row " + std::to_string(i) + ")");
    }
  }
  for (double v : values.values)
    if (std::isnan(v)) throw DomainError("series contains NaN");
}

Series resample_at(const RawChannelSeries& series, const std::vector<double>& times) {
  series.validate();
  if (series.timestamps.size() < 2) throw LengthError("resampling needs at least 2 samples");
  const auto& ts = series.timestamps;
  const std::size_t d = series.values.cols;
  Series out(times.size(), d);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (t < ts.front() - kTimeSlack || t > ts.back() + kTimeSlack) {
      std::ostringstream os;
      os << "grid time " << t << " s lies outside the recorded span [" << ts.front() << ", " << ts.back()
         << "]";
      throw ExtrapolationError(os.str());
    }
    auto hi = std::upper_bound(ts.begin(), ts.end(), t);
    std::size_t j = static_cast<std::size_t>(hi - ts.begin());
    j = std::clamp<std::size_t>(j, 1, ts.size() - 1);
    const double w = std::clamp((t - ts[j - 1]) / (ts[j] - ts[j - 1]), 0.0, 1.0);
    for (std::size_t c = 0; c < d; ++c) {
      out.at(i, c) = (1.0 - w) * series.values.at(j - 1, c) + w * series.values.at(j, c);
    }
  }
  return out;
}

Series resample(const RawChannelSeries& series, double target_hz) {
  if (!(target_hz > 0.0)) throw RateError("target rate must be positive");
  if (series.timestamps.size() < 2) throw LengthError("resampling needs at least 2 samples");
  const double t0 = series.timestamps.front();
  const double span = series.timestamps.back() - t0;
  const auto n = static_cast<std::size_t>(std::floor(span * target_hz + kTimeSlack)) + 1;
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = t0 + static_cast<double>(i) / target_hz;
  return resample_at(series, grid);
}

AlignedPair align(const RawChannelSeries& sensor, const RawChannelSeries& label, double sensor_hz,
                  double output_hz) {
  if (!(sensor_hz > 0.0) || !(output_hz > 0.0)) throw RateError("rates must be positive");
  const double ratio = sensor_hz / output_hz;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || std::round(ratio) < 1.0) {
    throw RateError("sensor rate is not a whole multiple of the output rate");
  }
  if (sensor.timestamps.size() < 2 || label.timestamps.size() < 2) {
    throw LengthError("alignment needs at least 2 samples per stream");
  }
  const auto stride = static_cast<std::size_t>(std::round(ratio));
  const double t0 = sensor.timestamps.front();
  const double end = std::min(sensor.timestamps.back(), label.timestamps.back());
  const double span = end - t0;
  if (span < 0.0) throw ExtrapolationError("label stream ends before the sensor stream starts");
  const auto rows = static_cast<std::size_t>(std::floor(span * sensor_hz + kTimeSlack)) + 1;
  const std::size_t ticks = rows / stride;
  if (ticks == 0) throw LengthError("recording shorter than one output tick");

  std::vector<double> sensor_grid(ticks * stride), label_grid(ticks);
  for (std::size_t r = 0; r < sensor_grid.size(); ++r) sensor_grid[r] = t0 + static_cast<double>(r) / sensor_hz;
  for (std::size_t i = 0; i < ticks; ++i) label_grid[i] = sensor_grid[(i + 1) * stride - 1];
  return AlignedPair{resample_at(sensor, sensor_grid), resample_at(label, label_grid), stride};
}

Series subtract_resting(const Series& series, std::size_t warmup) {
  if (warmup < 1) throw LengthError("resting warmup must be >= 1 row");
  require_rows(series, warmup, "subtract_resting");
  std::vector<double> base(series.cols, 0.0);
  for (std::size_t r = 0; r < warmup; ++r)
    for (std::size_t c = 0; c < series.cols; ++c) base[c] += series.at(r, c);
  for (double& b : base) b /= static_cast<double>(warmup);
  Series out = series;
  for (std::size_t r = 0; r < series.rows; ++r)
    for (std::size_t c = 0; c < series.cols; ++c) out.at(r, c) -= base[c];
  return out;
}

Series append_diffs(const Series& series) {
  require_rows(series, 1, "append_diffs");
  const std::size_t d = series.cols;
  Series out(series.rows, 2 * d);
  for (std::size_t r = 0; r < series.rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      out.at(r, c) = series.at(r, c);
      out.at(r, d + c) = r ? series.at(r, c) - series.at(r - 1, c) : 0.0;
    }
  }
  return out;
}

NormStats::NormStats(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)) {
  if (mean_.size() != std_.size()) throw ShapeError("norm stats mean/std lengths differ");
  constant_.resize(std_.size());
  for (std::size_t i = 0; i < std_.size(); ++i) {
    if (!(std_[i] >= 0.0) || !std::isfinite(mean_[i])) throw DomainError("invalid norm statistics");
    constant_[i] = std_[i] <= 1e-12;
  }
}

NormStats NormStats::fit(const std::vector<const Series*>& training) {
  if (training.empty()) throw LengthError("cannot fit normalization on an empty set");
  const std::size_t d = training.front()->cols;
  std::vector<double> mean(d, 0.0), m2(d, 0.0);
  double count = 0.0;
  // Welford per dimension, rows visited in set order.
  for (const Series* s : training) {
    if (s->cols != d) throw ShapeError("training series have different widths");
    for (std::size_t r = 0; r < s->rows; ++r) {
      count += 1.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double x = s->at(r, c);
        const double delta = x - mean[c];
        mean[c] += delta / count;
        m2[c] += delta * (x - mean[c]);
      }
    }
  }
  if (count == 0.0) throw LengthError("cannot fit normalization on empty series");
  std::vector<double> sd(d);
  for (std::size_t c = 0; c < d; ++c) sd[c] = std::sqrt(m2[c] / count);
  return NormStats(std::move(mean), std::move(sd));
}

std::vector<std::string> NormStats::warnings() const {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < constant_.size(); ++c)
    if (constant_[c]) out.push_back("dimension " + std::to_string(c) + " is constant; left unscaled");
  return out;
}

void NormStats::check(const Series& series) const {
  if (series.cols != mean_.size()) {
    throw ShapeError("series width " + std::to_string(series.cols) + " does not match norm stats width " +
                     std::to_string(mean_.size()));
  }
}

Series NormStats::apply(const Series& series) const {
  check(series);
  Series out = series;
  for (std::size_t r = 0; r < series.rows; ++r)
    for (std::size_t c = 0; c < series.cols; ++c)
      if (!constant_[c]) out.at(r, c) = (series.at(r, c) - mean_[c]) / std_[c];
  return out;
}

Series NormStats::denormalize(const Series& series) const {
  check(series);
  Series out = series;
  for (std::size_t r = 0; r < series.rows; ++r)
    for (std::size_t c = 0; c < series.cols; ++c)
      if (!constant_[c]) out.at(r, c) = series.at(r, c) * std_[c] + mean_[c];
  return out;
}

std::string NormStats::to_json() const { return detail::Json{{"mean", mean_}, {"std", std_}}.dump(); }

NormStats NormStats::from_json(const std::string& text) {
  const auto j = detail::parse_json(text, "norm stats");
  detail::reject_unknown(j, "norm stats", {"mean", "std"});
  return NormStats(detail::get_req<std::vector<double>>(j, "mean", "norm stats"),
                   detail::get_req<std::vector<double>>(j, "std", "norm stats"));
}

void FilterSpec::validate() const {
  if (order < 1) throw FilterError("filter order must be >= 1");
  if (!(sample_hz > 0.0)) throw FilterError("sample rate must be positive");
  if (!(cutoff_hz > 0.0)) throw FilterError("cutoff must be positive");
  if (cutoff_hz >= 0.5 * sample_hz) {
    std::ostringstream os;
    os << "cutoff " << cutoff_hz << " Hz is not below the Nyquist rate " << 0.5 * sample_hz << " Hz";
    throw FilterError(os.str());
  }
}

ButterworthFilter::ButterworthFilter(const FilterSpec& spec) : spec_(spec) {
  spec.validate();
  const int n = spec.order;
  // Prewarped bilinear map: s/wc -> c (1 - z^-1) / (1 + z^-1).
  const double c = 1.0 / std::tan(std::numbers::pi * spec.cutoff_hz / spec.sample_hz);
  for (int k = 1; k <= n / 2; ++k) {
    const double r = 2.0 * std::sin(std::numbers::pi * (2.0 * k - 1.0) / (2.0 * n));
    const double a0 = c * c + r * c + 1.0;
    Biquad s;
    s.b0 = 1.0 / a0;
    s.b1 = 2.0 / a0;
    s.b2 = 1.0 / a0;
    s.a1 = (2.0 - 2.0 * c * c) / a0;
    s.a2 = (c * c - r * c + 1.0) / a0;
    sections_.push_back(s);
  }
  if (n % 2 == 1) {
    const double a0 = c + 1.0;
    Biquad s;
    s.b0 = 1.0 / a0;
    s.b1 = 1.0 / a0;
    s.a1 = (1.0 - c) / a0;
    sections_.push_back(s);
  }
}

void ButterworthFilter::transfer_function(std::vector<double>& numerator, std::vector<double>& denominator) const {
  numerator = {1.0};
  denominator = {1.0};
  auto mul = [](const std::vector<double>& p, const std::array<double, 3>& q) {
    std::vector<double> out(p.size() + 2, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < 3; ++j) out[i + j] += p[i] * q[j];
    return out;
  };
  for (const auto& s : sections_) {
    numerator = mul(numerator, {s.b0, s.b1, s.b2});
    denominator = mul(denominator, {1.0, s.a1, s.a2});
  }
  const auto trim = [n = static_cast<std::size_t>(spec_.order) + 1](std::vector<double>& v) { v.resize(n); };
  trim(numerator);
  trim(denominator);
}

std::vector<std::complex<double>> ButterworthFilter::poles() const {
  std::vector<std::complex<double>> out;
  for (const auto& s : sections_) {
    if (s.a2 == 0.0 && s.b2 == 0.0) {
      out.emplace_back(-s.a1, 0.0);
      continue;
    }
    const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    out.push_back((-s.a1 + disc) / 2.0);
    out.push_back((-s.a1 - disc) / 2.0);
  }
  return out;
}

std::complex<double> ButterworthFilter::response(double freq_hz) const {
  const double w = 2.0 * std::numbers::pi * freq_hz / spec_.sample_hz;
  const std::complex<double> zi = std::polar(1.0, -w);
  std::complex<double> h = 1.0;
  for (const auto& s : sections_) h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
  return h;
}

double ButterworthFilter::analytic_gain(double freq_hz) const {
  const double ratio = std::tan(std::numbers::pi * freq_hz / spec_.sample_hz) /
                       std::tan(std::numbers::pi * spec_.cutoff_hz / spec_.sample_hz);
  return 1.0 / (1.0 + std::pow(ratio, 2.0 * spec_.order));
}

std::vector<double> ButterworthFilter::filter(const std::vector<double>& signal) const {
  std::vector<double> y = signal;
  for (const auto& s : sections_) {
    double z1 = 0.0, z2 = 0.0;  // transposed direct form II
    for (double& v : y) {
      const double x = v;
      const double out = s.b0 * x + z1;
      z1 = s.b1 * x - s.a1 * out + z2;
      z2 = s.b2 * x - s.a2 * out;
      v = out;
    }
  }
  return y;
}

Series ButterworthFilter::filter(const Series& series) const {
  Series out = series;
  std::vector<double> col(series.rows);
  for (std::size_t c = 0; c < series.cols; ++c) {
    for (std::size_t r = 0; r < series.rows; ++r) col[r] = series.at(r, c);
    const auto y = filter(col);
    for (std::size_t r = 0; r < series.rows; ++r) out.at(r, c) = y[r];
  }
  return out;
}

Series butterworth_lowpass(const Series& series, const FilterSpec& spec) {
  return ButterworthFilter(spec).filter(series);
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Mat3 rotation_matrix(const Quaternion& q) {
  if (std::abs(q.norm() - 1.0) > 1e-6) {
    std::ostringstream os;
    os << "quaternion (" << q.w << ", " << q.x << ", " << q.y << ", " << q.z << ") has norm " << q.norm();
    throw CalibError(os.str());
  }
  const Eigen::Matrix3d m = Eigen::Quaterniond(q.w, q.x, q.y, q.z).toRotationMatrix();
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] = m(i, j);
  return r;
}

Vec3 rotate(const Mat3& r, const Vec3& v) {
  Vec3 out{};
  for (int i = 0; i < 3; ++i) out[i] = r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2];
  return out;
}

std::vector<Vec3> imu_to_reference(const std::vector<Vec3>& a_imu, const FrameCalib& calib) {
  if (calib.imu_to_inertial.size() != a_imu.size()) {
    throw ShapeError("need one imu orientation per acceleration sample");
  }
  const Mat3 outer = rotation_matrix(calib.inertial_to_vicon);
  std::vector<Vec3> out(a_imu.size());
  for (std::size_t t = 0; t < a_imu.size(); ++t) {
    const Mat3 inner = rotation_matrix(calib.imu_to_inertial[t]);
    Mat3 composed{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        composed[i][j] = outer[i][0] * inner[0][j] + outer[i][1] * inner[1][j] + outer[i][2] * inner[2][j];
    out[t] = rotate(composed, a_imu[t]);
  }
  return out;
}

}  // namespace hiss::preprocess
