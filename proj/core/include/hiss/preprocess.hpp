#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "hiss/series.hpp"

namespace hiss::preprocess {

/// Irregularly timed samples as recorded.
struct RawChannelSeries {
  std::vector<double> timestamps;  // seconds, strictly increasing
  Series values;
  double nominal_hz = 0.0;

  void validate() const;
};

/// Linear interpolation at arbitrary times inside the recorded span.
Series resample_at(const RawChannelSeries& series, const std::vector<double>& times);

/// Uniform grid from the first timestamp up to the last one.
Series resample(const RawChannelSeries& series, double target_hz);

struct AlignedPair {
  Series sensor;  // stride * ticks rows
  Series label;   // ticks rows
  std::size_t stride = 1;
};

/// Sensor rows at t0 + r/sensor_hz; label tick i at the time of sensor row
/// (i+1)*stride - 1, so every tick closes a whole number of sensor rows.
AlignedPair align(const RawChannelSeries& sensor, const RawChannelSeries& label, double sensor_hz,
                  double output_hz);

inline constexpr std::size_t kRestingWarmup = 25;

/// Removes the mean of the first `warmup` rows from every row.
Series subtract_resting(const Series& series, std::size_t warmup = kRestingWarmup);

/// [x_t, x_t - x_{t-1}] per row; the first difference is zero.
Series append_diffs(const Series& series);

/// Per-dimension z-scoring. Dimensions with zero spread are passed through.
class NormStats {
 public:
  NormStats() = default;
  NormStats(std::vector<double> mean, std::vector<double> stddev);

  static NormStats fit(const std::vector<const Series*>& training);

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }
  const std::vector<bool>& constant() const { return constant_; }
  std::size_t dims() const { return mean_.size(); }
  /// One warning line per constant dimension.
  std::vector<std::string> warnings() const;

  Series apply(const Series& series) const;
  Series denormalize(const Series& series) const;

  std::string to_json() const;
  static NormStats from_json(const std::string& text);

  bool operator==(const NormStats&) const = default;

 private:
  void check(const Series& series) const;

  std::vector<double> mean_;
  std::vector<double> std_;
  std::vector<bool> constant_;
};

struct FilterSpec {
  int order = 5;
  double cutoff_hz = 2.5;
  double sample_hz = 50.0;

  void validate() const;
};

/// One second-order (or first-order when b2 = a2 = 0) section, a0 = 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

/// Digital low-pass Butterworth from the prewarped bilinear transform,
/// stored as cascaded sections each with unit DC gain.
class ButterworthFilter {
 public:
  explicit ButterworthFilter(const FilterSpec& spec);

  const FilterSpec& spec() const { return spec_; }
  const std::vector<Biquad>& sections() const { return sections_; }
  /// Expanded H(z) = B(z^-1) / A(z^-1).
  void transfer_function(std::vector<double>& numerator, std::vector<double>& denominator) const;
  std::vector<std::complex<double>> poles() const;
  std::complex<double> response(double freq_hz) const;
  /// |H|^2 of the digital design: 1 / (1 + (tan(pi f/fs) / tan(pi fc/fs))^(2n)).
  double analytic_gain(double freq_hz) const;

  /// Causal single pass over each column from a zero state.
  Series filter(const Series& series) const;
  std::vector<double> filter(const std::vector<double>& signal) const;

 private:
  FilterSpec spec_;
  std::vector<Biquad> sections_;
};

Series butterworth_lowpass(const Series& series, const FilterSpec& spec);

/// (w, x, y, z).
struct Quaternion {
  double w = 1, x = 0, y = 0, z = 0;

  static Quaternion from_xyzw(double x, double y, double z, double w) { return {w, x, y, z}; }
  double norm() const;
};

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Throws CalibError when the quaternion is not unit within 1e-6.
Mat3 rotation_matrix(const Quaternion& q);
Vec3 rotate(const Mat3& r, const Vec3& v);

struct FrameCalib {
  std::vector<Quaternion> imu_to_inertial;  // one per timestep
  Quaternion inertial_to_vicon;              // fixed per sensor
};

/// a_ref = R(inertial->vicon) R(imu->inertial) a_imu, per step.
std::vector<Vec3> imu_to_reference(const std::vector<Vec3>& a_imu, const FrameCalib& calib);

}  // namespace hiss::preprocess
