#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hiss/series.hpp"

namespace hiss::data {

enum class TaskKind { drift_integrator, slip_rotation, joystick_like };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::drift_integrator;
  std::size_t count = 200;
  double min_duration_s = 9.0;
  double max_duration_s = 60.0;
  double sensor_hz = 50.0;
  double output_hz = 5.0;
  std::size_t sensor_dim = 30;
  bool identity_mixing = false;  // sensor channel c copies latent channel c mod label_dim
  double noise = 0.05;           // white measurement noise
  double drift = 0.5;            // random-walk step per sqrt(second) at reference speed
  double vibration = 0.3;        // speed-modulated high-frequency carrier amplitude
  std::uint64_t seed = 7;

  std::size_t label_dim() const;
  std::size_t stride() const;
  void validate() const;
  std::string to_json() const;
  static TaskSpec from_json(const std::string& text);
};

/// Noiseless task whose sensor channels copy the label signal.
TaskSpec noiseless_identity_task(std::size_t count, std::uint64_t seed);

struct Trajectory {
  std::string id;
  double sensor_hz = 50.0;
  double output_hz = 5.0;
  Series sensor;  // stride * T_o rows
  Series label;   // T_o rows
  std::string task;
  std::uint64_t seed = 0;

  std::size_t stride() const;
  void validate() const;
  bool operator==(const Trajectory&) const = default;
};

/// Piecewise latent motion: pauses and straight moves between waypoints,
/// starting at rest.
struct MotionProfile {
  struct Segment {
    double start = 0.0;
    double duration = 0.0;
    std::vector<double> from;
    std::vector<double> to;  // equal to `from` for a pause
  };
  std::vector<std::vector<double>> waypoints;
  std::vector<Segment> segments;
  double duration = 0.0;

  std::vector<double> position(double t) const;
  std::vector<double> velocity(double t) const;
};

MotionProfile sample_motion(std::size_t dims, double duration_s, double extent, std::mt19937_64& rng);

/// Deterministic in spec (including the seed) and independent of worker count.
std::vector<Trajectory> generate(const TaskSpec& spec);

struct SplitAssignment {
  double fraction = 0.8;
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
};

struct ManifestEntry {
  std::string id;
  std::string file;
  std::size_t sensor_rows = 0;
  std::size_t label_rows = 0;
};

struct DatasetManifest {
  std::string task;
  double sensor_hz = 50.0;
  double output_hz = 5.0;
  std::size_t sensor_dim = 0;
  std::size_t label_dim = 0;
  std::uint64_t seed = 0;
  std::string generator;  // TaskSpec JSON
  std::vector<ManifestEntry> trajectories;
  SplitAssignment split;

  std::vector<std::string> ids() const;
  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

/// Seeded Fisher-Yates split at trajectory granularity; round(f * n) train ids.
SplitAssignment split(const std::vector<std::string>& ids, double fraction, std::uint64_t seed);
SplitAssignment split(const DatasetManifest& manifest, double fraction, std::uint64_t seed);

/// Seeded subset of round(fraction * n) ids (at least one), original order kept.
std::vector<std::string> subsample(const std::vector<std::string>& ids, double fraction, std::uint64_t seed);

struct Dataset {
  DatasetManifest manifest;
  std::vector<Trajectory> trajectories;

  const Trajectory& get(const std::string& id) const;
};

/// CSV at sensor rate: time, sensor channels, then label channels filled
/// only on tick rows.
void store_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& path, double sensor_hz, double output_hz,
                           std::size_t label_dim);

/// Writes manifest.json and one CSV per trajectory, each via temp-then-rename.
DatasetManifest store_dataset(const std::filesystem::path& dir, const TaskSpec& spec,
                              const std::vector<Trajectory>& trajectories, double split_fraction = 0.8);
Dataset load_dataset(const std::filesystem::path& dir);

/// Replaces `path` atomically with `content`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace hiss::data
