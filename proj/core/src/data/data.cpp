#include "hiss/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unistd.h>

#include "hiss/errors.hpp"
#include "hiss/parallel.hpp"
#include "json_util.hpp"

namespace hiss::data {

using detail::Json;

namespace {

constexpr std::uint64_t kMixingStream = 0x6d6978696e67ULL;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double gaussian(std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

struct TaskShape {
  std::size_t dims;
  double extent;     // waypoint box side
  double reference;  // latent magnitude used to scale the sensor model
  bool velocity;     // latent is velocity (else normalized position)
};

TaskShape shape_of(TaskKind kind) {
  switch (kind) {
    case TaskKind::drift_integrator: return {2, 0.1, 0.1, true};
    case TaskKind::slip_rotation: return {1, std::numbers::pi / 2, 1.0, true};
    case TaskKind::joystick_like: return {2, 1.0, 1.0, false};
  }
  return {2, 0.1, 0.1, true};
}

struct Mixing {
  std::vector<std::vector<double>> direction;  // per sensor channel, unit vector over latent dims
  std::vector<double> gain, bias, carrier_hz;
};

Mixing make_mixing(const TaskSpec& spec, std::size_t dims) {
  auto rng = stream(spec.seed, kMixingStream);
  Mixing m;
  for (std::size_t c = 0; c < spec.sensor_dim; ++c) {
    std::vector<double> dir(dims);
    double n2 = 0.0;
    for (auto& x : dir) {
      x = gaussian(rng);
      n2 += x * x;
    }
    for (auto& x : dir) x /= std::sqrt(n2);
    m.direction.push_back(std::move(dir));
    m.gain.push_back(uniform(rng, 0.5, 1.5));
    m.bias.push_back(uniform(rng, -0.5, 0.5));
    m.carrier_hz.push_back(uniform(rng, 0.24, 0.44) * spec.sensor_hz);
  }
  return m;
}

Trajectory make_trajectory(const TaskSpec& spec, const Mixing& mix, std::size_t index) {
  const TaskShape shape = shape_of(spec.kind);
  auto rng = stream(spec.seed, index + 1);
  const double duration = spec.min_duration_s == spec.max_duration_s
                              ? spec.min_duration_s
                              : uniform(rng, spec.min_duration_s, spec.max_duration_s);
  const MotionProfile motion = sample_motion(shape.dims, duration, shape.extent, rng);
  const std::size_t stride = spec.stride();
  const auto ticks = static_cast<std::size_t>(std::floor(duration * spec.output_hz));
  const std::size_t rows = ticks * stride;
  const double dt = 1.0 / spec.sensor_hz;

  auto latent = [&](double t) {
    if (shape.velocity) return motion.velocity(t);
    auto p = motion.position(t);
    for (auto& x : p) x = 2.0 * x / shape.extent - 1.0;
    return p;
  };

  Trajectory traj;
  traj.id = "traj_" + std::to_string(10000 + index).substr(1);
  traj.sensor_hz = spec.sensor_hz;
  traj.output_hz = spec.output_hz;
  traj.task = to_string(spec.kind);
  traj.seed = spec.seed;
  traj.sensor = Series(rows, spec.sensor_dim);
  traj.label = Series(ticks, shape.dims);

  std::vector<double> drift(spec.sensor_dim, 0.0), phase(spec.sensor_dim);
  for (auto& p : phase) p = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  for (std::size_t r = 0; r < rows; ++r) {
    const double t = static_cast<double>(r) * dt;
    const auto x = latent(t);
    double speed = 0.0;
    for (double v : x) speed += (v / shape.reference) * (v / shape.reference);
    speed = std::sqrt(speed);
    for (std::size_t c = 0; c < spec.sensor_dim; ++c) {
      double s;
      if (spec.identity_mixing) {
        s = x[c % shape.dims];
      } else {
        double proj = 0.0;
        for (std::size_t j = 0; j < shape.dims; ++j) proj += mix.direction[c][j] * x[j] / shape.reference;
        s = std::tanh(mix.gain[c] * proj + mix.bias[c]);
      }
      if (spec.drift > 0.0) drift[c] += spec.drift * speed * std::sqrt(dt) * gaussian(rng);
      s += drift[c];
      if (spec.vibration > 0.0) {
        s += spec.vibration * speed * std::sin(2.0 * std::numbers::pi * mix.carrier_hz[c] * t + phase[c]);
      }
      if (spec.noise > 0.0) s += spec.noise * gaussian(rng);
      traj.sensor.at(r, c) = s;
    }
    if ((r + 1) % stride == 0) {
      auto row = traj.label.row(r / stride);
      std::copy(x.begin(), x.end(), row.begin());
    }
  }
  return traj;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::drift_integrator: return "drift-integrator";
    case TaskKind::slip_rotation: return "slip-rotation";
    case TaskKind::joystick_like: return "joystick-like";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& name) {
  for (TaskKind k : {TaskKind::drift_integrator, TaskKind::slip_rotation, TaskKind::joystick_like})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown task '" + name + "'");
}

std::size_t TaskSpec::label_dim() const { return shape_of(kind).dims; }

std::size_t TaskSpec::stride() const {
  const double ratio = sensor_hz / output_hz;
  if (!(ratio >= 1.0) || std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
    throw RateError("sensor rate must be a whole multiple of the output rate");
  }
  return static_cast<std::size_t>(std::round(ratio));
}

void TaskSpec::validate() const {
  if (count < 1) throw ConfigError("trajectory count must be >= 1");
  if (!(min_duration_s > 0.0) || !(max_duration_s >= min_duration_s)) {
    throw ConfigError("duration range must be positive and ordered");
  }
  if (!(sensor_hz > 0.0) || !(output_hz > 0.0)) throw ConfigError("rates must be positive");
  stride();
  if (min_duration_s * output_hz < 1.0) throw ConfigError("trajectories must span at least one output tick");
  if (sensor_dim < 1) throw ConfigError("sensor dim must be >= 1");
  if (noise < 0.0 || drift < 0.0 || vibration < 0.0) throw ConfigError("noise magnitudes must be >= 0");
}

std::string TaskSpec::to_json() const {
  return Json{{"task", to_string(kind)},
              {"count", count},
              {"min_duration_s", min_duration_s},
              {"max_duration_s", max_duration_s},
              {"sensor_hz", sensor_hz},
              {"output_hz", output_hz},
              {"sensor_dim", sensor_dim},
              {"identity_mixing", identity_mixing},
              {"noise", noise},
              {"drift", drift},
              {"vibration", vibration},
              {"seed", seed}}
      .dump();
}

TaskSpec TaskSpec::from_json(const std::string& text) {
  const std::string where = "task";
  const Json j = detail::parse_json(text, where);
  detail::reject_unknown(j, where,
                         {"task", "count", "min_duration_s", "max_duration_s", "sensor_hz", "output_hz",
                          "sensor_dim", "identity_mixing", "noise", "drift", "vibration", "seed"});
  TaskSpec s;
  s.kind = task_kind_from_string(detail::get_or<std::string>(j, "task", to_string(s.kind), where));
  s.count = detail::get_size(j, "count", s.count, where);
  s.min_duration_s = detail::get_or(j, "min_duration_s", s.min_duration_s, where);
  s.max_duration_s = detail::get_or(j, "max_duration_s", s.max_duration_s, where);
  s.sensor_hz = detail::get_or(j, "sensor_hz", s.sensor_hz, where);
  s.output_hz = detail::get_or(j, "output_hz", s.output_hz, where);
  s.sensor_dim = detail::get_size(j, "sensor_dim", s.sensor_dim, where);
  s.identity_mixing = detail::get_or(j, "identity_mixing", s.identity_mixing, where);
  s.noise = detail::get_or(j, "noise", s.noise, where);
  s.drift = detail::get_or(j, "drift", s.drift, where);
  s.vibration = detail::get_or(j, "vibration", s.vibration, where);
  s.seed = detail::get_or<std::uint64_t>(j, "seed", s.seed, where);
  s.validate();
  return s;
}

TaskSpec noiseless_identity_task(std::size_t count, std::uint64_t seed) {
  TaskSpec s;
  s.count = count;
  s.identity_mixing = true;
  s.noise = s.drift = s.vibration = 0.0;
  s.seed = seed;
  return s;
}

std::size_t Trajectory::stride() const {
  const double ratio = sensor_hz / output_hz;
  return static_cast<std::size_t>(std::round(ratio));
}

void Trajectory::validate() const {
  if (sensor.rows != stride() * label.rows) {
    throw AlignmentError("trajectory " + id + " has " + std::to_string(sensor.rows) + " sensor rows for " +
                         std::to_string(label.rows) + " label rows at stride " + std::to_string(stride()));
  }
  for (double v : sensor.values)
    if (!std::isfinite(v)) throw DomainError("trajectory " + id + " has non-finite sensor values");
  for (double v : label.values)
    if (!std::isfinite(v)) throw DomainError("trajectory " + id + " has non-finite labels");
}

std::vector<double> MotionProfile::position(double t) const {
  if (segments.empty()) return waypoints.empty() ? std::vector<double>{} : waypoints.front();
  auto it = std::upper_bound(segments.begin(), segments.end(), t,
                             [](double v, const Segment& s) { return v < s.start; });
  const Segment& s = it == segments.begin() ? segments.front() : *std::prev(it);
  const double tau = std::clamp((t - s.start) / s.duration, 0.0, 1.0);
  const double w = 0.5 * (1.0 - std::cos(std::numbers::pi * tau));
  std::vector<double> p(s.from.size());
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = s.from[j] + w * (s.to[j] - s.from[j]);
  return p;
}

std::vector<double> MotionProfile::velocity(double t) const {
  if (segments.empty()) return std::vector<double>(waypoints.empty() ? 0 : waypoints.front().size(), 0.0);
  auto it = std::upper_bound(segments.begin(), segments.end(), t,
                             [](double v, const Segment& s) { return v < s.start; });
  const Segment& s = it == segments.begin() ? segments.front() : *std::prev(it);
  std::vector<double> v(s.from.size(), 0.0);
  const double tau = (t - s.start) / s.duration;
  if (tau < 0.0 || tau > 1.0) return v;
  const double rate = 0.5 * std::numbers::pi / s.duration * std::sin(std::numbers::pi * tau);
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = rate * (s.to[j] - s.from[j]);
  return v;
}

MotionProfile sample_motion(std::size_t dims, double duration_s, double extent, std::mt19937_64& rng) {
  MotionProfile m;
  m.duration = duration_s;
  const auto n = static_cast<std::size_t>(std::uniform_int_distribution<int>(8, 12)(rng));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p(dims);
    for (auto& x : p) x = uniform(rng, 0.0, extent);
    m.waypoints.push_back(std::move(p));
  }
  // Raw pause/move durations, then scaled so the profile fills the duration.
  std::vector<double> raw;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    raw.push_back(uniform(rng, 1.0, 4.0));
    double dist = 0.0;
    for (std::size_t j = 0; j < dims; ++j) {
      const double d = m.waypoints[i + 1][j] - m.waypoints[i][j];
      dist += d * d;
    }
    raw.push_back(std::max(0.4, std::sqrt(dist) / extent * uniform(rng, 0.8, 1.6)));
  }
  raw.push_back(uniform(rng, 1.0, 4.0));
  const double first = std::clamp(raw.front(), 0.6, std::max(0.6, 0.15 * duration_s));
  double rest = 0.0;
  for (std::size_t i = 1; i < raw.size(); ++i) rest += raw[i];
  const double scale = std::max(duration_s - first, 1e-3) / rest;

  double t = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double len = i == 0 ? first : raw[i] * scale;
    const std::size_t at = i / 2;
    MotionProfile::Segment s;
    s.start = t;
    s.duration = len;
    s.from = m.waypoints[std::min(at, n - 1)];
    s.to = (i % 2 == 1) ? m.waypoints[at + 1] : s.from;
    m.segments.push_back(std::move(s));
    t += len;
  }
  return m;
}

std::vector<Trajectory> generate(const TaskSpec& spec) {
  spec.validate();
  const Mixing mix = make_mixing(spec, spec.label_dim());
  std::vector<Trajectory> out(spec.count);
  parallel_for(spec.count, max_workers(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = make_trajectory(spec, mix, i);
  });
  return out;
}

std::vector<std::string> DatasetManifest::ids() const {
  std::vector<std::string> out;
  for (const auto& e : trajectories) out.push_back(e.id);
  return out;
}

std::string DatasetManifest::to_json() const {
  Json entries = Json::array();
  for (const auto& e : trajectories) {
    entries.push_back(
        Json{{"id", e.id}, {"file", e.file}, {"sensor_rows", e.sensor_rows}, {"label_rows", e.label_rows}});
  }
  Json j{{"format", "hiss-dataset/1"},
         {"task", task},
         {"sensor_hz", sensor_hz},
         {"output_hz", output_hz},
         {"sensor_dim", sensor_dim},
         {"label_dim", label_dim},
         {"seed", seed},
         {"generator", detail::parse_json(generator.empty() ? "{}" : generator, "generator")},
         {"trajectories", entries},
         {"split", Json{{"fraction", split.fraction}, {"seed", split.seed}, {"train", split.train}, {"val", split.val}}}};
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError(std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    DatasetManifest m;
    if (j.value("format", std::string()) != "hiss-dataset/1") throw ManifestError("unsupported manifest format");
    m.task = j.at("task").get<std::string>();
    m.sensor_hz = j.at("sensor_hz").get<double>();
    m.output_hz = j.at("output_hz").get<double>();
    m.sensor_dim = j.at("sensor_dim").get<std::size_t>();
    m.label_dim = j.at("label_dim").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.generator = j.at("generator").dump();
    for (const auto& e : j.at("trajectories")) {
      m.trajectories.push_back(ManifestEntry{e.at("id").get<std::string>(), e.at("file").get<std::string>(),
                                             e.at("sensor_rows").get<std::size_t>(),
                                             e.at("label_rows").get<std::size_t>()});
    }
    const auto& s = j.at("split");
    m.split.fraction = s.at("fraction").get<double>();
    m.split.seed = s.at("seed").get<std::uint64_t>();
    m.split.train = s.at("train").get<std::vector<std::string>>();
    m.split.val = s.at("val").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
}

SplitAssignment split(const std::vector<std::string>& ids, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw SplitError("split fraction must lie in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  if (n_train == 0 || n_train >= ids.size()) {
    throw SplitError("split of " + std::to_string(ids.size()) + " trajectories at fraction " +
                     std::to_string(fraction) + " leaves an empty side");
  }
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng() % (i + 1)]);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<long>(n_train));
  std::vector<std::size_t> val(order.begin() + static_cast<long>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  SplitAssignment out{fraction, seed, {}, {}};
  for (auto i : train) out.train.push_back(ids[i]);
  for (auto i : val) out.val.push_back(ids[i]);
  return out;
}

SplitAssignment split(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
  return split(manifest.ids(), fraction, seed);
}

std::vector<std::string> subsample(const std::vector<std::string>& ids, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("dataset fraction must lie in (0, 1]");
  if (fraction == 1.0) return ids;
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size()))));
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng() % (i + 1)]);
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());
  std::vector<std::string> out;
  for (auto i : order) out.push_back(ids[i]);
  return out;
}

const Trajectory& Dataset::get(const std::string& id) const {
  for (const auto& t : trajectories)
    if (t.id == id) return t;
  throw ManifestError("no trajectory with id " + id);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void store_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  traj.validate();
  const std::size_t stride = traj.stride();
  std::string out = "time";
  for (std::size_t c = 0; c < traj.sensor.cols; ++c) out += ",s" + std::to_string(c);
  for (std::size_t c = 0; c < traj.label.cols; ++c) out += ",y" + std::to_string(c);
  out += '\n';
  for (std::size_t r = 0; r < traj.sensor.rows; ++r) {
    out += format_double(static_cast<double>(r) / traj.sensor_hz);
    for (double v : traj.sensor.row(r)) {
      out += ',';
      out += format_double(v);
    }
    const bool tick = (r + 1) % stride == 0;
    for (std::size_t c = 0; c < traj.label.cols; ++c) {
      out += ',';
      if (tick) out += format_double(traj.label.at(r / stride, c));
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

Trajectory load_trajectory(const std::filesystem::path& path, double sensor_hz, double output_hz,
                           std::size_t label_dim) {
  if (!std::filesystem::exists(path)) throw IoError("missing trajectory file " + path.string());
  const std::string text = read_file(path);
  const std::string name = path.filename().string();
  if (text.empty() || text.back() != '\n') throw ParseError(name + ": file is truncated", 0);

  Trajectory traj;
  traj.id = path.stem().string();
  traj.sensor_hz = sensor_hz;
  traj.output_hz = output_hz;
  const std::size_t stride = traj.stride();

  std::size_t pos = text.find('\n');
  const std::string header = text.substr(0, pos);
  const std::size_t columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  if (header.rfind("time,", 0) != 0 || columns < 2 + label_dim) {
    throw ParseError(name + ": unexpected header", 1);
  }
  const std::size_t sensor_dim = columns - 1 - label_dim;
  std::vector<double> sensor, label;
  std::size_t line = 1, row = 0;
  ++pos;
  while (pos < text.size()) {
    ++line;
    const std::size_t end = text.find('\n', pos);
    const char* p = text.data() + pos;
    const char* stop = text.data() + end;
    const bool tick = (row + 1) % stride == 0;
    for (std::size_t c = 0; c < columns; ++c) {
      const char* cell_end = std::find(p, stop, ',');
      if (c + 1 < columns && cell_end == stop) throw ParseError(name + ": too few columns", line);
      if (c + 1 == columns && cell_end != stop) throw ParseError(name + ": too many columns", line);
      const bool is_label = c >= 1 + sensor_dim;
      if (is_label && !tick) {
        if (cell_end != p) throw ParseError(name + ": label value on a non-tick row", line);
      } else {
        double v = 0.0;
        const auto res = std::from_chars(p, cell_end, v);
        if (res.ec != std::errc() || res.ptr != cell_end) {
          throw ParseError(name + ": bad number in column " + std::to_string(c + 1), line);
        }
        if (c >= 1 && !is_label) sensor.push_back(v);
        if (is_label) label.push_back(v);
      }
      p = cell_end + 1;
    }
    ++row;
    pos = end + 1;
  }
  if (row % stride != 0) throw ParseError(name + ": file is truncated mid-tick", line);
  traj.sensor = Series(row, sensor_dim, std::move(sensor));
  traj.label = Series(row / stride, label_dim, std::move(label));
  return traj;
}

DatasetManifest store_dataset(const std::filesystem::path& dir, const TaskSpec& spec,
                              const std::vector<Trajectory>& trajectories, double split_fraction) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.task = to_string(spec.kind);
  m.sensor_hz = spec.sensor_hz;
  m.output_hz = spec.output_hz;
  m.sensor_dim = spec.sensor_dim;
  m.label_dim = spec.label_dim();
  m.seed = spec.seed;
  m.generator = spec.to_json();
  for (const auto& t : trajectories) {
    m.trajectories.push_back(ManifestEntry{t.id, t.id + ".csv", t.sensor.rows, t.label.rows});
  }
  parallel_for(trajectories.size(), max_workers(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) store_trajectory(dir / m.trajectories[i].file, trajectories[i]);
  });
  if (trajectories.size() >= 2) m.split = split(m, split_fraction, spec.seed);
  write_file_atomic(dir / "manifest.json", m.to_json());
  return m;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw IoError("no manifest.json in " + dir.string());
  Dataset ds;
  ds.manifest = DatasetManifest::from_json(read_file(manifest_path));
  for (const auto& e : ds.manifest.trajectories) {
    if (!std::filesystem::exists(dir / e.file)) throw ManifestError("manifest references missing file " + e.file);
  }
  ds.trajectories.resize(ds.manifest.trajectories.size());
  parallel_for(ds.trajectories.size(), max_workers(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& e = ds.manifest.trajectories[i];
      Trajectory t = load_trajectory(dir / e.file, ds.manifest.sensor_hz, ds.manifest.output_hz,
                                     ds.manifest.label_dim);
      if (t.sensor.rows != e.sensor_rows || t.label.rows != e.label_rows) {
        throw ParseError(e.file + ": expected " + std::to_string(e.sensor_rows) + " rows, found " +
                             std::to_string(t.sensor.rows) + " (truncated?)",
                         t.sensor.rows + 1);
      }
      if (t.sensor.cols != ds.manifest.sensor_dim) throw ParseError(e.file + ": wrong sensor width", 1);
      t.id = e.id;
      t.task = ds.manifest.task;
      t.seed = ds.manifest.seed;
      ds.trajectories[i] = std::move(t);
    }
  });
  return ds;
}

}  // namespace hiss::data
