#include "protoseg/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "binary.hpp"
#include "protoseg/rng.hpp"

namespace protoseg {

namespace detail {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace detail

namespace {

constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 4 + 1;

std::ofstream open_text(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Binary scenes

std::vector<std::uint8_t> encode_scene(const PointCloud& cloud) {
  cloud.validate();
  detail::ByteWriter w;
  w.bytes(kSceneMagic, 4);
  w.uint(kSceneVersion);
  w.uint(static_cast<std::uint32_t>(cloud.size()));
  w.uint(static_cast<std::uint32_t>(cloud.channel_count()));
  w.uint(static_cast<std::uint8_t>(cloud.has_labels() ? 1 : 0));
  for (Eigen::Index r = 0; r < cloud.size(); ++r) {
    for (Eigen::Index c = 0; c < cloud.channel_count(); ++c) {
      w.f32(static_cast<float>(cloud.channels(r, c)));
    }
  }
  if (cloud.has_labels()) {
    for (int label : *cloud.instance_labels) {
      w.i32(label);
    }
  }
  return std::move(w.buffer());
}

PointCloud decode_scene(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (!r.has(4)) {
    throw ParseError(ParseErrorKind::kTruncated, "scene: file shorter than magic");
  }
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kSceneMagic)) {
    throw ParseError(ParseErrorKind::kBadMagic, "scene: bad magic, expected PCIS");
  }
  if (!r.has(kHeaderBytes - 4)) {
    throw ParseError(ParseErrorKind::kTruncated, "scene: truncated header");
  }
  const auto version = r.uint<std::uint16_t>();
  if (version != kSceneVersion) {
    throw ParseError(ParseErrorKind::kBadVersion,
                     "scene: unsupported version " + std::to_string(version));
  }
  const auto n = r.uint<std::uint32_t>();
  const auto channels = r.uint<std::uint32_t>();
  const auto has_labels = r.uint<std::uint8_t>();
  if (n == 0) {
    throw ParseError(ParseErrorKind::kEmpty, "scene: N = 0");
  }
  if (channels < 3 || has_labels > 1) {
    throw ParseError(ParseErrorKind::kMalformed, "scene: invalid header fields");
  }
  const std::uint64_t expected =
      std::uint64_t{n} * channels * 4 + (has_labels ? std::uint64_t{n} * 4 : 0);
  if (r.remaining() != expected) {
    throw ParseError(ParseErrorKind::kTruncated,
                     "scene: payload has " + std::to_string(r.remaining()) + " bytes, header implies " +
                         std::to_string(expected));
  }

  Matrix values(n, channels);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t c = 0; c < channels; ++c) {
      const float v = r.f32();
      if (!std::isfinite(v)) {
        throw ParseError(ParseErrorKind::kNonFinite,
                         "scene: non-finite value at row " + std::to_string(i));
      }
      values(i, c) = v;
    }
  }
  std::optional<std::vector<int>> labels;
  if (has_labels) {
    labels.emplace(n);
    for (auto& l : *labels) {
      l = r.i32();
    }
  }
  return PointCloud::from_channels(std::move(values), std::move(labels));
}

void save_scene(const PointCloud& cloud, const std::filesystem::path& path) {
  detail::write_file(path.string(), encode_scene(cloud));
}

PointCloud load_scene(const std::filesystem::path& path) {
  return decode_scene(detail::read_file(path.string()));
}

// ---------------------------------------------------------------------------
// ASCII scenes

void save_scene_ascii(const PointCloud& cloud, const std::filesystem::path& path) {
  cloud.validate();
  auto out = open_text(path);
  char buf[32];
  for (Eigen::Index r = 0; r < cloud.size(); ++r) {
    for (Eigen::Index c = 0; c < cloud.channel_count(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(cloud.channels(r, c))));
      if (c > 0) out << ' ';
      out << buf;
    }
    if (cloud.has_labels()) {
      out << ' ' << (*cloud.instance_labels)[static_cast<std::size_t>(r)];
    }
    out << '\n';
  }
}

PointCloud load_scene_ascii(const std::filesystem::path& path, Eigen::Index channels) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<double> values;
  std::vector<int> labels;
  std::optional<bool> with_labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream row(line);
    std::vector<std::string> tokens{std::istream_iterator<std::string>(row),
                                    std::istream_iterator<std::string>()};
    if (tokens.empty()) {
      continue;
    }
    const auto n_tokens = static_cast<Eigen::Index>(tokens.size());
    if (n_tokens != channels && n_tokens != channels + 1) {
      throw ParseError(ParseErrorKind::kMalformed,
                       "scene (ascii): line " + std::to_string(line_no) + " has " +
                           std::to_string(tokens.size()) + " fields");
    }
    const bool row_labeled = n_tokens == channels + 1;
    if (with_labels && *with_labels != row_labeled) {
      throw ParseError(ParseErrorKind::kMalformed,
                       "scene (ascii): inconsistent label column at line " + std::to_string(line_no));
    }
    with_labels = row_labeled;
    for (Eigen::Index c = 0; c < channels; ++c) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(tokens[static_cast<std::size_t>(c)], &used);
        if (used != tokens[static_cast<std::size_t>(c)].size()) throw std::invalid_argument("");
      } catch (const std::out_of_range&) {
        throw ParseError(ParseErrorKind::kNonFinite,
                         "scene (ascii): out-of-range value at line " + std::to_string(line_no));
      } catch (const std::invalid_argument&) {
        throw ParseError(ParseErrorKind::kMalformed,
                         "scene (ascii): bad number at line " + std::to_string(line_no));
      }
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) {
        throw ParseError(ParseErrorKind::kNonFinite,
                         "scene (ascii): non-finite value at line " + std::to_string(line_no));
      }
      values.push_back(f);
    }
    if (row_labeled) {
      try {
        std::size_t used = 0;
        const auto& tok = tokens.back();
        labels.push_back(std::stoi(tok, &used));
        if (used != tok.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ParseError(ParseErrorKind::kMalformed,
                         "scene (ascii): bad label at line " + std::to_string(line_no));
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(values.size()) / channels;
  if (n == 0) {
    throw ParseError(ParseErrorKind::kEmpty, "scene (ascii): no points");
  }
  Matrix m(n, channels);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      m(r, c) = values[static_cast<std::size_t>(r * channels + c)];
    }
  }
  std::optional<std::vector<int>> maybe_labels;
  if (with_labels.value_or(false)) {
    maybe_labels = std::move(labels);
  }
  return PointCloud::from_channels(std::move(m), std::move(maybe_labels));
}

PointCloud load_scene_any(const std::filesystem::path& path, Eigen::Index channels) {
  const auto bytes = detail::read_file(path.string());
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, kSceneMagic)) {
    return decode_scene(bytes);
  }
  return load_scene_ascii(path, channels);
}

// ---------------------------------------------------------------------------
// Synthetic rooms

void SyntheticSceneSpec::validate() const {
  if (n_instances < 1) throw ArgumentError("synthetic scene: n_instances must be >= 1");
  if (noise_sigma < 0.0) throw ArgumentError("synthetic scene: noise_sigma must be >= 0");
  if (min_points_per_instance < 1 || max_points_per_instance < min_points_per_instance) {
    throw ArgumentError("synthetic scene: invalid points_per_instance range");
  }
  if (shape_kinds.empty()) throw ArgumentError("synthetic scene: no shape kinds");
  if (!(room_extent.array() > 0.0).all()) throw ArgumentError("synthetic scene: room_extent must be positive");
  if (min_half_size <= 0.0 || max_half_size < min_half_size) {
    throw ArgumentError("synthetic scene: invalid half-size range");
  }
  if (min_gap < 0.0 || color_jitter < 0.0) throw ArgumentError("synthetic scene: negative gap or jitter");
}

namespace {

struct Footprint {
  Eigen::Vector2d center;
  Eigen::Vector2d half;
};

bool separated(const Footprint& a, const Footprint& b, double gap) {
  const Eigen::Vector2d clearance =
      (a.center - b.center).cwiseAbs() - (a.half + b.half);
  return clearance.x() >= gap || clearance.y() >= gap;
}

Eigen::Vector3d sample_shape(ShapeKind kind, const Eigen::Vector3d& center,
                             const Eigen::Vector3d& half, Rng& rng) {
  switch (kind) {
    case ShapeKind::kBox: {
      // Surface point, faces chosen proportionally to area.
      const double ax = half.y() * half.z();
      const double ay = half.x() * half.z();
      const double az = half.x() * half.y();
      const double pick = rng.uniform() * (ax + ay + az);
      Eigen::Vector3d u(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      if (pick < ax) u.x() = side;
      else if (pick < ax + ay) u.y() = side;
      else u.z() = side;
      return center + u.cwiseProduct(half);
    }
    case ShapeKind::kEllipsoid: {
      Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
      double norm = d.norm();
      while (norm < 1e-12) {
        d = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        norm = d.norm();
      }
      return center + (d / norm).cwiseProduct(half);
    }
    case ShapeKind::kPlane:
      return center + Eigen::Vector3d(rng.uniform(-1.0, 1.0) * half.x(),
                                      rng.uniform(-1.0, 1.0) * half.y(), 0.0);
  }
  return center;
}

}  // namespace

PointCloud generate_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Eigen::Vector3d& room = spec.room_extent;
  const double gap = std::max(spec.min_gap, 3.0 * spec.noise_sigma);
  const double margin = 3.0 * spec.noise_sigma;
  constexpr int kMaxAttempts = 5000;

  std::vector<Footprint> placed;
  std::vector<Eigen::Vector3d> centers, halves;
  std::vector<ShapeKind> kinds;
  for (int inst = 0; inst < spec.n_instances; ++inst) {
    const ShapeKind kind = spec.shape_kinds[rng.below(spec.shape_kinds.size())];
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      Footprint f;
      f.half = Eigen::Vector2d(rng.uniform(spec.min_half_size, spec.max_half_size),
                               rng.uniform(spec.min_half_size, spec.max_half_size));
      const Eigen::Vector2d lo = f.half.array() + margin;
      const Eigen::Vector2d hi = room.head<2>() - f.half - Eigen::Vector2d::Constant(margin);
      if ((hi.array() < lo.array()).any()) {
        continue;
      }
      f.center = Eigen::Vector2d(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()));
      ok = std::all_of(placed.begin(), placed.end(),
                       [&](const Footprint& other) { return separated(f, other, gap); });
      if (!ok) {
        continue;
      }
      const double max_height = std::max(room.z() - 2.0 * margin, 1e-3);
      double half_z = std::min(rng.uniform(spec.min_half_size, spec.max_half_size), max_height / 2.0);
      double center_z = margin + half_z;
      if (kind == ShapeKind::kPlane) {
        half_z = 0.0;
        center_z = rng.uniform(margin, room.z() - margin);
      }
      placed.push_back(f);
      centers.emplace_back(f.center.x(), f.center.y(), center_z);
      halves.emplace_back(f.half.x(), f.half.y(), half_z);
      kinds.push_back(kind);
    }
    if (!ok) {
      throw GenerationError("synthetic scene: cannot fit instance " + std::to_string(inst) +
                            " inside room " + std::to_string(room.x()) + "x" +
                            std::to_string(room.y()));
    }
  }

  std::vector<Eigen::Matrix<double, 1, 9>> rows;
  std::vector<int> labels;
  for (int inst = 0; inst < spec.n_instances; ++inst) {
    const auto count = spec.min_points_per_instance +
                       static_cast<int>(rng.below(static_cast<std::uint64_t>(
                           spec.max_points_per_instance - spec.min_points_per_instance + 1)));
    const Eigen::Vector3d base_color(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
    for (int p = 0; p < count; ++p) {
      Eigen::Vector3d xyz = sample_shape(kinds[inst], centers[inst], halves[inst], rng);
      xyz += spec.noise_sigma * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
      xyz = xyz.cwiseMax(Eigen::Vector3d::Zero()).cwiseMin(room);
      Eigen::Vector3d rgb = base_color + spec.color_jitter *
                                             Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
      rgb = rgb.cwiseMax(0.0).cwiseMin(1.0);
      const Eigen::Vector3d normalized = xyz.cwiseQuotient(room).cwiseMax(0.0).cwiseMin(1.0);
      Eigen::Matrix<double, 1, 9> row;
      row << xyz.transpose(), rgb.transpose(), normalized.transpose();
      rows.push_back(row);
      labels.push_back(inst);
    }
  }

  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  // Round through float32 so generated clouds equal their saved form.
  Matrix channels(static_cast<Eigen::Index>(rows.size()), 9);
  std::vector<int> shuffled_labels(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    channels.row(static_cast<Eigen::Index>(i)) =
        rows[order[i]].cast<float>().cast<double>();
    shuffled_labels[i] = labels[order[i]];
  }
  return PointCloud::from_channels(std::move(channels), std::move(shuffled_labels));
}

// ---------------------------------------------------------------------------
// Dumps

Vector normalize_scores(const Eigen::Ref<const Vector>& column) {
  const double lo = column.minCoeff();
  const double hi = column.maxCoeff();
  if (!(hi > lo)) {
    return Vector::Zero(column.size());
  }
  return ((column.array() - lo) / (hi - lo)).matrix();
}

std::vector<std::filesystem::path> dump_prototypes(const PointCloud& cloud,
                                                   const PrototypeMatrix& prototypes,
                                                   const std::filesystem::path& out_dir) {
  if (prototypes.values.rows() != cloud.size()) {
    throw ShapeError("dump_prototypes: prototype matrix " +
                     shape_string(prototypes.values.rows(), prototypes.values.cols()) + " for " +
                     std::to_string(cloud.size()) + " points");
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  char name[32];
  char buf[32];
  for (Eigen::Index m = 0; m < prototypes.values.cols(); ++m) {
    std::snprintf(name, sizeof name, "prototype_%03d.txt", static_cast<int>(m));
    const auto path = out_dir / name;
    auto out = open_text(path);
    const Vector scores = normalize_scores(prototypes.values.col(m));
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6f", scores(i));
      out << i << ' ' << buf << '\n';
    }
    written.push_back(path);
  }
  return written;
}

void write_predictions(std::ostream& out, const std::vector<PredictedInstance>& predictions) {
  char buf[32];
  for (const auto& p : predictions) {
    std::snprintf(buf, sizeof buf, "%.6f", p.score);
    out << buf;
    for (auto idx : p.points) {
      out << ' ' << idx;
    }
    out << '\n';
  }
}

void save_predictions(const std::vector<PredictedInstance>& predictions,
                      const std::filesystem::path& path) {
  auto out = open_text(path);
  write_predictions(out, predictions);
}

std::vector<PredictedInstance> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<PredictedInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream row(line);
    PredictedInstance p;
    if (!(row >> p.score)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ParseError(ParseErrorKind::kMalformed, "predictions: bad score at line " + std::to_string(line_no));
    }
    long long idx = 0;
    while (row >> idx) {
      if (idx < 0) {
        throw ParseError(ParseErrorKind::kMalformed,
                         "predictions: negative index at line " + std::to_string(line_no));
      }
      p.points.push_back(static_cast<Eigen::Index>(idx));
    }
    if (!row.eof()) {
      throw ParseError(ParseErrorKind::kMalformed, "predictions: bad index at line " + std::to_string(line_no));
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace protoseg
