#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoseg/core.hpp"

namespace protoseg {

enum class ParseErrorKind { kBadMagic, kBadVersion, kTruncated, kNonFinite, kEmpty, kMalformed };

struct ParseError : std::runtime_error {
  ParseError(ParseErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind(kind) {}
  ParseErrorKind kind;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr char kSceneMagic[4] = {'P', 'C', 'I', 'S'};
inline constexpr std::uint16_t kSceneVersion = 1;

// Binary scene layout, little-endian:
//   "PCIS" | u16 version | u32 N | u32 I | u8 has_labels
//   N*I float32 row-major | N int32 labels (iff has_labels)
// Channels are stored as float32; positions are recovered from channels 0..2.
void save_scene(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_scene(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_scene(const PointCloud& cloud);
PointCloud decode_scene(const std::vector<std::uint8_t>& bytes);

// ASCII twin: one row per point, `channels` floats then an optional integer
// label. Values are rounded to float32 on load so both formats agree.
void save_scene_ascii(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_scene_ascii(const std::filesystem::path& path,
                            Eigen::Index channels = kDefaultChannels);

/// Dispatches on the magic bytes: binary when "PCIS", ASCII otherwise.
PointCloud load_scene_any(const std::filesystem::path& path,
                          Eigen::Index channels = kDefaultChannels);

// ---------------------------------------------------------------------------
// Synthetic rooms

enum class ShapeKind { kBox, kEllipsoid, kPlane };

struct SyntheticSceneSpec {
  Eigen::Vector3d room_extent{2.0, 2.0, 1.5};
  int n_instances = 5;
  int min_points_per_instance = 200;
  int max_points_per_instance = 400;
  std::vector<ShapeKind> shape_kinds{ShapeKind::kBox, ShapeKind::kEllipsoid, ShapeKind::kPlane};
  double noise_sigma = 0.01;
  double min_half_size = 0.12;  // footprint half-extent range, meters
  double max_half_size = 0.25;
  double min_gap = 0.15;        // clearance between footprints; at least 3 * noise_sigma
  double color_jitter = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Rooms of separated objects, one instance label per object. Throws
/// GenerationError when the objects cannot be placed inside the room.
PointCloud generate_scene(const SyntheticSceneSpec& spec);

// ---------------------------------------------------------------------------
// Prototype and prediction dumps

/// Writes `prototype_XXX.txt` per column with `index score` lines, scores
/// min-max normalized to [0,1]; a constant column maps to all zeros.
std::vector<std::filesystem::path> dump_prototypes(const PointCloud& cloud,
                                                   const PrototypeMatrix& prototypes,
                                                   const std::filesystem::path& out_dir);

/// Min-max normalization used by dump_prototypes.
Vector normalize_scores(const Eigen::Ref<const Vector>& column);

struct PredictedInstance {
  double score = 0.0;
  std::vector<Eigen::Index> points;
};

/// One line per instance: score then point indices.
void write_predictions(std::ostream& out, const std::vector<PredictedInstance>& predictions);
void save_predictions(const std::vector<PredictedInstance>& predictions,
                      const std::filesystem::path& path);
std::vector<PredictedInstance> load_predictions(const std::filesystem::path& path);

}  // namespace protoseg
