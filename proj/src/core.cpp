#include "protoseg/core.hpp"

#include <numbers>

#include "protoseg/rng.hpp"

namespace protoseg {

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

PointCloud PointCloud::from_channels(Matrix channels, std::optional<std::vector<int>> labels) {
  if (channels.cols() < 3) {
    throw ShapeError("point cloud needs at least 3 channels, got " +
                     shape_string(channels.rows(), channels.cols()));
  }
  PointCloud cloud;
  cloud.positions = channels.leftCols<3>();
  cloud.channels = std::move(channels);
  cloud.instance_labels = std::move(labels);
  return cloud;
}

void PointCloud::validate() const {
  if (positions.rows() < 1) {
    throw ArgumentError("point cloud must contain at least one point");
  }
  if (channels.rows() != positions.rows()) {
    throw ShapeError("channels " + shape_string(channels.rows(), channels.cols()) +
                     " disagree with positions " + shape_string(positions.rows(), 3));
  }
  if (!channels.allFinite() || !positions.allFinite()) {
    throw ArgumentError("point cloud contains non-finite values");
  }
  if (channels.cols() >= kDefaultChannels) {
    const auto unit = channels.middleCols(3, 6);
    if ((unit.array() < 0.0).any() || (unit.array() > 1.0).any()) {
      throw ArgumentError("RGB and normalized-location channels must lie in [0,1]");
    }
  }
  if (instance_labels && static_cast<Eigen::Index>(instance_labels->size()) != size()) {
    throw ShapeError("instance_labels has " + std::to_string(instance_labels->size()) +
                     " entries for " + std::to_string(size()) + " points");
  }
}

// ---------------------------------------------------------------------------

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ULL;
  return mix64(state_);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  std::uint64_t x = next_u64();
  while (x >= limit) {
    x = next_u64();
  }
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(mix64(state_ ^ mix64(stream + 0x632be59bd9b4e019ULL)));
}

}  // namespace protoseg
