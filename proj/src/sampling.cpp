#include "protoseg/sampling.hpp"

#include <algorithm>
#include <limits>

namespace protoseg {

SampledSet farthest_point_sample(const Eigen::Ref<const Positions>& positions, Eigen::Index k,
                                 Eigen::Index start_index) {
  const Eigen::Index n = positions.rows();
  if (k < 1 || k > n) {
    throw ArgumentError("farthest_point_sample: K=" + std::to_string(k) + " outside [1, " +
                        std::to_string(n) + "]");
  }
  if (start_index < 0 || start_index >= n) {
    throw ArgumentError("farthest_point_sample: start_index " + std::to_string(start_index) +
                        " outside [0, " + std::to_string(n) + ")");
  }

  SampledSet out;
  out.indices.reserve(static_cast<std::size_t>(k));
  out.indices.push_back(start_index);

  // Squared distances preserve the ordering and keep ties exact.
  Vector min_d2 = (positions.rowwise() - positions.row(start_index)).rowwise().squaredNorm();
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  taken[static_cast<std::size_t>(start_index)] = true;

  for (Eigen::Index j = 1; j < k; ++j) {
    Eigen::Index best = -1;
    double best_d2 = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!taken[static_cast<std::size_t>(i)] && min_d2(i) > best_d2) {
        best_d2 = min_d2(i);
        best = i;
      }
    }
    taken[static_cast<std::size_t>(best)] = true;
    out.indices.push_back(best);
    min_d2 = min_d2.cwiseMin((positions.rowwise() - positions.row(best)).rowwise().squaredNorm());
  }

  out.coordinates.resize(k, 3);
  for (Eigen::Index j = 0; j < k; ++j) {
    out.coordinates.row(j) = positions.row(out.indices[static_cast<std::size_t>(j)]);
  }
  return out;
}

std::vector<double> fps_pick_distances(const Eigen::Ref<const Positions>& positions,
                                       const SampledSet& samples) {
  std::vector<double> out;
  out.reserve(samples.indices.size());
  for (std::size_t j = 0; j < samples.indices.size(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < j; ++s) {
      best = std::min(best, (positions.row(samples.indices[j]) - positions.row(samples.indices[s])).norm());
    }
    out.push_back(best);
  }
  return out;
}

Eigen::Index GroundTruthRows::valid_count() const {
  return static_cast<Eigen::Index>(std::count(valid.begin(), valid.end(), true));
}

GroundTruthRows ground_truth_at(const SampledSet& samples, const std::vector<int>& labels) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  GroundTruthRows gt;
  gt.rows = Matrix::Zero(samples.size(), n);
  gt.valid.assign(samples.indices.size(), false);
  for (Eigen::Index j = 0; j < samples.size(); ++j) {
    const auto idx = samples.indices[static_cast<std::size_t>(j)];
    if (idx < 0 || idx >= n) {
      throw IndexError("ground_truth_at: sample index " + std::to_string(idx) + " out of range");
    }
    const int label = labels[static_cast<std::size_t>(idx)];
    if (label < 0) {
      continue;
    }
    gt.valid[static_cast<std::size_t>(j)] = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      gt.rows(j, i) = labels[static_cast<std::size_t>(i)] == label ? 1.0 : 0.0;
    }
  }
  return gt;
}

}  // namespace protoseg
