#pragma once

#include <vector>

#include "protoseg/core.hpp"

namespace protoseg {

/// Greedy farthest point sampling on xyz. The first pick is `start_index`;
/// each later pick maximizes the minimum Euclidean distance to the picks so
/// far, ties going to the lowest index. Exact, O(N*K).
SampledSet farthest_point_sample(const Eigen::Ref<const Positions>& positions, Eigen::Index k,
                                 Eigen::Index start_index = 0);

/// Minimum distance to the selected set at the moment each pick was made
/// (the first pick reports +inf). Non-increasing after the first entry.
std::vector<double> fps_pick_distances(const Eigen::Ref<const Positions>& positions,
                                       const SampledSet& samples);

/// Per-sample supervision: row j is the indicator of the instance containing
/// sample j. Samples on unlabeled points are flagged invalid and their rows
/// are all zero.
struct GroundTruthRows {
  Matrix rows;              // K x N, 0/1
  std::vector<bool> valid;  // K

  Eigen::Index valid_count() const;
};

GroundTruthRows ground_truth_at(const SampledSet& samples, const std::vector<int>& labels);

}  // namespace protoseg
