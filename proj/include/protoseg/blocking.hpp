#pragma once

#include <span>
#include <vector>

#include "protoseg/core.hpp"
#include "protoseg/rng.hpp"

namespace protoseg {

/// A square xy window of the scene. `cloud` rows correspond one-to-one with
/// `point_indices`; its XY channels are recentered on the block center while
/// `cloud.positions` keep scene coordinates.
struct Block {
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  double size = 1.0;
  std::vector<Eigen::Index> point_indices;
  PointCloud cloud;
};

/// Overlapping grid of blocks covering the scene's xy bounding box. Block
/// bounds are closed, so every scene point lands in at least one block.
/// Empty blocks are dropped.
std::vector<Block> partition(const PointCloud& scene, double block_size, double stride);

/// Number of block origins along one axis of extent `extent`.
Eigen::Index blocks_along(double extent, double block_size, double stride);

/// Resamples a block to exactly `points_per_block` rows. Larger blocks are
/// subsampled without replacement; smaller ones keep every point once and
/// fill the remainder with draws with replacement.
Block sample_block(const Block& block, Eigen::Index points_per_block, Rng& rng);

/// Rotates the block about its vertical center axis by a uniform random
/// angle, then mirrors x with probability one half. Positions and the
/// recentered XY channels move together; other channels are untouched.
void augment_block(Block& block, Rng& rng);

/// Builds the Block view of `rows` (scene indices) for a given window.
Block make_block(const PointCloud& scene, std::vector<Eigen::Index> rows,
                 const Eigen::Vector2d& origin, double block_size);

struct BlockResult {
  std::vector<Eigen::Index> point_indices;  // block row -> scene index
  std::vector<InstancePrediction> instances;  // masks over block rows
};

struct SceneSegmentation {
  std::vector<int> instance_ids;   // per scene point, -1 when unassigned
  std::vector<double> confidences;  // per instance id

  int instance_count() const { return static_cast<int>(confidences.size()); }
};

struct MergeOptions {
  double merge_iou = 0.5;
  int min_instance_points = 10;
};

/// Greedy confidence-ordered merge of block predictions into scene
/// instances. Masks are visited by descending score (ties: block order, then
/// mask order). A mask joins the existing instance with the highest IoU
/// measured only over the points both have seen, if that IoU exceeds
/// `merge_iou`; otherwise it founds a new instance. Each point finally goes
/// to the most confident instance claiming it (ties: lower id). Instances
/// with fewer than `min_instance_points` points are dropped and ids are
/// compacted in founding order.
SceneSegmentation block_merge(std::span<const BlockResult> blocks, Eigen::Index scene_points,
                              const MergeOptions& options = {});

/// One BlockResult per instance of `segmentation`, covering the whole scene.
BlockResult as_block_result(const SceneSegmentation& segmentation);

}  // namespace protoseg
