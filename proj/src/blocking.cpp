#include "protoseg/blocking.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace protoseg {

Eigen::Index blocks_along(double extent, double block_size, double stride) {
  if (extent <= block_size) {
    return 1;
  }
  // The small slack keeps exact multiples (2.0 - 1.0) / 0.5 from rounding up.
  return static_cast<Eigen::Index>(std::ceil((extent - block_size) / stride - 1e-9)) + 1;
}

Block make_block(const PointCloud& scene, std::vector<Eigen::Index> rows,
                 const Eigen::Vector2d& origin, double block_size) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Vector2d center = origin.array() + block_size / 2.0;

  Block block;
  block.origin = origin;
  block.size = block_size;
  block.cloud.positions.resize(n, 3);
  block.cloud.channels.resize(n, scene.channel_count());
  if (scene.has_labels()) {
    block.cloud.instance_labels.emplace(rows.size());
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto src = rows[static_cast<std::size_t>(r)];
    block.cloud.positions.row(r) = scene.positions.row(src);
    block.cloud.channels.row(r) = scene.channels.row(src);
    block.cloud.channels(r, 0) = scene.positions(src, 0) - center.x();
    block.cloud.channels(r, 1) = scene.positions(src, 1) - center.y();
    if (scene.has_labels()) {
      (*block.cloud.instance_labels)[static_cast<std::size_t>(r)] =
          (*scene.instance_labels)[static_cast<std::size_t>(src)];
    }
  }
  block.point_indices = std::move(rows);
  return block;
}

std::vector<Block> partition(const PointCloud& scene, double block_size, double stride) {
  if (scene.size() < 1) {
    throw ArgumentError("partition: empty scene");
  }
  if (!(block_size > 0.0) || !(stride > 0.0) || stride > block_size) {
    throw ArgumentError("partition: need 0 < stride <= block_size");
  }
  const Eigen::Vector2d lo = scene.positions.leftCols<2>().colwise().minCoeff().transpose();
  const Eigen::Vector2d hi = scene.positions.leftCols<2>().colwise().maxCoeff().transpose();
  const Eigen::Index nx = blocks_along(hi.x() - lo.x(), block_size, stride);
  const Eigen::Index ny = blocks_along(hi.y() - lo.y(), block_size, stride);
  const double slack = 1e-9 * std::max(1.0, block_size);

  std::vector<Block> blocks;
  for (Eigen::Index ix = 0; ix < nx; ++ix) {
    for (Eigen::Index iy = 0; iy < ny; ++iy) {
      const Eigen::Vector2d origin(lo.x() + static_cast<double>(ix) * stride,
                                   lo.y() + static_cast<double>(iy) * stride);
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < scene.size(); ++i) {
        const double x = scene.positions(i, 0);
        const double y = scene.positions(i, 1);
        if (x >= origin.x() - slack && x <= origin.x() + block_size + slack &&
            y >= origin.y() - slack && y <= origin.y() + block_size + slack) {
          rows.push_back(i);
        }
      }
      if (!rows.empty()) {
        blocks.push_back(make_block(scene, std::move(rows), origin, block_size));
      }
    }
  }
  return blocks;
}

Block sample_block(const Block& block, Eigen::Index points_per_block, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(block.point_indices.size());
  if (n < 1) {
    throw ArgumentError("sample_block: empty block");
  }
  if (points_per_block < 1) {
    throw ArgumentError("sample_block: points_per_block must be positive");
  }
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  rng.shuffle(rows);
  if (n >= points_per_block) {
    rows.resize(static_cast<std::size_t>(points_per_block));
  } else {
    while (static_cast<Eigen::Index>(rows.size()) < points_per_block) {
      rows.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    }
    rng.shuffle(rows);
  }

  Block out;
  out.origin = block.origin;
  out.size = block.size;
  out.cloud.positions.resize(points_per_block, 3);
  out.cloud.channels.resize(points_per_block, block.cloud.channel_count());
  if (block.cloud.has_labels()) {
    out.cloud.instance_labels.emplace(static_cast<std::size_t>(points_per_block));
  }
  out.point_indices.resize(static_cast<std::size_t>(points_per_block));
  for (Eigen::Index r = 0; r < points_per_block; ++r) {
    const auto src = rows[static_cast<std::size_t>(r)];
    out.cloud.positions.row(r) = block.cloud.positions.row(src);
    out.cloud.channels.row(r) = block.cloud.channels.row(src);
    out.point_indices[static_cast<std::size_t>(r)] = block.point_indices[static_cast<std::size_t>(src)];
    if (block.cloud.has_labels()) {
      (*out.cloud.instance_labels)[static_cast<std::size_t>(r)] =
          (*block.cloud.instance_labels)[static_cast<std::size_t>(src)];
    }
  }
  return out;
}

void augment_block(Block& block, Rng& rng) {
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double mirror = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const Eigen::Vector2d center = block.origin.array() + block.size / 2.0;
  PointCloud& cloud = block.cloud;
  for (Eigen::Index r = 0; r < cloud.size(); ++r) {
    const double x = cloud.positions(r, 0) - center.x();
    const double y = cloud.positions(r, 1) - center.y();
    const double rx = mirror * (c * x - s * y);
    const double ry = s * x + c * y;
    cloud.positions(r, 0) = center.x() + rx;
    cloud.positions(r, 1) = center.y() + ry;
    cloud.channels(r, 0) = rx;
    cloud.channels(r, 1) = ry;
  }
}

// ---------------------------------------------------------------------------
// BlockMerge

namespace {

struct PendingMask {
  double score;
  std::size_t block;
  std::size_t mask;
};

struct SceneInstance {
  std::vector<char> members;
  std::vector<char> seen;  // union of the blocks of all merged masks
  double confidence;
};

}  // namespace

SceneSegmentation block_merge(std::span<const BlockResult> blocks, Eigen::Index scene_points,
                              const MergeOptions& options) {
  const auto n = static_cast<std::size_t>(scene_points);
  std::vector<PendingMask> order;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& block = blocks[b];
    for (auto idx : block.point_indices) {
      if (idx < 0 || idx >= scene_points) {
        throw IndexError("block_merge: block " + std::to_string(b) + " references scene index " +
                         std::to_string(idx) + " outside [0, " + std::to_string(scene_points) + ")");
      }
    }
    for (std::size_t m = 0; m < block.instances.size(); ++m) {
      if (block.instances[m].mask.size() != static_cast<Eigen::Index>(block.point_indices.size())) {
        throw ShapeError("block_merge: mask length disagrees with block " + std::to_string(b));
      }
      order.push_back({block.instances[m].score, b, m});
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const PendingMask& a, const PendingMask& b) { return a.score > b.score; });

  std::vector<SceneInstance> instances;
  for (const auto& pending : order) {
    const auto& block = blocks[pending.block];
    const Mask& mask = block.instances[pending.mask].mask;

    int best = -1;
    double best_iou = options.merge_iou;
    for (std::size_t g = 0; g < instances.size(); ++g) {
      const auto& inst = instances[g];
      std::size_t inter = 0;
      std::size_t uni = 0;
      for (std::size_t r = 0; r < block.point_indices.size(); ++r) {
        const auto p = static_cast<std::size_t>(block.point_indices[r]);
        if (!inst.seen[p]) continue;
        const bool a = mask(static_cast<Eigen::Index>(r));
        const bool b = inst.members[p] != 0;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
      }
      const double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }

    if (best < 0) {
      instances.push_back({std::vector<char>(n, 0), std::vector<char>(n, 0), pending.score});
      best = static_cast<int>(instances.size() - 1);
    }
    auto& target = instances[static_cast<std::size_t>(best)];
    for (std::size_t r = 0; r < block.point_indices.size(); ++r) {
      const auto p = static_cast<std::size_t>(block.point_indices[r]);
      target.seen[p] = 1;
      if (mask(static_cast<Eigen::Index>(r))) target.members[p] = 1;
    }
  }

  // Instances are founded in descending confidence, so the first claimant
  // of a point is the most confident one, with ties going to the lower id.
  std::vector<int> owner(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t g = 0; g < instances.size(); ++g) {
      if (instances[g].members[p] &&
          (owner[p] < 0 || instances[g].confidence > instances[static_cast<std::size_t>(owner[p])].confidence)) {
        owner[p] = static_cast<int>(g);
      }
    }
  }

  std::vector<int> counts(instances.size(), 0);
  for (int o : owner) {
    if (o >= 0) ++counts[static_cast<std::size_t>(o)];
  }
  std::vector<int> remap(instances.size(), -1);
  SceneSegmentation seg;
  for (std::size_t g = 0; g < instances.size(); ++g) {
    if (counts[g] > 0 && counts[g] >= options.min_instance_points) {
      remap[g] = seg.instance_count();
      seg.confidences.push_back(instances[g].confidence);
    }
  }
  seg.instance_ids.resize(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    if (owner[p] >= 0) seg.instance_ids[p] = remap[static_cast<std::size_t>(owner[p])];
  }
  return seg;
}

BlockResult as_block_result(const SceneSegmentation& segmentation) {
  BlockResult out;
  const auto n = static_cast<Eigen::Index>(segmentation.instance_ids.size());
  out.point_indices.resize(static_cast<std::size_t>(n));
  std::iota(out.point_indices.begin(), out.point_indices.end(), Eigen::Index{0});
  for (int g = 0; g < segmentation.instance_count(); ++g) {
    InstancePrediction pred;
    pred.mask = Mask::Constant(n, false);
    for (Eigen::Index p = 0; p < n; ++p) {
      pred.mask(p) = segmentation.instance_ids[static_cast<std::size_t>(p)] == g;
    }
    pred.score = segmentation.confidences[static_cast<std::size_t>(g)];
    pred.source_sample = g;
    out.instances.push_back(std::move(pred));
  }
  return out;
}

}  // namespace protoseg
