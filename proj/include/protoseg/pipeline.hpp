#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "protoseg/blocking.hpp"
#include "protoseg/config.hpp"
#include "protoseg/core.hpp"
#include "protoseg/io.hpp"
#include "protoseg/nn.hpp"
#include "protoseg/sampling.hpp"

namespace protoseg {

// ---------------------------------------------------------------------------
// Mask assembly

/// K x N mask logits: row k mixes the prototype columns with the
/// coefficients of sample k, logits = C * P^T.
template <typename DerivedC, typename DerivedP>
auto assemble_masks(const Eigen::MatrixBase<DerivedC>& coefficients,
                    const Eigen::MatrixBase<DerivedP>& prototypes)
    -> MatrixX<typename DerivedC::Scalar> {
  if (coefficients.cols() != prototypes.cols()) {
    throw ShapeError("assemble_masks: coefficients " +
                     shape_string(coefficients.rows(), coefficients.cols()) + " vs prototypes " +
                     shape_string(prototypes.rows(), prototypes.cols()) + " disagree on M");
  }
  return matmul(coefficients, prototypes.transpose());
}

inline Matrix assemble_masks(const CoefficientMatrix& coefficients, const PrototypeMatrix& prototypes) {
  return assemble_masks(coefficients.values, prototypes.values);
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbabilityClamp = 1e-7;

struct LossResult {
  double loss = 0.0;
  Matrix d_logits;  // K x N
};

/// Sum over valid rows of the mean-over-points binary cross entropy between
/// logistic(logits) and the ground-truth rows. The gradient is (p - y) / N
/// on valid rows and zero on invalid ones.
LossResult loss_and_gradients(const Matrix& logits, const GroundTruthRows& gt);

// ---------------------------------------------------------------------------
// Optimization

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainState {
  ModelParams params;
  ModelParams m;
  ModelParams v;
  long step = 0;
  std::vector<double> loss_history;

  static TrainState start(ModelParams params);
};

/// Bias-corrected Adam update in place. Throws TrainingError naming the
/// first layer whose gradient is non-finite; the state is left untouched.
void adam_step(TrainState& state, const ModelParams& grads, const AdamOptions& options = {});

struct BlockStep {
  double loss = 0.0;
  Eigen::Index valid_samples = 0;
  ModelParams grads;
};

/// Forward and backward on one labeled cloud: FPS from `start_index`,
/// all three heads, mask assembly and the per-sample loss.
BlockStep block_loss_and_gradients(const PointCloud& cloud, const ModelParams& params,
                                   const Config& config, Eigen::Index start_index);

/// Loss only, same path as block_loss_and_gradients.
double block_loss(const PointCloud& cloud, const ModelParams& params, const Config& config,
                  Eigen::Index start_index);

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean block loss per epoch
  long steps = 0;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Per epoch: seeded shuffle, batches of `batch_size`, each block resampled
/// to `points_per_block` (and augmented when enabled) with a random FPS
/// start, batch-mean loss and gradients, one Adam step per batch.
TrainResult train(std::span<const Block> blocks, const Config& config,
                  const EpochCallback& on_epoch = {});
TrainResult train(std::span<const Block> blocks, const Config& config, ModelParams initial,
                  const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Inference

template <typename Scalar>
struct ThresholdedMasks {
  MatrixX<Scalar> probabilities;
  MaskMatrix masks;
  VectorX<Scalar> scores;
};

/// mask = logistic(logit) >= threshold; score = mean probability over the
/// mask (0 when empty).
template <typename Derived>
auto threshold_masks(const Eigen::MatrixBase<Derived>& logits, double threshold)
    -> ThresholdedMasks<typename Derived::Scalar> {
  using Scalar = typename Derived::Scalar;
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ArgumentError("threshold_masks: threshold must lie in (0,1)");
  }
  ThresholdedMasks<Scalar> out;
  out.probabilities = logistic(logits);
  out.masks = out.probabilities.array() >= static_cast<Scalar>(threshold);
  out.scores.resize(logits.rows());
  for (Eigen::Index k = 0; k < logits.rows(); ++k) {
    const auto count = out.masks.row(k).count();
    out.scores(k) = count == 0 ? Scalar(0)
                               : out.masks.row(k).select(out.probabilities.row(k).array(), Scalar(0)).sum() /
                                     static_cast<Scalar>(count);
  }
  return out;
}

/// Logit at which logistic() equals `threshold`.
inline double logit_cutoff(double threshold) { return std::log(threshold / (1.0 - threshold)); }

/// Greedy mask NMS. Masks with fewer than max(1, min_points) points are
/// dropped first; the rest are visited by descending score (ties: lower
/// index) and kept iff their IoU with every kept mask is <= iou_threshold.
/// Returns kept indices in visiting order.
template <typename Scalar>
std::vector<Eigen::Index> nms(const MaskMatrix& masks, const VectorX<Scalar>& scores,
                              double iou_threshold, int min_points = 0);

std::vector<InstancePrediction> infer_block(const PointCloud& cloud, const ModelParams& params,
                                            const Config& config, MaskSet* trace = nullptr);

struct SceneInference {
  SceneSegmentation segmentation;
  std::vector<Block> blocks;
  std::vector<BlockResult> block_results;
};

/// Partition, per-block inference on every block point, BlockMerge.
SceneInference infer_scene(const PointCloud& scene, const ModelParams& params, const Config& config);

/// Scene instances as dump records; indices ascending, order by instance id.
std::vector<PredictedInstance> to_predictions(const SceneSegmentation& segmentation);

}  // namespace protoseg
