#include "protoseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace protoseg {

// ---------------------------------------------------------------------------
// Loss

LossResult loss_and_gradients(const Matrix& logits, const GroundTruthRows& gt) {
  if (logits.rows() != gt.rows.rows() || logits.cols() != gt.rows.cols() ||
      static_cast<Eigen::Index>(gt.valid.size()) != logits.rows()) {
    throw ShapeError("loss_and_gradients: logits " + shape_string(logits.rows(), logits.cols()) +
                     " vs ground truth " + shape_string(gt.rows.rows(), gt.rows.cols()));
  }
  const Eigen::Index n = logits.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult out;
  out.d_logits = Matrix::Zero(logits.rows(), n);
  for (Eigen::Index k = 0; k < logits.rows(); ++k) {
    if (!gt.valid[static_cast<std::size_t>(k)]) {
      continue;
    }
    double row_loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = logistic(logits(k, i));
      const double y = gt.rows(k, i);
      const double pc = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
      row_loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
      out.d_logits(k, i) = (p - y) * inv_n;
    }
    out.loss += row_loss * inv_n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

TrainState TrainState::start(ModelParams params) {
  TrainState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  s.params = std::move(params);
  return s;
}

void adam_step(TrainState& state, const ModelParams& grads, const AdamOptions& options) {
  const auto g_layers = grads.layers();
  const auto p_layers = state.params.layers();
  for (std::size_t i = 0; i < g_layers.size(); ++i) {
    if (g_layers[i]->weight.rows() != p_layers[i]->weight.rows() ||
        g_layers[i]->weight.cols() != p_layers[i]->weight.cols() ||
        g_layers[i]->bias.size() != p_layers[i]->bias.size()) {
      throw ShapeError("adam_step: gradient shape mismatch in layer " +
                       std::string(ModelParams::kLayerNames[i]));
    }
    if (!g_layers[i]->weight.allFinite() || !g_layers[i]->bias.allFinite()) {
      throw TrainingError("adam_step: non-finite gradient in layer " +
                          std::string(ModelParams::kLayerNames[i]));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  auto m_layers = state.m.layers();
  auto v_layers = state.v.layers();

  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = options.beta1 * m + (1.0 - options.beta1) * g;
    v = options.beta2 * v + (1.0 - options.beta2) * g.cwiseProduct(g);
    param.array() -= options.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options.eps);
  };
  for (std::size_t i = 0; i < p_layers.size(); ++i) {
    update(p_layers[i]->weight, m_layers[i]->weight, v_layers[i]->weight, g_layers[i]->weight);
    update(p_layers[i]->bias, m_layers[i]->bias, v_layers[i]->bias, g_layers[i]->bias);
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

Eigen::Index sample_count(const Config& config, Eigen::Index n) {
  return std::min<Eigen::Index>(config.n_samples, n);
}

}  // namespace

BlockStep block_loss_and_gradients(const PointCloud& cloud, const ModelParams& params,
                                   const Config& config, Eigen::Index start_index) {
  if (!cloud.has_labels()) {
    throw ArgumentError("block_loss_and_gradients: cloud has no instance labels");
  }
  const SampledSet samples =
      farthest_point_sample(cloud.positions, sample_count(config, cloud.size()), start_index);
  const GroundTruthRows gt = ground_truth_at(samples, *cloud.instance_labels);

  HeadsTape tape;
  const HeadOutputs& out = tape.forward(cloud, samples, params, config.k_neighbors, config.idw_offset);
  const Matrix logits = assemble_masks(out.coefficients, out.prototypes);
  const LossResult loss = loss_and_gradients(logits, gt);

  // logits = C P^T
  const Matrix d_coefficients = loss.d_logits * out.prototypes.values;
  const Matrix d_prototypes = loss.d_logits.transpose() * out.coefficients.values;
  HeadGradients grads = tape.backward(d_prototypes, d_coefficients);
  return {loss.loss, gt.valid_count(), std::move(grads.params)};
}

double block_loss(const PointCloud& cloud, const ModelParams& params, const Config& config,
                  Eigen::Index start_index) {
  if (!cloud.has_labels()) {
    throw ArgumentError("block_loss: cloud has no instance labels");
  }
  const SampledSet samples =
      farthest_point_sample(cloud.positions, sample_count(config, cloud.size()), start_index);
  const GroundTruthRows gt = ground_truth_at(samples, *cloud.instance_labels);
  const Matrix features = extract_features(cloud.channels, params);
  const PrototypeMatrix prototypes = prototype_head(features, params);
  const CoefficientMatrix coefficients =
      coefficient_head(features, samples, cloud.positions, params, config.k_neighbors, config.idw_offset);
  return loss_and_gradients(assemble_masks(coefficients, prototypes), gt).loss;
}

TrainResult train(std::span<const Block> blocks, const Config& config, const EpochCallback& on_epoch) {
  config.validate();
  Rng init_rng = Rng(config.seed).fork(0);
  return train(blocks, config, ModelParams::init(config, init_rng), on_epoch);
}

TrainResult train(std::span<const Block> blocks, const Config& config, ModelParams initial,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (blocks.empty()) {
    throw ArgumentError("train: empty dataset");
  }
  for (const auto& b : blocks) {
    if (!b.cloud.has_labels()) {
      throw ArgumentError("train: every block needs instance labels");
    }
  }
  initial.check_shapes(config);

  TrainState state = TrainState::start(std::move(initial));
  const AdamOptions adam{config.lr};
  Rng shuffle_rng = Rng(config.seed).fork(1);
  const Rng sample_root = Rng(config.seed).fork(2);

  std::vector<std::size_t> order(blocks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      ModelParams grads = state.params.zeros_like();
      double batch_loss = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        // One stream per (epoch, position) so results do not depend on batching internals.
        Rng rng = sample_root.fork(static_cast<std::uint64_t>(epoch) * order.size() + i);
        Block sampled = sample_block(blocks[order[i]], config.points_per_block, rng);
        if (config.augment) {
          augment_block(sampled, rng);
        }
        const auto start = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(sampled.cloud.size())));
        BlockStep step = block_loss_and_gradients(sampled.cloud, state.params, config, start);
        grads += step.grads;
        batch_loss += step.loss;
      }
      const double scale = 1.0 / static_cast<double>(end - begin);
      grads *= scale;
      adam_step(state, grads, adam);
      epoch_total += batch_loss;
      state.loss_history.push_back(batch_loss * scale);
    }
    const double mean = epoch_total / static_cast<double>(order.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) {
      on_epoch(epoch, mean);
    }
  }
  result.steps = state.step;
  result.params = std::move(state.params);
  return result;
}

// ---------------------------------------------------------------------------
// NMS

template <typename Scalar>
std::vector<Eigen::Index> nms(const MaskMatrix& masks, const VectorX<Scalar>& scores,
                              double iou_threshold, int min_points) {
  if (scores.size() != masks.rows()) {
    throw ShapeError("nms: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(masks.rows()) + " masks");
  }
  if (!scores.allFinite()) {
    throw ArgumentError("nms: scores must be finite");
  }
  const Eigen::Index floor = std::max(1, min_points);
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(masks.rows()));
  std::vector<Eigen::Index> order;
  for (Eigen::Index k = 0; k < masks.rows(); ++k) {
    counts[static_cast<std::size_t>(k)] = masks.row(k).count();
    if (counts[static_cast<std::size_t>(k)] >= floor) {
      order.push_back(k);
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });

  std::vector<Eigen::Index> kept;
  for (const auto k : order) {
    bool keep = true;
    for (const auto j : kept) {
      const auto inter = (masks.row(k) && masks.row(j)).count();
      const auto uni = counts[static_cast<std::size_t>(k)] + counts[static_cast<std::size_t>(j)] - inter;
      if (static_cast<double>(inter) / static_cast<double>(uni) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) {
      kept.push_back(k);
    }
  }
  return kept;
}

template std::vector<Eigen::Index> nms<double>(const MaskMatrix&, const VectorX<double>&, double, int);
template std::vector<Eigen::Index> nms<float>(const MaskMatrix&, const VectorX<float>&, double, int);

// ---------------------------------------------------------------------------
// Inference

std::vector<InstancePrediction> infer_block(const PointCloud& cloud, const ModelParams& params,
                                            const Config& config, MaskSet* trace) {
  const SampledSet samples = farthest_point_sample(cloud.positions, sample_count(config, cloud.size()), 0);
  const Matrix features = extract_features(cloud.channels, params);
  const PrototypeMatrix prototypes = prototype_head(features, params);
  const CoefficientMatrix coefficients =
      coefficient_head(features, samples, cloud.positions, params, config.k_neighbors, config.idw_offset);
  Matrix logits = assemble_masks(coefficients, prototypes);
  auto thresholded = threshold_masks(logits, config.mask_threshold);
  const auto kept = nms(thresholded.masks, thresholded.scores, config.nms_iou, config.min_instance_points);

  std::vector<InstancePrediction> out;
  out.reserve(kept.size());
  for (const auto k : kept) {
    out.push_back({thresholded.masks.row(k).transpose(), thresholded.scores(k),
                   samples.indices[static_cast<std::size_t>(k)]});
  }
  if (trace != nullptr) {
    *trace = {std::move(logits), std::move(thresholded.probabilities), std::move(thresholded.masks),
              std::move(thresholded.scores), kept};
  }
  return out;
}

SceneInference infer_scene(const PointCloud& scene, const ModelParams& params, const Config& config) {
  SceneInference out;
  out.blocks = partition(scene, config.block_size, config.stride);
  out.block_results.reserve(out.blocks.size());
  for (const auto& block : out.blocks) {
    out.block_results.push_back({block.point_indices, infer_block(block.cloud, params, config)});
  }
  out.segmentation = block_merge(out.block_results, scene.size(),
                                 {config.merge_iou, config.min_instance_points});
  return out;
}

std::vector<PredictedInstance> to_predictions(const SceneSegmentation& segmentation) {
  std::vector<PredictedInstance> out(static_cast<std::size_t>(segmentation.instance_count()));
  for (std::size_t g = 0; g < out.size(); ++g) {
    out[g].score = segmentation.confidences[g];
  }
  for (std::size_t p = 0; p < segmentation.instance_ids.size(); ++p) {
    const int id = segmentation.instance_ids[p];
    if (id >= 0) {
      out[static_cast<std::size_t>(id)].points.push_back(static_cast<Eigen::Index>(p));
    }
  }
  return out;
}

}  // namespace protoseg
