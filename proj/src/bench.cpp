#include "protoseg/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "protoseg/pipeline.hpp"

namespace protoseg {

const StageTiming& TimingReport::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return s;
  }
  throw ArgumentError("timing report has no stage '" + name + "'");
}

StageTiming summarize(std::string name, std::span<const double> samples_ms) {
  StageTiming t;
  t.name = std::move(name);
  t.count = samples_ms.size();
  if (samples_ms.empty()) {
    return t;
  }
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t k = 0;
  for (const double x : samples_ms) {
    ++k;
    const double delta = x - mean;
    mean += delta / static_cast<double>(k);
    m2 += delta * (x - mean);
  }
  t.mean_ms = mean;
  t.std_ms = k > 1 ? std::sqrt(m2 / static_cast<double>(k - 1)) : 0.0;

  std::vector<double> sorted(samples_ms.begin(), samples_ms.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  t.median_ms = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(n)));
  t.p99_ms = sorted[std::max<std::size_t>(rank, 1) - 1];
  return t;
}

namespace {

struct BlockTimes {
  double network = 0.0;
  double nms = 0.0;
  double total = 0.0;
  std::vector<InstancePrediction> predictions;
};

BlockTimes run_block(const PointCloud& cloud, const ModelParams& params, const Config& config) {
  BlockTimes times;
  const auto t0 = BenchClock::now();
  const Eigen::Index k = std::min<Eigen::Index>(config.n_samples, cloud.size());
  const SampledSet samples = farthest_point_sample(cloud.positions, k, 0);
  const Matrix features = extract_features(cloud.channels, params);
  const PrototypeMatrix prototypes = prototype_head(features, params);
  const CoefficientMatrix coefficients =
      coefficient_head(features, samples, cloud.positions, params, config.k_neighbors, config.idw_offset);
  const Matrix logits = assemble_masks(coefficients, prototypes);
  do_not_optimize(logits.data());
  const auto t1 = BenchClock::now();
  const auto thresholded = threshold_masks(logits, config.mask_threshold);
  const auto kept = nms(thresholded.masks, thresholded.scores, config.nms_iou, config.min_instance_points);
  for (const auto j : kept) {
    times.predictions.push_back({thresholded.masks.row(j).transpose(), thresholded.scores(j),
                                 samples.indices[static_cast<std::size_t>(j)]});
  }
  do_not_optimize(times.predictions.data());
  const auto t2 = BenchClock::now();
  times.network = elapsed_ms(t0, t1);
  times.nms = elapsed_ms(t1, t2);
  times.total = elapsed_ms(t0, t2);
  return times;
}

}  // namespace

TimingReport benchmark(std::span<const Block> blocks, const ModelParams& params, const Config& config,
                       const BenchOptions& options) {
  if (blocks.empty()) {
    throw ArgumentError("benchmark: empty block list");
  }
  if (options.repetitions < 2) {
    throw ArgumentError("benchmark: repetitions must be >= 2");
  }
  Eigen::Index scene_points = 0;
  for (const auto& b : blocks) {
    for (auto idx : b.point_indices) scene_points = std::max(scene_points, idx + 1);
  }

  std::vector<double> network, nms_times, total, merge;
  std::vector<BlockResult> results(blocks.size());
  for (std::size_t rep = 0; rep < options.warmup + options.repetitions; ++rep) {
    const bool timed = rep >= options.warmup;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      BlockTimes t = run_block(blocks[b].cloud, params, config);
      if (timed) {
        network.push_back(t.network);
        nms_times.push_back(t.nms);
        total.push_back(t.total);
      }
      results[b] = {blocks[b].point_indices, std::move(t.predictions)};
    }
    if (options.time_block_merge) {
      const auto t0 = BenchClock::now();
      const SceneSegmentation seg =
          block_merge(results, scene_points, {config.merge_iou, config.min_instance_points});
      do_not_optimize(seg.instance_ids.data());
      if (timed) merge.push_back(elapsed_ms(t0, BenchClock::now()));
    }
  }

  TimingReport report;
  report.warmup = options.warmup;
  report.stages.push_back(summarize("network", network));
  report.stages.push_back(summarize("nms", nms_times));
  StageTiming grouping;
  grouping.name = "grouping";
  grouping.applicable = false;
  report.stages.push_back(grouping);
  report.stages.push_back(summarize("total", total));
  if (options.time_block_merge) {
    report.stages.push_back(summarize("blockmerge", merge));
  }
  return report;
}

StageTiming benchmark_selection(const Matrix& coefficients, const Matrix& prototypes, const Config& config,
                                const BenchOptions& options) {
  if (options.repetitions < 2) {
    throw ArgumentError("benchmark_selection: repetitions must be >= 2");
  }
  const MatrixX<float> c = coefficients.cast<float>();
  const MatrixX<float> p = prototypes.cast<float>();
  auto run = [&] {
    const MatrixX<float> logits = assemble_masks(c, p);
    const auto thresholded = threshold_masks(logits, config.mask_threshold);
    const auto kept = nms(thresholded.masks, thresholded.scores, config.nms_iou, config.min_instance_points);
    do_not_optimize(kept.data());
    do_not_optimize(thresholded.masks.data());
  };
  const auto samples = time_repetitions(run, options.repetitions, options.warmup);
  return summarize("selection", samples);
}

std::string format_timing(const TimingReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %22s %10s %10s %6s\n", "stage", "mean ± std (ms)", "median",
                "p99", "n");
  os << line;
  for (const auto& s : report.stages) {
    if (!s.applicable) {
      std::snprintf(line, sizeof line, "%-12s %20s %10s %10s %6s\n", s.name.c_str(), "/", "/", "/", "/");
    } else {
      char cell[48];
      std::snprintf(cell, sizeof cell, "%.3f ± %.3f", s.mean_ms, s.std_ms);
      std::snprintf(line, sizeof line, "%-12s %22s %10.3f %10.3f %6zu\n", s.name.c_str(), cell, s.median_ms,
                    s.p99_ms, s.count);
    }
    os << line;
  }
  os << "warmup " << report.warmup << '\n';
  return os.str();
}

}  // namespace protoseg
