#pragma once

#include <chrono>
#include <span>
#include <string>
#include <vector>

#include "protoseg/blocking.hpp"
#include "protoseg/config.hpp"
#include "protoseg/nn.hpp"

namespace protoseg {

// Keeps a computed value observable so the optimizer cannot drop the work.
template <typename T>
inline void do_not_optimize(const T& value) {
#if defined(__GNUC__) || defined(__clang__)
  asm volatile("" : : "r,m"(value) : "memory");
#else
  static volatile const T* sink;
  sink = &value;
#endif
}

using BenchClock = std::chrono::steady_clock;

inline double elapsed_ms(BenchClock::time_point start, BenchClock::time_point stop) {
  return std::chrono::duration<double, std::milli>(stop - start).count();
}

struct StageTiming {
  std::string name;
  bool applicable = true;  // false renders as "/"
  std::size_t count = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;  // sample standard deviation (n - 1)
  double median_ms = 0.0;
  double p99_ms = 0.0;
};

struct TimingReport {
  std::vector<StageTiming> stages;  // network, nms, grouping, total [, blockmerge]
  std::size_t warmup = 0;

  const StageTiming& stage(const std::string& name) const;
};

/// Single-pass (Welford) mean and sample std plus median and nearest-rank p99.
StageTiming summarize(std::string name, std::span<const double> samples_ms);

/// Runs `fn` `warmup` times untimed, then `repetitions` timed calls.
template <typename Fn>
std::vector<double> time_repetitions(Fn&& fn, std::size_t repetitions, std::size_t warmup) {
  for (std::size_t i = 0; i < warmup; ++i) {
    fn();
  }
  std::vector<double> samples;
  samples.reserve(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto t0 = BenchClock::now();
    fn();
    samples.push_back(elapsed_ms(t0, BenchClock::now()));
  }
  return samples;
}

struct BenchOptions {
  std::size_t repetitions = 100;
  std::size_t warmup = 10;
  bool time_block_merge = false;
};

/// Per-stage latency of block inference. Each repetition runs every block
/// once; "network" covers features, FPS, both heads and mask assembly,
/// "nms" covers thresholding and NMS, and "total" the whole block. The
/// method has no grouping step, so that row is reported as not applicable.
TimingReport benchmark(std::span<const Block> blocks, const ModelParams& params, const Config& config,
                       const BenchOptions& options = {});

/// Latency of assemble + threshold + NMS for fixed coefficients and
/// prototypes, mask assembly in single precision.
StageTiming benchmark_selection(const Matrix& coefficients, const Matrix& prototypes,
                                const Config& config, const BenchOptions& options = {});

/// Table rows `stage mean ± std (median, p99, n)`.
std::string format_timing(const TimingReport& report);

}  // namespace protoseg
