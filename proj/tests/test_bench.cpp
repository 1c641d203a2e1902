#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "protoseg/protoseg.hpp"

using namespace protoseg;

namespace {

double busy_work() {
  double acc = 0.0;
  for (int i = 1; i < 3000000; ++i) acc += 1.0 / static_cast<double>(i);
  do_not_optimize(acc);
  return acc;
}

Block small_block(std::uint64_t seed, int n) {
  Rng rng(seed);
  const PointCloud cloud = oracle::two_instance_cloud(rng, n);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  return make_block(cloud, rows, Eigen::Vector2d(-0.5, -0.5), 1.0);
}

}  // namespace

TEST_CASE("constant-work stub has low relative spread") {
  const auto samples = time_repetitions(busy_work, 100, 10);
  CHECK(samples.size() == 100);
  const StageTiming t = summarize("stub", samples);
  CHECK(t.count == 100);
  CHECK(t.std_ms / t.mean_ms <= 0.05);
}

TEST_CASE("summary statistics match a two-pass oracle") {
  Rng rng(1);
  std::vector<double> xs;
  for (int i = 0; i < 1000; ++i) xs.push_back(1e3 + rng.normal());
  const StageTiming t = summarize("x", xs);
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  CHECK(std::abs(t.mean_ms - mean) / mean <= 1e-9);
  CHECK(std::abs(t.std_ms - sd) / sd <= 1e-9);

  const std::vector<double> small{4.0, 1.0, 3.0, 2.0};
  const StageTiming s = summarize("s", small);
  CHECK(s.median_ms == doctest::Approx(2.5));
  CHECK(s.p99_ms == 4.0);
  const StageTiming one = summarize("one", std::vector<double>{1.5});
  CHECK(one.std_ms == 0.0);
  CHECK(one.median_ms == 1.5);
}

TEST_CASE("benchmark reports the four stages with repetition counts") {
  Config c;
  const std::vector<Block> blocks{small_block(2, 128)};
  Rng rng(3);
  const ModelParams p = ModelParams::init(c, rng);
  BenchOptions opts;
  opts.repetitions = 5;
  opts.warmup = 2;
  const TimingReport r = benchmark(blocks, p, c, opts);
  REQUIRE(r.stages.size() == 4);
  CHECK(r.stages[0].name == "network");
  CHECK(r.stages[1].name == "nms");
  CHECK(r.stages[2].name == "grouping");
  CHECK(r.stages[3].name == "total");
  CHECK_FALSE(r.stage("grouping").applicable);
  CHECK(r.stage("total").count == 5);
  CHECK(r.warmup == 2);
  CHECK(r.stage("network").std_ms >= 0.0);
  const std::string table = format_timing(r);
  CHECK(table.find("grouping") != std::string::npos);
  CHECK(table.find('/') != std::string::npos);

  opts.time_block_merge = true;
  CHECK(benchmark(blocks, p, c, opts).stages.size() == 5);
}

TEST_CASE("benchmark argument errors") {
  Config c;
  Rng rng(4);
  const ModelParams p = ModelParams::init(c, rng);
  CHECK_THROWS_AS(benchmark(std::span<const Block>{}, p, c), ArgumentError);
  const std::vector<Block> blocks{small_block(5, 64)};
  BenchOptions one;
  one.repetitions = 1;
  CHECK_THROWS_AS(benchmark(blocks, p, c, one), ArgumentError);
}

TEST_CASE("selection benchmark counts repetitions") {
  Config c;
  Rng rng(6);
  Matrix coef(16, c.n_prototypes), proto(256, c.n_prototypes);
  for (Eigen::Index i = 0; i < coef.size(); ++i) coef.data()[i] = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < proto.size(); ++i) proto.data()[i] = rng.normal();
  BenchOptions opts;
  opts.repetitions = 10;
  opts.warmup = 1;
  const StageTiming t = benchmark_selection(coef, proto, c, opts);
  CHECK(t.count == 10);
  CHECK(t.mean_ms > 0.0);
}
