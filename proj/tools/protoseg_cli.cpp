// protoseg: generate synthetic scenes, train, infer, evaluate and benchmark.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "protoseg/protoseg.hpp"

namespace fs = std::filesystem;
using namespace protoseg;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<double> nms_iou;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonOptions& opts) {
  app->add_option("--config", opts.config_path, "key = value settings file");
  app->add_option("--seed", opts.seed, "random seed");
  app->add_option("--threshold", opts.threshold, "mask probability threshold");
  app->add_option("--nms-iou", opts.nms_iou, "NMS IoU threshold");
  app->add_option("--set", opts.overrides, "extra key=value override (repeatable)");
}

Config resolve_config(const CommonOptions& opts, const Config& base = {}) {
  Config config = opts.config_path.empty() ? base : Config::load(opts.config_path, base);
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("--set expects key=value, got '" + kv + "'");
    }
    config.set(std::string_view(kv).substr(0, eq), std::string_view(kv).substr(eq + 1));
  }
  if (opts.seed) config.seed = *opts.seed;
  if (opts.threshold) config.mask_threshold = *opts.threshold;
  if (opts.nms_iou) config.nms_iou = *opts.nms_iou;
  config.validate();
  return config;
}

std::vector<Block> blocks_of(const std::vector<std::string>& scene_paths, const Config& config) {
  std::vector<Block> blocks;
  for (const auto& path : scene_paths) {
    const PointCloud scene = load_scene_any(path);
    for (auto& b : partition(scene, config.block_size, config.stride)) {
      blocks.push_back(std::move(b));
    }
  }
  return blocks;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  CommonOptions common;
  std::string out;
  int count = 1;
  int instances = 5;
  bool ascii = false;
};

int run_generate(const GenerateArgs& args) {
  const Config config = resolve_config(args.common);
  fs::create_directories(args.out);
  const Rng root(config.seed);
  for (int i = 0; i < args.count; ++i) {
    SyntheticSceneSpec spec;
    spec.seed = root.fork(static_cast<std::uint64_t>(i)).next_u64();
    spec.n_instances = args.instances;
    const PointCloud scene = generate_scene(spec);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d", i);
    const fs::path base = fs::path(args.out) / name;
    save_scene(scene, base.string() + ".pcis");
    if (args.ascii) {
      save_scene_ascii(scene, base.string() + ".txt");
    }
    std::printf("%s.pcis %ld points\n", base.string().c_str(), static_cast<long>(scene.size()));
  }
  return 0;
}

struct TrainArgs {
  CommonOptions common;
  std::vector<std::string> scenes;
  std::string out;
  std::optional<int> epochs;
};

int run_train(const TrainArgs& args) {
  Config config = resolve_config(args.common);
  if (args.epochs) {
    config.epochs = *args.epochs;
    config.validate();
  }
  const std::vector<Block> blocks = blocks_of(args.scenes, config);
  std::printf("training on %zu blocks for %d epochs\n", blocks.size(), config.epochs);
  const TrainResult result = train(blocks, config, [](int epoch, double loss) {
    std::printf("epoch %4d loss %.6f\n", epoch, loss);
    std::fflush(stdout);
  });
  save_checkpoint({config, result.params}, args.out);
  std::printf("saved %s after %ld steps\n", args.out.c_str(), result.steps);
  return 0;
}

struct InferArgs {
  CommonOptions common;
  std::string checkpoint;
  std::string scene;
  std::string out;
  std::string prototypes_dir;
};

int run_infer(const InferArgs& args) {
  Checkpoint ck = load_checkpoint(args.checkpoint);
  const Config config = resolve_config(args.common, ck.config);
  ck.params.check_shapes(config);
  const PointCloud scene = load_scene_any(args.scene);
  const SceneInference result = infer_scene(scene, ck.params, config);
  const auto predictions = to_predictions(result.segmentation);
  save_predictions(predictions, args.out);
  std::printf("%zu instances over %zu blocks -> %s\n", predictions.size(), result.blocks.size(),
              args.out.c_str());

  if (!args.prototypes_dir.empty()) {
    for (std::size_t b = 0; b < result.blocks.size(); ++b) {
      const PointCloud& cloud = result.blocks[b].cloud;
      const Matrix features = extract_features(cloud.channels, ck.params);
      char name[32];
      std::snprintf(name, sizeof name, "block_%03zu", b);
      dump_prototypes(cloud, prototype_head(features, ck.params), fs::path(args.prototypes_dir) / name);
    }
    std::printf("prototypes -> %s\n", args.prototypes_dir.c_str());
  }
  return 0;
}

struct EvalArgs {
  std::vector<std::string> gt;
  std::vector<std::string> predictions;
  double iou = 0.5;
};

int run_eval(const EvalArgs& args) {
  if (args.gt.size() != args.predictions.size()) {
    throw ArgumentError("eval: need one --pred per --gt");
  }
  std::vector<EvalInput> inputs;
  for (std::size_t i = 0; i < args.gt.size(); ++i) {
    const PointCloud scene = load_scene_any(args.gt[i]);
    if (!scene.has_labels()) {
      throw std::runtime_error("eval: " + args.gt[i] + " has no instance labels");
    }
    inputs.push_back({fs::path(args.gt[i]).stem().string(), instances_from_labels(*scene.instance_labels),
                      masks_from_predictions(load_predictions(args.predictions[i]), scene.size())});
  }
  std::fputs(format_report(evaluate(inputs, args.iou)).c_str(), stdout);
  return 0;
}

struct BenchArgs {
  CommonOptions common;
  std::string checkpoint;
  std::vector<std::string> scenes;
  std::size_t reps = 100;
  std::size_t warmup = 10;
  std::size_t max_blocks = 1;
  bool merge = false;
};

int run_bench(const BenchArgs& args) {
  Checkpoint ck = load_checkpoint(args.checkpoint);
  const Config config = resolve_config(args.common, ck.config);
  ck.params.check_shapes(config);
  const std::vector<Block> all = blocks_of(args.scenes, config);
  Rng rng = Rng(config.seed).fork(3);
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < all.size() && i < args.max_blocks; ++i) {
    blocks.push_back(sample_block(all[i], config.points_per_block, rng));
  }
  BenchOptions opts;
  opts.repetitions = args.reps;
  opts.warmup = args.warmup;
  opts.time_block_merge = args.merge;
  const TimingReport report = benchmark(blocks, ck.params, config, opts);
  std::printf("%zu block(s) of %d points, %zu reps\n", blocks.size(), config.points_per_block, args.reps);
  std::fputs(format_timing(report).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Large Eigen temporaries otherwise go through mmap/munmap on every call.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"Prototype/coefficient point cloud instance segmentation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "write synthetic labeled scenes");
  add_common(generate, gen.common);
  generate->add_option("--out", gen.out, "output directory")->required();
  generate->add_option("--count", gen.count, "number of scenes")->check(CLI::PositiveNumber);
  generate->add_option("--instances", gen.instances, "instances per scene")->check(CLI::PositiveNumber);
  generate->add_flag("--ascii", gen.ascii, "also write an ASCII twin of each scene");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train on labeled scenes and write a checkpoint");
  add_common(train_cmd, tr.common);
  train_cmd->add_option("scenes", tr.scenes, "scene files")->required();
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
  train_cmd->add_option("--epochs", tr.epochs, "override the epoch count");

  InferArgs inf;
  auto* infer = app.add_subcommand("infer", "segment a scene with a checkpoint");
  add_common(infer, inf.common);
  infer->add_option("--checkpoint", inf.checkpoint, "checkpoint path")->required();
  infer->add_option("scene", inf.scene, "scene file")->required();
  infer->add_option("--out", inf.out, "prediction dump path")->required();
  infer->add_option("--prototypes", inf.prototypes_dir, "directory for per-block prototype dumps");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "score prediction dumps against labeled scenes");
  eval->add_option("--gt", ev.gt, "labeled scene (repeatable)")->required();
  eval->add_option("--pred", ev.predictions, "prediction dump (repeatable)")->required();
  eval->add_option("--iou", ev.iou, "IoU threshold for precision and recall");

  BenchArgs be;
  auto* bench = app.add_subcommand("bench", "time block inference stages");
  add_common(bench, be.common);
  bench->add_option("--checkpoint", be.checkpoint, "checkpoint path")->required();
  bench->add_option("scenes", be.scenes, "scene files")->required();
  bench->add_option("--reps", be.reps, "timed repetitions");
  bench->add_option("--warmup", be.warmup, "untimed warmup repetitions");
  bench->add_option("--blocks", be.max_blocks, "blocks per repetition")->check(CLI::PositiveNumber);
  bench->add_flag("--blockmerge", be.merge, "also time BlockMerge over the blocks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (generate->parsed()) return run_generate(gen);
    if (train_cmd->parsed()) return run_train(tr);
    if (infer->parsed()) return run_infer(inf);
    if (eval->parsed()) return run_eval(ev);
    if (bench->parsed()) return run_bench(be);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
