#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace protoseg {

/// Model, training and inference settings. Defaults follow the published
/// S3DIS-blocks setup; hidden widths, merge and NMS thresholds are local
/// choices exposed here so they can be tuned.
struct Config {
  // Architecture
  int in_channels = 9;
  int extractor_hidden1 = 32;
  int extractor_hidden2 = 64;
  int n_features = 64;
  int head_hidden = 128;
  int n_prototypes = 128;
  int n_samples = 64;
  int k_neighbors = 16;
  double idw_offset = 0.05;  // meters added to neighbor distances before inversion
  std::string sampling_mode = "fps-xyz";

  // Inference
  double mask_threshold = 0.3;
  double nms_iou = 0.5;
  int min_instance_points = 10;
  double merge_iou = 0.5;

  // Blocking
  double block_size = 1.0;
  double stride = 0.5;
  int points_per_block = 4096;

  // Training
  double lr = 0.001;
  int batch_size = 16;
  int epochs = 65;
  std::uint64_t seed = 0;
  bool augment = false;  // random z-rotation and mirror of each training block

  /// Throws ArgumentError on an invalid combination.
  void validate() const;

  /// Sets one field from its textual value. Throws ArgumentError on an
  /// unknown key or unparsable value.
  void set(std::string_view key, std::string_view value);

  /// Line-based `key = value` text; `#` starts a comment.
  static Config parse(std::string_view text, Config base);
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path, Config base);

  /// Serializes every field in the same `key = value` format.
  std::string to_text() const;
};

}  // namespace protoseg
