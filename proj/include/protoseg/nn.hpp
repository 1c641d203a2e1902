#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "protoseg/config.hpp"
#include "protoseg/core.hpp"
#include "protoseg/rng.hpp"

namespace protoseg {

/// Affine layer acting on row vectors: y = x * weight + bias.
struct Dense {
  Matrix weight;  // in x out
  RowVector bias;  // out

  Eigen::Index in() const { return weight.rows(); }
  Eigen::Index out() const { return weight.cols(); }

  template <typename Derived>
  Matrix apply(const Eigen::MatrixBase<Derived>& x) const {
    return (matmul(x, weight)).rowwise() + bias;
  }
};

/// Parameters of the three networks.
///
/// extractor:   per-point 9 -> h1 -> h2 (ReLU), then [h2 | max-pool(h2)] -> F (ReLU)
/// prototypes:  per-point F -> hidden (ReLU) -> M, raw scores
/// coefficients: IDW-mean of kNN features, F -> hidden (ReLU) -> M, tanh
struct ModelParams {
  Dense ext1, ext2, ext3;
  Dense proto1, proto2;
  Dense coef1, coef2;

  static constexpr std::array<std::string_view, 7> kLayerNames = {
      "extractor.1", "extractor.2", "extractor.3", "prototype.1",
      "prototype.2", "coefficient.1", "coefficient.2"};

  /// Glorot-uniform weights, zero biases.
  static ModelParams init(const Config& config, Rng& rng);
  static ModelParams zeros(const Config& config);
  ModelParams zeros_like() const;

  std::array<Dense*, 7> layers();
  std::array<const Dense*, 7> layers() const;

  Eigen::Index parameter_count() const;
  /// Layer order as kLayerNames; within a layer the weight row-major, then the bias.
  Vector flatten() const;
  void assign(const Eigen::Ref<const Vector>& flat);

  /// Throws ShapeError unless every layer matches `config`.
  void check_shapes(const Config& config) const;

  ModelParams& operator+=(const ModelParams& other);
  ModelParams& operator*=(double s);
};

// ---------------------------------------------------------------------------
// Forward passes (pure)

struct ExtractorCache {
  Matrix input, pre1, h1, pre2, h2, concat, pre3;
  std::vector<Eigen::Index> argmax;  // per h2 column, lowest index on ties
};

/// N x F per-point features.
Matrix extract_features(const Matrix& channels, const ModelParams& params,
                        ExtractorCache* cache = nullptr);
inline Matrix extract_features(const PointCloud& cloud, const ModelParams& params) {
  return extract_features(cloud.channels, params);
}

struct MlpCache {
  Matrix input, pre1, h1, out;
};

PrototypeMatrix prototype_head(const Matrix& features, const ModelParams& params,
                               MlpCache* cache = nullptr);

/// k nearest neighbors of each sample in xyz (ties: lower index) with
/// normalized weights 1 / (distance + offset).
struct Neighborhoods {
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> indices;  // K x k
  Matrix weights;                                                       // K x k, rows sum to 1
};

Neighborhoods gather_neighbors(const Eigen::Ref<const Positions>& positions,
                               const SampledSet& samples, int k_neighbors, double idw_offset);

/// Inverse-distance-weighted mean of neighbor features, K x F.
Matrix aggregate_neighbors(const Matrix& features, const Neighborhoods& hoods);

CoefficientMatrix coefficient_head(const Matrix& features, const SampledSet& samples,
                                   const Eigen::Ref<const Positions>& positions,
                                   const ModelParams& params, int k_neighbors = 16,
                                   double idw_offset = 0.05, MlpCache* cache = nullptr,
                                   Neighborhoods* hoods_out = nullptr);

// ---------------------------------------------------------------------------
// Recorded forward + analytic backward

struct HeadOutputs {
  Matrix features;
  PrototypeMatrix prototypes;
  CoefficientMatrix coefficients;
};

struct HeadGradients {
  ModelParams params;
  Matrix features;  // dJ/dfeatures summed over both heads
};

/// Runs all three networks on one cloud and keeps what backward needs.
/// `params` must outlive the tape.
class HeadsTape {
 public:
  const HeadOutputs& forward(const PointCloud& cloud, const SampledSet& samples,
                             const ModelParams& params, int k_neighbors, double idw_offset);

  /// Throws StateError if forward has not run.
  HeadGradients backward(const Matrix& d_prototypes, const Matrix& d_coefficients) const;

  bool recorded() const { return state_.has_value(); }

 private:
  struct State {
    const ModelParams* params;
    HeadOutputs outputs;
    ExtractorCache extractor;
    MlpCache prototype;
    MlpCache coefficient;
    Neighborhoods hoods;
  };
  std::optional<State> state_;
};

// ---------------------------------------------------------------------------
// Checkpoints:
//   "PCKP" | u16 version | u32 L | L bytes config text | u64 P | P float64 params
// all little-endian, parameters in ModelParams::flatten order.

struct Checkpoint {
  Config config;
  ModelParams params;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protoseg
