#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace protoseg {

// Dense matrices are column-major Eigen types; rows index points/samples.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// Boolean masks over points. MaskMatrix rows are masks.
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Errors

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

// ---------------------------------------------------------------------------
// Domain types

inline constexpr int kUnlabeled = -1;
inline constexpr Eigen::Index kDefaultChannels = 9;

/// N points with I channels. By convention channels 0..2 are XYZ, 3..5 RGB in
/// [0,1], 6..8 the room-normalized location in [0,1]. `positions` holds the
/// metric coordinates used for sampling and neighborhoods, which may differ
/// from channels 0..2 once a block recenters them.
struct PointCloud {
  Positions positions;
  Matrix channels;
  std::optional<std::vector<int>> instance_labels;

  Eigen::Index size() const { return positions.rows(); }
  Eigen::Index channel_count() const { return channels.cols(); }
  bool has_labels() const { return instance_labels.has_value(); }

  /// Builds a cloud whose positions are channels 0..2.
  static PointCloud from_channels(Matrix channels,
                                  std::optional<std::vector<int>> labels = std::nullopt);

  /// Throws ArgumentError/ShapeError when an invariant is broken.
  void validate() const;
};

struct SampledSet {
  std::vector<Eigen::Index> indices;
  Positions coordinates;

  Eigen::Index size() const { return static_cast<Eigen::Index>(indices.size()); }
};

struct PrototypeMatrix {
  Matrix values;  // N x M
};

struct CoefficientMatrix {
  Matrix values;  // K x M
};

struct MaskSet {
  Matrix logits;         // K x N
  Matrix probabilities;  // K x N
  MaskMatrix masks;      // K x N, thresholded
  Vector scores;         // K
  std::vector<Eigen::Index> kept;
};

/// One selected mask over the points of the cloud it was predicted on.
struct InstancePrediction {
  Mask mask;
  double score = 0.0;
  Eigen::Index source_sample = -1;
};

// ---------------------------------------------------------------------------
// Dense primitives

/// Matrix product with double-precision accumulation regardless of Scalar.
template <typename DerivedA, typename DerivedB>
auto matmul(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b)
    -> MatrixX<typename DerivedA::Scalar> {
  using Scalar = typename DerivedA::Scalar;
  static_assert(std::is_same_v<Scalar, typename DerivedB::Scalar>,
                "matmul operands must share a scalar type");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_string(a.rows(), a.cols()) +
                     " x " + shape_string(b.rows(), b.cols()));
  }
  if constexpr (std::is_same_v<Scalar, double>) {
    return a * b;
  } else {
    return (a.template cast<double>() * b.template cast<double>()).template cast<Scalar>();
  }
}

/// Numerically stable logistic function.
template <typename Scalar>
Scalar logistic(Scalar x) {
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Derived>
auto logistic(const Eigen::MatrixBase<Derived>& x) -> MatrixX<typename Derived::Scalar> {
  return x.array().logistic().matrix();
}

}  // namespace protoseg
