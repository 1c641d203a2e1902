#include "protoseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "binary.hpp"
#include "protoseg/io.hpp"

namespace protoseg {
namespace {

Dense glorot(Eigen::Index in, Eigen::Index out, Rng& rng) {
  Dense d;
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  d.weight.resize(in, out);
  // Row-major fill so the draw order matches the checkpoint layout.
  for (Eigen::Index r = 0; r < in; ++r) {
    for (Eigen::Index c = 0; c < out; ++c) {
      d.weight(r, c) = rng.uniform(-limit, limit);
    }
  }
  d.bias = RowVector::Zero(out);
  return d;
}

Dense zero_dense(Eigen::Index in, Eigen::Index out) {
  return {Matrix::Zero(in, out), RowVector::Zero(out)};
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_grad(const Matrix& upstream, const Matrix& pre) {
  return (pre.array() > 0.0).select(upstream, 0.0);
}

// Backward through y = x * W + b; accumulates into grad and returns dx.
Matrix dense_backward(const Dense& layer, const Matrix& x, const Matrix& dy, Dense& grad) {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias += dy.colwise().sum();
  return dy * layer.weight.transpose();
}

struct LayerSpec {
  Eigen::Index in, out;
};

std::array<LayerSpec, 7> layer_specs(const Config& c) {
  return {{{c.in_channels, c.extractor_hidden1},
           {c.extractor_hidden1, c.extractor_hidden2},
           {2 * c.extractor_hidden2, c.n_features},
           {c.n_features, c.head_hidden},
           {c.head_hidden, c.n_prototypes},
           {c.n_features, c.head_hidden},
           {c.head_hidden, c.n_prototypes}}};
}

constexpr char kCheckpointMagic[4] = {'P', 'C', 'K', 'P'};
constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// ModelParams

ModelParams ModelParams::init(const Config& config, Rng& rng) {
  config.validate();
  ModelParams p;
  const auto specs = layer_specs(config);
  auto layers = p.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    *layers[i] = glorot(specs[i].in, specs[i].out, rng);
  }
  return p;
}

ModelParams ModelParams::zeros(const Config& config) {
  ModelParams p;
  const auto specs = layer_specs(config);
  auto layers = p.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    *layers[i] = zero_dense(specs[i].in, specs[i].out);
  }
  return p;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams p;
  auto dst = p.layers();
  const auto src = layers();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    *dst[i] = zero_dense(src[i]->in(), src[i]->out());
  }
  return p;
}

std::array<Dense*, 7> ModelParams::layers() {
  return {&ext1, &ext2, &ext3, &proto1, &proto2, &coef1, &coef2};
}

std::array<const Dense*, 7> ModelParams::layers() const {
  return {&ext1, &ext2, &ext3, &proto1, &proto2, &coef1, &coef2};
}

Eigen::Index ModelParams::parameter_count() const {
  Eigen::Index total = 0;
  for (const auto* l : layers()) {
    total += l->weight.size() + l->bias.size();
  }
  return total;
}

Vector ModelParams::flatten() const {
  Vector flat(parameter_count());
  Eigen::Index k = 0;
  for (const auto* l : layers()) {
    for (Eigen::Index r = 0; r < l->in(); ++r) {
      for (Eigen::Index c = 0; c < l->out(); ++c) {
        flat(k++) = l->weight(r, c);
      }
    }
    for (Eigen::Index c = 0; c < l->out(); ++c) {
      flat(k++) = l->bias(c);
    }
  }
  return flat;
}

void ModelParams::assign(const Eigen::Ref<const Vector>& flat) {
  if (flat.size() != parameter_count()) {
    throw ShapeError("ModelParams::assign: " + std::to_string(flat.size()) + " values for " +
                     std::to_string(parameter_count()) + " parameters");
  }
  Eigen::Index k = 0;
  for (auto* l : layers()) {
    for (Eigen::Index r = 0; r < l->in(); ++r) {
      for (Eigen::Index c = 0; c < l->out(); ++c) {
        l->weight(r, c) = flat(k++);
      }
    }
    for (Eigen::Index c = 0; c < l->out(); ++c) {
      l->bias(c) = flat(k++);
    }
  }
}

void ModelParams::check_shapes(const Config& config) const {
  const auto specs = layer_specs(config);
  const auto ls = layers();
  for (std::size_t i = 0; i < ls.size(); ++i) {
    if (ls[i]->in() != specs[i].in || ls[i]->out() != specs[i].out ||
        ls[i]->bias.size() != specs[i].out) {
      throw ShapeError("layer " + std::string(kLayerNames[i]) + " has weight " +
                       shape_string(ls[i]->in(), ls[i]->out()) + ", config expects " +
                       shape_string(specs[i].in, specs[i].out));
    }
  }
}

ModelParams& ModelParams::operator+=(const ModelParams& other) {
  auto dst = layers();
  const auto src = other.layers();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i]->weight += src[i]->weight;
    dst[i]->bias += src[i]->bias;
  }
  return *this;
}

ModelParams& ModelParams::operator*=(double s) {
  for (auto* l : layers()) {
    l->weight *= s;
    l->bias *= s;
  }
  return *this;
}

// ---------------------------------------------------------------------------
// Forward

Matrix extract_features(const Matrix& channels, const ModelParams& params, ExtractorCache* cache) {
  if (channels.cols() != params.ext1.in()) {
    throw ShapeError("extract_features: input " + shape_string(channels.rows(), channels.cols()) +
                     " but extractor expects " + std::to_string(params.ext1.in()) + " channels");
  }
  if (channels.rows() < 1) {
    throw ShapeError("extract_features: empty input");
  }
  const Matrix pre1 = params.ext1.apply(channels);
  const Matrix h1 = relu(pre1);
  const Matrix pre2 = params.ext2.apply(h1);
  const Matrix h2 = relu(pre2);

  const Eigen::Index n = h2.rows();
  const Eigen::Index width = h2.cols();
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(width));
  RowVector pooled(width);
  for (Eigen::Index c = 0; c < width; ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < n; ++r) {
      if (h2(r, c) > h2(best, c)) best = r;
    }
    argmax[static_cast<std::size_t>(c)] = best;
    pooled(c) = h2(best, c);
  }

  Matrix concat(n, 2 * width);
  concat.leftCols(width) = h2;
  concat.rightCols(width) = pooled.replicate(n, 1);
  const Matrix pre3 = params.ext3.apply(concat);
  Matrix features = relu(pre3);

  if (cache != nullptr) {
    *cache = {channels, pre1, h1, pre2, h2, concat, pre3, std::move(argmax)};
  }
  return features;
}

PrototypeMatrix prototype_head(const Matrix& features, const ModelParams& params, MlpCache* cache) {
  if (features.cols() != params.proto1.in()) {
    throw ShapeError("prototype_head: features " + shape_string(features.rows(), features.cols()) +
                     " but head expects width " + std::to_string(params.proto1.in()));
  }
  const Matrix pre1 = params.proto1.apply(features);
  const Matrix h1 = relu(pre1);
  PrototypeMatrix out{params.proto2.apply(h1)};
  if (cache != nullptr) {
    *cache = {features, pre1, h1, out.values};
  }
  return out;
}

Neighborhoods gather_neighbors(const Eigen::Ref<const Positions>& positions,
                               const SampledSet& samples, int k_neighbors, double idw_offset) {
  const Eigen::Index n = positions.rows();
  if (k_neighbors < 1) {
    throw ArgumentError("gather_neighbors: k_neighbors must be positive");
  }
  // Small clouds use every point as the neighborhood.
  const Eigen::Index k = std::min<Eigen::Index>(k_neighbors, n);
  Neighborhoods hoods;
  hoods.indices.resize(samples.size(), k);
  hoods.weights.resize(samples.size(), k);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index s = 0; s < samples.size(); ++s) {
    const Vector d2 = (positions.rowwise() - samples.coordinates.row(s)).rowwise().squaredNorm();
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        return d2(a) < d2(b) || (d2(a) == d2(b) && a < b);
                      });
    double total = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto idx = order[static_cast<std::size_t>(j)];
      hoods.indices(s, j) = idx;
      const double w = 1.0 / (std::sqrt(d2(idx)) + idw_offset);
      hoods.weights(s, j) = w;
      total += w;
    }
    hoods.weights.row(s) /= total;
  }
  return hoods;
}

Matrix aggregate_neighbors(const Matrix& features, const Neighborhoods& hoods) {
  Matrix out = Matrix::Zero(hoods.indices.rows(), features.cols());
  for (Eigen::Index s = 0; s < hoods.indices.rows(); ++s) {
    for (Eigen::Index j = 0; j < hoods.indices.cols(); ++j) {
      out.row(s) += hoods.weights(s, j) * features.row(hoods.indices(s, j));
    }
  }
  return out;
}

CoefficientMatrix coefficient_head(const Matrix& features, const SampledSet& samples,
                                   const Eigen::Ref<const Positions>& positions,
                                   const ModelParams& params, int k_neighbors, double idw_offset,
                                   MlpCache* cache, Neighborhoods* hoods_out) {
  if (features.rows() != positions.rows()) {
    throw ShapeError("coefficient_head: features " + shape_string(features.rows(), features.cols()) +
                     " for " + std::to_string(positions.rows()) + " positions");
  }
  if (features.cols() != params.coef1.in()) {
    throw ShapeError("coefficient_head: feature width " + std::to_string(features.cols()) +
                     " but head expects " + std::to_string(params.coef1.in()));
  }
  Neighborhoods hoods = gather_neighbors(positions, samples, k_neighbors, idw_offset);
  const Matrix aggregated = aggregate_neighbors(features, hoods);
  const Matrix pre1 = params.coef1.apply(aggregated);
  const Matrix h1 = relu(pre1);
  // tanh rounds to +-1 in double beyond |x| ~ 19; keep the range open.
  constexpr double kEdge = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  CoefficientMatrix out{params.coef2.apply(h1).array().tanh().cwiseMax(-kEdge).cwiseMin(kEdge).matrix()};
  if (cache != nullptr) {
    *cache = {aggregated, pre1, h1, out.values};
  }
  if (hoods_out != nullptr) {
    *hoods_out = std::move(hoods);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape

const HeadOutputs& HeadsTape::forward(const PointCloud& cloud, const SampledSet& samples,
                                      const ModelParams& params, int k_neighbors,
                                      double idw_offset) {
  State s;
  s.params = &params;
  s.outputs.features = extract_features(cloud.channels, params, &s.extractor);
  s.outputs.prototypes = prototype_head(s.outputs.features, params, &s.prototype);
  s.outputs.coefficients = coefficient_head(s.outputs.features, samples, cloud.positions, params,
                                            k_neighbors, idw_offset, &s.coefficient, &s.hoods);
  state_ = std::move(s);
  return state_->outputs;
}

HeadGradients HeadsTape::backward(const Matrix& d_prototypes, const Matrix& d_coefficients) const {
  if (!state_) {
    throw StateError("HeadsTape::backward called before forward");
  }
  const State& s = *state_;
  const ModelParams& p = *s.params;
  if (d_prototypes.rows() != s.outputs.prototypes.values.rows() ||
      d_prototypes.cols() != s.outputs.prototypes.values.cols() ||
      d_coefficients.rows() != s.outputs.coefficients.values.rows() ||
      d_coefficients.cols() != s.outputs.coefficients.values.cols()) {
    throw ShapeError("HeadsTape::backward: upstream gradient shapes disagree with forward outputs");
  }

  HeadGradients g{p.zeros_like(), Matrix::Zero(s.outputs.features.rows(), s.outputs.features.cols())};

  // Prototype head.
  {
    const Matrix dh1 = dense_backward(p.proto2, s.prototype.h1, d_prototypes, g.params.proto2);
    const Matrix dpre1 = relu_grad(dh1, s.prototype.pre1);
    g.features += dense_backward(p.proto1, s.prototype.input, dpre1, g.params.proto1);
  }

  // Coefficient head: tanh, MLP, then scatter through the IDW mean.
  {
    const Matrix& c = s.coefficient.out;
    const Matrix dpre2 = (d_coefficients.array() * (1.0 - c.array().square())).matrix();
    const Matrix dh1 = dense_backward(p.coef2, s.coefficient.h1, dpre2, g.params.coef2);
    const Matrix dpre1 = relu_grad(dh1, s.coefficient.pre1);
    const Matrix dagg = dense_backward(p.coef1, s.coefficient.input, dpre1, g.params.coef1);
    for (Eigen::Index k = 0; k < s.hoods.indices.rows(); ++k) {
      for (Eigen::Index j = 0; j < s.hoods.indices.cols(); ++j) {
        g.features.row(s.hoods.indices(k, j)) += s.hoods.weights(k, j) * dagg.row(k);
      }
    }
  }

  // Extractor: ReLU, split the concat, route the pooled half to the argmax.
  {
    const ExtractorCache& e = s.extractor;
    const Matrix dpre3 = relu_grad(g.features, e.pre3);
    const Matrix dconcat = dense_backward(p.ext3, e.concat, dpre3, g.params.ext3);
    const Eigen::Index width = e.h2.cols();
    Matrix dh2 = dconcat.leftCols(width);
    const RowVector dpooled = dconcat.rightCols(width).colwise().sum();
    for (Eigen::Index c = 0; c < width; ++c) {
      dh2(e.argmax[static_cast<std::size_t>(c)], c) += dpooled(c);
    }
    const Matrix dpre2 = relu_grad(dh2, e.pre2);
    const Matrix dh1 = dense_backward(p.ext2, e.h1, dpre2, g.params.ext2);
    const Matrix dpre1 = relu_grad(dh1, e.pre1);
    dense_backward(p.ext1, e.input, dpre1, g.params.ext1);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  checkpoint.params.check_shapes(checkpoint.config);
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.uint(kCheckpointVersion);
  const std::string text = checkpoint.config.to_text();
  w.uint(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  const Vector flat = checkpoint.params.flatten();
  w.uint(static_cast<std::uint64_t>(flat.size()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    w.f64(flat(i));
  }
  detail::write_file(path.string(), w.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path.string());
  detail::ByteReader r(bytes);
  if (!r.has(4)) {
    throw ParseError(ParseErrorKind::kTruncated, "checkpoint: file shorter than magic");
  }
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw ParseError(ParseErrorKind::kBadMagic, "checkpoint: bad magic, expected PCKP");
  }
  if (!r.has(6)) {
    throw ParseError(ParseErrorKind::kTruncated, "checkpoint: truncated header");
  }
  const auto version = r.uint<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw ParseError(ParseErrorKind::kBadVersion, "checkpoint: unsupported version " + std::to_string(version));
  }
  const auto text_len = r.uint<std::uint32_t>();
  if (!r.has(text_len + 8)) {
    throw ParseError(ParseErrorKind::kTruncated, "checkpoint: truncated config block");
  }
  std::string text(text_len, '\0');
  r.bytes(text.data(), text_len);
  Checkpoint ck;
  ck.config = Config::parse(text);
  ck.config.validate();
  const auto count = r.uint<std::uint64_t>();
  ck.params = ModelParams::zeros(ck.config);
  if (count != static_cast<std::uint64_t>(ck.params.parameter_count()) || r.remaining() != count * 8) {
    throw ParseError(ParseErrorKind::kTruncated, "checkpoint: parameter block does not match config");
  }
  Vector flat(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    flat(i) = r.f64();
    if (!std::isfinite(flat(i))) {
      throw ParseError(ParseErrorKind::kNonFinite, "checkpoint: non-finite parameter");
    }
  }
  ck.params.assign(flat);
  return ck;
}

}  // namespace protoseg
