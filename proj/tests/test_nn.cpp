#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "protoseg/protoseg.hpp"

using namespace protoseg;

namespace {

Config narrow_config() {
  Config c;
  c.extractor_hidden1 = 6;
  c.extractor_hidden2 = 5;
  c.n_features = 4;
  c.head_hidden = 5;
  c.n_prototypes = 3;
  c.n_samples = 8;
  c.k_neighbors = 4;
  return c;
}

Matrix random_channels(Rng& rng, Eigen::Index n) {
  Matrix ch(n, 9);
  for (Eigen::Index i = 0; i < ch.size(); ++i) ch.data()[i] = rng.uniform();
  return ch;
}

ModelParams random_params(const Config& config, std::uint64_t seed) {
  Rng rng(seed);
  return ModelParams::init(config, rng);
}

}  // namespace

TEST_CASE("dense layer hand example") {
  Dense d{Matrix(2, 1), RowVector(1)};
  d.weight << 2, -1;
  d.bias << 0.5;
  Matrix x(1, 2);
  x << 3, 4;
  CHECK(d.apply(x)(0, 0) == doctest::Approx(2.5));
}

TEST_CASE("parameter layout and flatten round trip") {
  const Config c;
  const ModelParams p = random_params(c, 1);
  CHECK(p.parameter_count() == 320 + 2112 + 8256 + 8320 + 16512 + 8320 + 16512);
  CHECK_NOTHROW(p.check_shapes(c));
  const Vector flat = p.flatten();
  CHECK(flat(0) == p.ext1.weight(0, 0));
  CHECK(flat(1) == p.ext1.weight(0, 1));
  CHECK(flat(9 * 32) == p.ext1.bias(0));
  ModelParams q = ModelParams::zeros(c);
  q.assign(flat);
  CHECK(q.flatten() == flat);
  CHECK_THROWS_AS(p.check_shapes(narrow_config()), ShapeError);
}

TEST_CASE("identical points give identical feature rows") {
  Rng rng(2);
  Matrix ch = random_channels(rng, 10);
  ch.row(7) = ch.row(3);
  const Matrix f = extract_features(ch, random_params(Config{}, 3));
  CHECK(f.row(7) == f.row(3));
}

TEST_CASE("extractor is permutation equivariant") {
  Rng rng(4);
  const Matrix ch = random_channels(rng, 20);
  std::vector<Eigen::Index> perm(20);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  rng.shuffle(perm);
  Matrix shuffled(20, 9);
  for (Eigen::Index i = 0; i < 20; ++i) shuffled.row(i) = ch.row(perm[static_cast<std::size_t>(i)]);
  const ModelParams p = random_params(Config{}, 5);
  const Matrix f = extract_features(ch, p);
  const Matrix g = extract_features(shuffled, p);
  for (Eigen::Index i = 0; i < 20; ++i) {
    CHECK((g.row(i) - f.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("zero weights give a constant network") {
  const Config c;
  ModelParams p = ModelParams::zeros(c);
  p.proto2.bias.setConstant(0.25);
  Rng rng(6);
  const Matrix ch = random_channels(rng, 12);
  const Matrix f = extract_features(ch, p);
  CHECK(f == Matrix::Zero(12, c.n_features));
  const PrototypeMatrix proto = prototype_head(f, p);
  CHECK(proto.values == Matrix::Constant(12, c.n_prototypes, 0.25));
}

TEST_CASE("prototype head on a single point has shape 1 x M") {
  const Config c;
  const ModelParams p = random_params(c, 7);
  Rng rng(8);
  const Matrix ch = random_channels(rng, 6);
  const Matrix f = extract_features(ch, p);
  const PrototypeMatrix all = prototype_head(f, p);
  const PrototypeMatrix one = prototype_head(f.row(2), p);
  CHECK(one.values.rows() == 1);
  CHECK(one.values.cols() == c.n_prototypes);
  CHECK((one.values - all.values.row(2)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("coefficients stay strictly inside (-1, 1)") {
  const Config c;
  ModelParams p = random_params(c, 9);
  p *= 50.0;
  Rng rng(10);
  const PointCloud cloud = PointCloud::from_channels(random_channels(rng, 40));
  const SampledSet s = farthest_point_sample(cloud.positions, 16, 0);
  const Matrix f = extract_features(cloud.channels, p);
  const CoefficientMatrix coef = coefficient_head(f, s, cloud.positions, p);
  CHECK(coef.values.cwiseAbs().maxCoeff() < 1.0);
  CHECK(coef.values.rows() == 16);
}

TEST_CASE("samples at identical coordinates get identical coefficients") {
  const Config c;
  const ModelParams p = random_params(c, 11);
  Rng rng(12);
  const PointCloud cloud = PointCloud::from_channels(random_channels(rng, 30));
  SampledSet s;
  s.indices = {4, 4};
  s.coordinates = Positions(2, 3);
  s.coordinates.row(0) = cloud.positions.row(4);
  s.coordinates.row(1) = cloud.positions.row(4);
  const CoefficientMatrix coef = coefficient_head(extract_features(cloud.channels, p), s, cloud.positions, p);
  CHECK(coef.values.row(0) == coef.values.row(1));
}

TEST_CASE("neighborhood aggregation with k = N matches brute-force IDW mean") {
  Rng rng(13);
  const Eigen::Index n = 9;
  Positions pos(n, 3);
  for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = rng.uniform();
  Matrix feats(n, 4);
  for (Eigen::Index i = 0; i < feats.size(); ++i) feats.data()[i] = rng.uniform(-1, 1);
  const SampledSet s = farthest_point_sample(pos, 3, 0);
  const Neighborhoods hoods = gather_neighbors(pos, s, static_cast<int>(n), 0.05);
  const Matrix agg = aggregate_neighbors(feats, hoods);
  for (Eigen::Index k = 0; k < 3; ++k) {
    RowVector expected = RowVector::Zero(4);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = 1.0 / ((pos.row(i) - s.coordinates.row(k)).norm() + 0.05);
      expected += w * feats.row(i);
      total += w;
    }
    expected /= total;
    CHECK((agg.row(k) - expected).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(hoods.weights.row(k).sum() == doctest::Approx(1.0));
  }
  // k larger than the cloud uses every point.
  CHECK(gather_neighbors(pos, s, 100, 0.05).indices.cols() == n);
}

TEST_CASE("coefficient head ignores points outside every neighborhood") {
  const Config c;
  const ModelParams p = random_params(c, 14);
  Rng rng(15);
  Matrix ch = random_channels(rng, 30);
  const PointCloud cloud = PointCloud::from_channels(ch);
  SampledSet s = farthest_point_sample(cloud.positions, 4, 0);
  const Neighborhoods hoods = gather_neighbors(cloud.positions, s, c.k_neighbors, c.idw_offset);
  const Matrix f = extract_features(ch, p);
  const CoefficientMatrix base = coefficient_head(f, s, cloud.positions, p);

  std::vector<bool> used(30, false);
  for (Eigen::Index i = 0; i < hoods.indices.size(); ++i) used[static_cast<std::size_t>(hoods.indices.data()[i])] = true;
  Matrix f2 = f;
  for (Eigen::Index i = 0; i < 30; ++i) {
    if (!used[static_cast<std::size_t>(i)]) f2.row(i).setConstant(123.0);
  }
  CHECK(coefficient_head(f2, s, cloud.positions, p).values == base.values);
}

TEST_CASE("backward before forward is a state error") {
  HeadsTape tape;
  CHECK_FALSE(tape.recorded());
  CHECK_THROWS_AS(tape.backward(Matrix::Zero(1, 1), Matrix::Zero(1, 1)), StateError);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  const Config c;
  const ModelParams p = random_params(c, 16);
  Rng rng(17);
  const PointCloud cloud = oracle::two_instance_cloud(rng, 32);
  const SampledSet s = farthest_point_sample(cloud.positions, 8, 0);
  HeadsTape tape;
  const HeadOutputs& out = tape.forward(cloud, s, p, c.k_neighbors, c.idw_offset);
  const HeadGradients g = tape.backward(Matrix::Zero(out.prototypes.values.rows(), out.prototypes.values.cols()),
                                        Matrix::Zero(out.coefficients.values.rows(), out.coefficients.values.cols()));
  CHECK(g.params.flatten().cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.features.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tanh passes a unit factor at zero pre-activation") {
  const Config c;
  ModelParams p = random_params(c, 18);
  p.coef2.weight.setZero();
  p.coef2.bias.setZero();
  Rng rng(19);
  const PointCloud cloud = oracle::two_instance_cloud(rng, 16);
  const SampledSet s = farthest_point_sample(cloud.positions, 4, 0);
  HeadsTape tape;
  const HeadOutputs& out = tape.forward(cloud, s, p, c.k_neighbors, c.idw_offset);
  CHECK(out.coefficients.values == Matrix::Zero(4, c.n_prototypes));
  Matrix upstream(4, c.n_prototypes);
  for (Eigen::Index i = 0; i < upstream.size(); ++i) upstream.data()[i] = rng.uniform(-1, 1);
  const HeadGradients g = tape.backward(Matrix::Zero(16, c.n_prototypes), upstream);
  const RowVector expected = upstream.colwise().sum();
  CHECK((g.params.coef2.bias - expected).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("every parameter gradient matches central differences (narrow widths)") {
  const Config c = narrow_config();
  Rng rng(20);
  for (int trial = 0; trial < 3; ++trial) {
    const PointCloud cloud = oracle::two_instance_cloud(rng, 32);
    const ModelParams p = random_params(c, 100 + static_cast<std::uint64_t>(trial));
    std::vector<Eigen::Index> all(static_cast<std::size_t>(p.parameter_count()));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    const auto result = oracle::check_block_gradient(cloud, p, c, trial, all);
    CHECK(result.checked == p.parameter_count());
    CHECK(result.max_relative_error <= 1e-4);
  }
}

TEST_CASE("full-width gradients match central differences on sampled coordinates") {
  const Config c;
  Rng rng(21);
  const PointCloud cloud = oracle::two_instance_cloud(rng, 32);
  const ModelParams p = random_params(c, 22);
  std::vector<Eigen::Index> coords;
  for (int i = 0; i < 300; ++i) {
    coords.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.parameter_count()))));
  }
  const auto result = oracle::check_block_gradient(cloud, p, c, 0, coords);
  CHECK(result.max_relative_error <= 1e-4);
}

TEST_CASE("checkpoint round trip and format errors") {
  const auto dir = std::filesystem::temp_directory_path() / "protoseg_nn_ckpt";
  std::filesystem::create_directories(dir);
  Config c = narrow_config();
  c.seed = 77;
  const Checkpoint ck{c, random_params(c, 23)};
  save_checkpoint(ck, dir / "a.pckp");
  const Checkpoint back = load_checkpoint(dir / "a.pckp");
  CHECK(back.params.flatten() == ck.params.flatten());
  CHECK(back.config.to_text() == c.to_text());

  std::ifstream in(dir / "a.pckp", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PCKP");
  bytes.resize(bytes.size() - 8);
  std::ofstream(dir / "short.pckp", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.pckp"), ParseError);
  bytes[0] = 'X';
  std::ofstream(dir / "magic.pckp", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.pckp"), ParseError);
}
