#include "doctest.h"
#include "protoseg/protoseg.hpp"

using namespace protoseg;

TEST_CASE("matmul identity, zero and hand example") {
  Matrix m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  CHECK(matmul(Matrix::Identity(3, 3), m) == m);

  Matrix any = Matrix::Random(3, 4);
  CHECK(matmul(Matrix::Zero(2, 3), any) == Matrix::Zero(2, 4));

  Matrix a(2, 2), b(2, 1), expected(2, 1);
  a << 1, 2, 3, 4;
  b << 5, 6;
  expected << 17, 39;
  CHECK(matmul(a, b) == expected);
}

TEST_CASE("matmul rejects mismatched shapes and names both") {
  try {
    matmul(Matrix::Zero(2, 3), Matrix::Zero(4, 1));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("(2x3)") != std::string::npos);
    CHECK(what.find("(4x1)") != std::string::npos);
  }
}

TEST_CASE("matmul accumulates float inputs in double") {
  MatrixX<float> a(1, 3), b(3, 1);
  a << 1e8f, 1.0f, -1e8f;
  b << 1.0f, 1.0f, 1.0f;
  CHECK(matmul(a, b)(0, 0) == doctest::Approx(1.0f));
}

TEST_CASE("matmul is pure") {
  Rng rng(3);
  Matrix a(5, 7), b(7, 4);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-1, 1);
  const Matrix c1 = matmul(a, b);
  const Matrix c2 = matmul(a, b);
  CHECK(std::memcmp(c1.data(), c2.data(), sizeof(double) * c1.size()) == 0);
}

TEST_CASE("seeded rng is deterministic and seed-sensitive") {
  Rng a(1), b(1), c(2);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);
}

TEST_CASE("rng known first outputs") {
  // SplitMix64 reference values for seed 0.
  Rng r(0);
  CHECK(r.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(r.next_u64() == 0x6e789e6aa1b965f4ULL);
}

TEST_CASE("uniform draws average to one half") {
  Rng rng(42);
  double sum = 0.0;
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / kDraws - 0.5) <= 0.01);
}

TEST_CASE("below stays in range and shuffle permutes") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) CHECK(rng.below(7) < 7);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 10; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("logistic symmetry") {
  for (double x = -30.0; x <= 30.0; x += 0.37) {
    CHECK(std::abs(logistic(x) + logistic(-x) - 1.0) <= 1e-12);
  }
  CHECK(logistic(0.0) == 0.5);
}

TEST_CASE("point cloud invariants") {
  Matrix ch = Matrix::Constant(4, 9, 0.5);
  PointCloud ok = PointCloud::from_channels(ch, std::vector<int>{0, 0, 1, -1});
  CHECK_NOTHROW(ok.validate());
  CHECK(ok.positions.row(2) == ch.row(2).leftCols<3>());

  PointCloud bad_rgb = ok;
  bad_rgb.channels(1, 4) = 1.5;
  CHECK_THROWS_AS(bad_rgb.validate(), ArgumentError);

  PointCloud bad_labels = ok;
  bad_labels.instance_labels->pop_back();
  CHECK_THROWS_AS(bad_labels.validate(), ShapeError);

  PointCloud empty = PointCloud::from_channels(Matrix(0, 9));
  CHECK_THROWS_AS(empty.validate(), ArgumentError);
}

TEST_CASE("config defaults match the published setup") {
  const Config c;
  CHECK(c.n_features == 64);
  CHECK(c.n_prototypes == 128);
  CHECK(c.n_samples == 64);
  CHECK(c.sampling_mode == "fps-xyz");
  CHECK(c.mask_threshold == 0.3);
  CHECK(c.block_size == 1.0);
  CHECK(c.stride == 0.5);
  CHECK(c.points_per_block == 4096);
  CHECK(c.lr == 0.001);
  CHECK(c.batch_size == 16);
  CHECK(c.epochs == 65);
  CHECK(c.nms_iou == 0.5);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config parse, override and round trip") {
  const Config c = Config::parse("# desk run\nepochs = 5\n  mask_threshold=0.4 \n\nseed = 99 # trailing\n");
  CHECK(c.epochs == 5);
  CHECK(c.mask_threshold == 0.4);
  CHECK(c.seed == 99);
  CHECK(c.n_prototypes == 128);

  const Config back = Config::parse(c.to_text());
  CHECK(back.to_text() == c.to_text());

  CHECK_THROWS_AS(Config::parse("bogus = 1"), ArgumentError);
  CHECK_THROWS_AS(Config::parse("epochs = five"), ArgumentError);
  CHECK_THROWS_AS(Config::parse("epochs"), ArgumentError);
}

TEST_CASE("config validation") {
  Config c;
  c.mask_threshold = 1.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = Config{};
  c.stride = 2.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = Config{};
  c.n_samples = 5000;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = Config{};
  c.nms_iou = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}
