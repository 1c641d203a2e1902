#include "doctest.h"
#include "oracles.hpp"
#include "protoseg/protoseg.hpp"

using namespace protoseg;

namespace {

Mask mask_of(Eigen::Index n, std::initializer_list<Eigen::Index> on) {
  Mask m = Mask::Constant(n, false);
  for (auto i : on) m(i) = true;
  return m;
}

Mask range(Eigen::Index n, Eigen::Index lo, Eigen::Index hi) {
  Mask m = Mask::Constant(n, false);
  m.segment(lo, hi - lo).setConstant(true);
  return m;
}

}  // namespace

TEST_CASE("iou examples") {
  const Mask a = mask_of(10, {0, 1, 2, 3});
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, mask_of(10, {5, 6})) == 0.0);
  CHECK(iou(a, mask_of(10, {0, 1, 8, 9})) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(Mask::Constant(4, false), Mask::Constant(4, false)) == 0.0);
  CHECK_THROWS_AS(iou(a, Mask::Constant(3, false)), ShapeError);
}

TEST_CASE("coverage examples") {
  const std::vector<Mask> gt{range(40, 0, 10), range(40, 10, 40)};
  CHECK(coverage(gt, {{gt[0], 1.0}, {gt[1], 1.0}}).m_cov == 1.0);
  const Coverage none = coverage(gt, {});
  CHECK(none.m_cov == 0.0);
  CHECK(none.m_wcov == 0.0);

  // Second prediction covers 15 of the 30 gt points exactly: IoU 0.5.
  const Coverage c = coverage(gt, {{gt[0], 0.9}, {range(40, 10, 25), 0.8}});
  CHECK(c.m_cov == doctest::Approx(0.75));
  CHECK(c.m_wcov == doctest::Approx(0.625));
  CHECK_THROWS_AS(coverage({}, {}), ArgumentError);
}

TEST_CASE("precision and recall examples") {
  const std::vector<Mask> gt{mask_of(10, {0, 1, 2, 3}), mask_of(10, {6, 7, 8})};
  const PrecisionRecall perfect = precision_recall(gt, {{gt[0], 0.5}, {gt[1], 0.4}});
  CHECK(perfect.m_prec == 1.0);
  CHECK(perfect.m_rec == 1.0);

  const PrecisionRecall third = precision_recall({gt[0]}, {{mask_of(10, {0, 1, 8, 9}), 0.9}});
  CHECK(third.m_prec == 0.0);
  CHECK(third.m_rec == 0.0);

  const PrecisionRecall dup =
      precision_recall(gt, {{gt[0], 0.9}, {mask_of(10, {0, 1, 2}), 0.8}});
  CHECK(dup.true_positives == 1);
  CHECK(dup.m_prec == 0.5);
  CHECK(dup.m_rec == 0.5);

  const PrecisionRecall empty = precision_recall({}, {});
  CHECK(empty.m_prec == 0.0);
  CHECK(empty.m_rec == 0.0);
}

TEST_CASE("metrics match the exhaustive oracle on random scenes") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 60;
    std::vector<int> labels(static_cast<std::size_t>(n));
    const int n_gt = 1 + static_cast<int>(rng.below(5));
    for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_gt + 1))) - 1;
    const std::vector<Mask> gt = instances_from_labels(labels);
    if (gt.empty()) continue;
    std::vector<ScoredMask> preds;
    const int n_pred = static_cast<int>(rng.below(7));
    for (int p = 0; p < n_pred; ++p) {
      Mask m = gt[rng.below(gt.size())];
      for (Eigen::Index i = 0; i < n; ++i) {
        if (rng.uniform() < 0.15) m(i) = !m(i);
      }
      preds.push_back({m, rng.uniform()});
    }
    std::vector<oracle::PointSet> gs, ps;
    for (const auto& g : gt) gs.push_back(oracle::to_set(g));
    for (const auto& p : preds) ps.push_back(oracle::to_set(p.mask));
    const auto expected = oracle::exhaustive_metrics(gs, ps, 0.5);
    const Coverage c = coverage(gt, preds);
    const PrecisionRecall pr = precision_recall(gt, preds);
    CHECK(std::abs(c.m_cov - expected.m_cov) <= 1e-12);
    CHECK(std::abs(c.m_wcov - expected.m_wcov) <= 1e-12);
    CHECK(std::abs(pr.m_prec - expected.m_prec) <= 1e-12);
    CHECK(std::abs(pr.m_rec - expected.m_rec) <= 1e-12);
  }
}

TEST_CASE("metrics are invariant under relabeling") {
  const std::vector<int> labels{0, 0, 0, 1, 1, 2, 2, 2, 2, -1};
  const std::vector<int> relabeled{7, 7, 7, 3, 3, 5, 5, 5, 5, -1};
  const std::vector<ScoredMask> preds{{mask_of(10, {0, 1, 2}), 0.9}, {mask_of(10, {5, 6, 7}), 0.8},
                                      {mask_of(10, {3, 9}), 0.3}};
  const auto a = precision_recall(instances_from_labels(labels), preds);
  const auto b = precision_recall(instances_from_labels(relabeled), preds);
  CHECK(a.m_prec == b.m_prec);
  CHECK(a.m_rec == b.m_rec);
  CHECK(coverage(instances_from_labels(labels), preds).m_cov ==
        coverage(instances_from_labels(relabeled), preds).m_cov);
}

TEST_CASE("duplicating a true positive never raises precision") {
  const std::vector<Mask> gt{range(20, 0, 5), range(20, 5, 12)};
  std::vector<ScoredMask> preds{{gt[0], 0.9}, {range(20, 12, 20), 0.5}};
  const double before = precision_recall(gt, preds).m_prec;
  preds.push_back({gt[0], 0.95});
  CHECK(precision_recall(gt, preds).m_prec <= before);
}

TEST_CASE("equal-size instances give mWCov = mCov") {
  const std::vector<Mask> gt{range(30, 0, 10), range(30, 10, 20), range(30, 20, 30)};
  const std::vector<ScoredMask> preds{{range(30, 0, 8), 0.9}, {range(30, 15, 25), 0.5}};
  const Coverage c = coverage(gt, preds);
  CHECK(c.m_wcov == doctest::Approx(c.m_cov).epsilon(1e-12));
}

TEST_CASE("evaluate pools scenes and formats a stable table") {
  const std::vector<int> labels{0, 0, 0, 1, 1, 1};
  const auto gt = instances_from_labels(labels);
  std::vector<EvalInput> scenes;
  scenes.push_back({"a", gt, {{gt[0], 0.9}, {gt[1], 0.8}}});
  scenes.push_back({"b", gt, {{gt[0], 0.9}}});
  const EvalReport r = evaluate(scenes);
  CHECK(r.n_gt == 4);
  CHECK(r.n_pred == 3);
  CHECK(r.n_matched == 3);
  CHECK(r.m_rec == doctest::Approx(0.75));
  CHECK(r.m_prec == 1.0);
  CHECK(r.m_cov == doctest::Approx(0.75));
  REQUIRE(r.scenes.size() == 2);
  CHECK(r.scenes[1].m_rec == 0.5);
  CHECK(r.n_matched <= std::min(r.n_gt, r.n_pred));
  const std::string table = format_report(r);
  CHECK(table == format_report(evaluate(scenes)));
  CHECK(table.find("mCov") != std::string::npos);
  CHECK(table.find("all") != std::string::npos);
}

TEST_CASE("predictions outside the scene are rejected") {
  CHECK_THROWS_AS(masks_from_predictions({{0.5, {0, 9}}}, 5), IndexError);
}
