#pragma once

#include <string>
#include <vector>

#include "protoseg/core.hpp"
#include "protoseg/io.hpp"

namespace protoseg {

/// |a & b| / |a | b|, 0 when both are empty.
double iou(const Mask& a, const Mask& b);

struct ScoredMask {
  Mask mask;
  double score = 0.0;
};

/// Ground-truth instance masks from per-point labels; ids < 0 are ignored.
/// Masks are ordered by ascending label.
std::vector<Mask> instances_from_labels(const std::vector<int>& labels);

std::vector<ScoredMask> masks_from_predictions(const std::vector<PredictedInstance>& predictions,
                                               Eigen::Index n_points);

struct Coverage {
  double m_cov = 0.0;
  double m_wcov = 0.0;
};

/// mCov: mean over gt of the best prediction IoU; mWCov weights by gt size.
Coverage coverage(const std::vector<Mask>& gt, const std::vector<ScoredMask>& predictions);

struct PrecisionRecall {
  double m_prec = 0.0;
  double m_rec = 0.0;
  Eigen::Index true_positives = 0;
};

/// Predictions visited by descending score (ties: lower index). A
/// prediction is a true positive when its best-IoU gt (ties: lower index)
/// reaches `iou_thresh` and has not been claimed yet.
PrecisionRecall precision_recall(const std::vector<Mask>& gt, const std::vector<ScoredMask>& predictions,
                                 double iou_thresh = 0.5);

struct SceneEval {
  std::string name;
  double m_cov = 0.0, m_wcov = 0.0, m_rec = 0.0, m_prec = 0.0;
  Eigen::Index n_gt = 0, n_pred = 0, n_matched = 0;
};

/// Class-agnostic report. Coverage averages over every gt instance of every
/// scene; precision and recall pool true positives across scenes.
struct EvalReport {
  double m_cov = 0.0, m_wcov = 0.0, m_rec = 0.0, m_prec = 0.0;
  Eigen::Index n_gt = 0, n_pred = 0, n_matched = 0;
  std::vector<SceneEval> scenes;
};

struct EvalInput {
  std::string name;
  std::vector<Mask> gt;
  std::vector<ScoredMask> predictions;
};

EvalReport evaluate(const std::vector<EvalInput>& scenes, double iou_thresh = 0.5);

/// Fixed-width table, columns mCov mWCov mRec mPrec then counts.
std::string format_report(const EvalReport& report);

}  // namespace protoseg
