#include "protoseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace protoseg {

double iou(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) {
    throw ShapeError("iou: mask lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " differ");
  }
  const auto inter = (a && b).count();
  const auto uni = (a || b).count();
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Mask> instances_from_labels(const std::vector<int>& labels) {
  std::map<int, Mask> by_label;
  const auto n = static_cast<Eigen::Index>(labels.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    if (l < 0) continue;
    auto [it, inserted] = by_label.try_emplace(l, Mask::Constant(n, false));
    it->second(i) = true;
  }
  std::vector<Mask> out;
  out.reserve(by_label.size());
  for (auto& [label, mask] : by_label) {
    out.push_back(std::move(mask));
  }
  return out;
}

std::vector<ScoredMask> masks_from_predictions(const std::vector<PredictedInstance>& predictions,
                                               Eigen::Index n_points) {
  std::vector<ScoredMask> out;
  out.reserve(predictions.size());
  for (const auto& p : predictions) {
    ScoredMask m{Mask::Constant(n_points, false), p.score};
    for (auto idx : p.points) {
      if (idx < 0 || idx >= n_points) {
        throw IndexError("prediction references point " + std::to_string(idx) + " of " +
                         std::to_string(n_points));
      }
      m.mask(idx) = true;
    }
    out.push_back(std::move(m));
  }
  return out;
}

Coverage coverage(const std::vector<Mask>& gt, const std::vector<ScoredMask>& predictions) {
  if (gt.empty()) {
    throw ArgumentError("coverage: no ground-truth instances");
  }
  double sum = 0.0;
  double weighted = 0.0;
  double total_size = 0.0;
  for (const auto& g : gt) {
    double best = 0.0;
    for (const auto& p : predictions) {
      best = std::max(best, iou(g, p.mask));
    }
    const auto size = static_cast<double>(g.count());
    sum += best;
    weighted += size * best;
    total_size += size;
  }
  return {sum / static_cast<double>(gt.size()), total_size > 0.0 ? weighted / total_size : 0.0};
}

PrecisionRecall precision_recall(const std::vector<Mask>& gt, const std::vector<ScoredMask>& predictions,
                                 double iou_thresh) {
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].score > predictions[b].score;
  });

  std::vector<bool> claimed(gt.size(), false);
  PrecisionRecall out;
  for (const auto p : order) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(gt[g], predictions[p].mask);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_thresh && !claimed[static_cast<std::size_t>(best)]) {
      claimed[static_cast<std::size_t>(best)] = true;
      ++out.true_positives;
    }
  }
  const auto tp = static_cast<double>(out.true_positives);
  out.m_prec = predictions.empty() ? 0.0 : tp / static_cast<double>(predictions.size());
  out.m_rec = gt.empty() ? 0.0 : tp / static_cast<double>(gt.size());
  return out;
}

EvalReport evaluate(const std::vector<EvalInput>& scenes, double iou_thresh) {
  EvalReport report;
  double cov_sum = 0.0;
  double wcov_num = 0.0;
  double wcov_den = 0.0;
  for (const auto& scene : scenes) {
    SceneEval s;
    s.name = scene.name;
    s.n_gt = static_cast<Eigen::Index>(scene.gt.size());
    s.n_pred = static_cast<Eigen::Index>(scene.predictions.size());
    if (!scene.gt.empty()) {
      const Coverage c = coverage(scene.gt, scene.predictions);
      s.m_cov = c.m_cov;
      s.m_wcov = c.m_wcov;
      double size = 0.0;
      for (const auto& g : scene.gt) size += static_cast<double>(g.count());
      cov_sum += c.m_cov * static_cast<double>(s.n_gt);
      wcov_num += c.m_wcov * size;
      wcov_den += size;
    }
    const PrecisionRecall pr = precision_recall(scene.gt, scene.predictions, iou_thresh);
    s.m_prec = pr.m_prec;
    s.m_rec = pr.m_rec;
    s.n_matched = pr.true_positives;
    report.n_gt += s.n_gt;
    report.n_pred += s.n_pred;
    report.n_matched += s.n_matched;
    report.scenes.push_back(std::move(s));
  }
  if (report.n_gt > 0) {
    report.m_cov = cov_sum / static_cast<double>(report.n_gt);
    report.m_rec = static_cast<double>(report.n_matched) / static_cast<double>(report.n_gt);
  }
  if (wcov_den > 0.0) report.m_wcov = wcov_num / wcov_den;
  if (report.n_pred > 0) {
    report.m_prec = static_cast<double>(report.n_matched) / static_cast<double>(report.n_pred);
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %7s %7s %7s %7s %6s %6s %6s\n", "scene", "mCov", "mWCov",
                "mRec", "mPrec", "n_gt", "n_pred", "n_tp");
  os << line;
  auto row = [&](const std::string& name, double cov, double wcov, double rec, double prec,
                 Eigen::Index g, Eigen::Index p, Eigen::Index m) {
    std::snprintf(line, sizeof line, "%-16s %7.3f %7.3f %7.3f %7.3f %6ld %6ld %6ld\n", name.c_str(), cov,
                  wcov, rec, prec, static_cast<long>(g), static_cast<long>(p), static_cast<long>(m));
    os << line;
  };
  for (const auto& s : report.scenes) {
    row(s.name, s.m_cov, s.m_wcov, s.m_rec, s.m_prec, s.n_gt, s.n_pred, s.n_matched);
  }
  row("all", report.m_cov, report.m_wcov, report.m_rec, report.m_prec, report.n_gt, report.n_pred,
      report.n_matched);
  return os.str();
}

}  // namespace protoseg
