#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ppgstress {

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty()) throw std::runtime_error("accuracy: empty input");
  if (preds.size() != labels.size())
    throw std::runtime_error("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                             std::to_string(labels.size()) + " labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

/// counts[actual][predicted], binary classes.
inline std::array<std::array<std::size_t, 2>, 2> confusion(const std::vector<int>& preds,
                                                           const std::vector<int>& labels) {
  if (preds.size() != labels.size() || preds.empty())
    throw std::runtime_error("confusion: inputs must be equal-length and non-empty");
  std::array<std::array<std::size_t, 2>, 2> m{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 1 || preds[i] < 0 || preds[i] > 1)
      throw std::runtime_error("confusion: classes must be 0 or 1");
    ++m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  return m;
}

struct PrPoint {
  double threshold = 0.0;
  double precision = 1.0;
  double recall = 0.0;
};

/// One point per unique score plus a sentinel above the maximum. An example
/// is predicted positive when score >= threshold; precision 0/0 is defined
/// as 1, so the sentinel point is (1, 0).
inline std::vector<PrPoint> pr_curve(const std::vector<double>& scores,
                                     const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::runtime_error("pr_curve: inputs must be equal-length and non-empty");
  std::size_t positives = 0;
  for (int l : labels) positives += l == 1 ? 1 : 0;
  if (positives == 0) throw std::runtime_error("pr_curve: no positive labels");

  std::vector<double> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(thresholds.back() + 1.0);  // sentinel: nothing predicted positive

  std::vector<PrPoint> curve;
  curve.reserve(thresholds.size());
  for (double th : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= th) (labels[i] == 1 ? tp : fp) += 1;
    }
    PrPoint p;
    p.threshold = th;
    p.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = static_cast<double>(tp) / static_cast<double>(positives);
    curve.push_back(p);
  }
  return curve;
}

/// ROC-AUC as the Mann-Whitney pair statistic, computed from tie-averaged
/// ranks: AUC = (sum of positive ranks - P(P+1)/2) / (P*N).
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::runtime_error("auc: inputs must be equal-length and non-empty");
  std::size_t positives = 0;
  for (int l : labels) positives += l == 1 ? 1 : 0;
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw std::runtime_error("auc: single-class labels");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(positives), n = static_cast<double>(negatives);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

// ---- report ---------------------------------------------------------------------

struct MetricsReport {
  double accuracy = 0.0;
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  std::vector<PrPoint> pr;
  double roc_auc = 0.0;
};

/// Scores are stress-class probabilities; predictions threshold at 0.5.
inline MetricsReport evaluate_scores(const std::vector<double>& scores,
                                     const std::vector<int>& labels) {
  std::vector<int> preds(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] >= 0.5 ? 1 : 0;
  MetricsReport r;
  r.accuracy = accuracy(preds, labels);
  r.confusion = confusion(preds, labels);
  r.pr = pr_curve(scores, labels);
  r.roc_auc = auc(scores, labels);
  return r;
}

inline nlohmann::json metrics_json(const MetricsReport& r) {
  nlohmann::json pr = nlohmann::json::array();
  for (const auto& p : r.pr)
    pr.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
  return nlohmann::json{
      {"accuracy", r.accuracy},
      {"confusion", {{r.confusion[0][0], r.confusion[0][1]}, {r.confusion[1][0], r.confusion[1][1]}}},
      {"pr_curve", pr},
      {"roc_auc", r.roc_auc}};
}

inline std::string pr_csv(const std::vector<PrPoint>& curve) {
  std::string out = "threshold,precision,recall\n";
  char buf[128];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.threshold, p.precision, p.recall);
    out += buf;
  }
  return out;
}

inline void write_pr_csv(const std::vector<PrPoint>& curve, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << pr_csv(curve);
}

}  // namespace ppgstress
