#pragma once

// Pascal-style mean average precision with all-points interpolation.

#include <algorithm>
#include <map>
#include <vector>

#include "fgrr/detector.hpp"
#include "fgrr/geometry.hpp"

namespace fgrr {

struct ImageEval {
  std::vector<Detection> detections;
  std::vector<Box> gt_boxes;
  std::vector<int> gt_labels;
};

namespace eval_detail {

// AP of one class from (score, is_tp) records and the positive count.
inline double average_precision(std::vector<std::pair<double, bool>> records, int num_gt) {
  if (num_gt == 0) return 0.0;
  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& [score, is_tp] : records) {
    if (is_tp)
      ++tp;
    else
      ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / num_gt);
  }
  // All-points interpolation: area under the monotone precision envelope.
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    double p_max = 0.0;
    for (std::size_t j = i; j < precision.size(); ++j) p_max = std::max(p_max, precision[j]);
    ap += (recall[i] - prev_recall) * p_max;
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace eval_detail

// Standard per-class AP averaged over classes that have ground truth
// anywhere; detections are greedily matched (score-descending) to the
// highest-IoU unmatched ground truth of the same class.
inline double evaluate_map(const std::vector<ImageEval>& images, double iou_threshold) {
  std::map<int, int> gt_count;
  for (const auto& img : images)
    for (int k : img.gt_labels) gt_count[k] += 1;
  if (gt_count.empty()) return 0.0;

  std::map<int, std::vector<std::pair<double, bool>>> records;
  for (const auto& img : images) {
    // Sort this image's detections by score so matching is greedy-correct.
    std::vector<int> order(img.detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return img.detections[static_cast<std::size_t>(a)].score >
             img.detections[static_cast<std::size_t>(b)].score;
    });
    std::vector<char> taken(img.gt_boxes.size(), 0);
    for (int di : order) {
      const Detection& d = img.detections[static_cast<std::size_t>(di)];
      // Highest-IoU ground truth of the class, matched or not; a second hit
      // on an already-matched object is a false positive.
      double best = 0.0;
      int best_g = -1;
      for (std::size_t g = 0; g < img.gt_boxes.size(); ++g) {
        if (img.gt_labels[g] != d.label) continue;
        const double v = iou(d.box, img.gt_boxes[g]);
        if (v > best) {
          best = v;
          best_g = static_cast<int>(g);
        }
      }
      const bool is_tp =
          best_g >= 0 && best >= iou_threshold && !taken[static_cast<std::size_t>(best_g)];
      if (is_tp) taken[static_cast<std::size_t>(best_g)] = 1;
      records[d.label].emplace_back(d.score, is_tp);
    }
  }

  double sum_ap = 0.0;
  for (const auto& [cls, count] : gt_count)
    sum_ap += eval_detail::average_precision(records.count(cls) ? records.at(cls)
                                                                : std::vector<std::pair<double, bool>>{},
                                             count);
  return sum_ap / static_cast<double>(gt_count.size());
}

}  // namespace fgrr
