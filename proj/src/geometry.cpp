#include "oicr/geometry.hpp"

#include <algorithm>
#include <numeric>

#include "oicr/check.hpp"

namespace oicr {

double area(const Box& b) { return (b.x_max - b.x_min) * (b.y_max - b.y_min); }

double intersection_area(const Box& a, const Box& b) {
  double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const Box& a, const Box& b) {
  double inter = intersection_area(a, b);
  double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;  // two degenerate boxes
  return inter / uni;
}

std::vector<int> nms_indices(const std::vector<Box>& boxes, const std::vector<double>& scores,
                             double iou_threshold) {
  OICR_CHECK(boxes.size() == scores.size(), "nms box/score count");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  std::vector<int> kept;
  std::vector<char> removed(boxes.size(), 0);
  for (size_t i = 0; i < order.size(); ++i) {
    int idx = order[i];
    if (removed[idx]) continue;
    kept.push_back(idx);
    for (size_t j = i + 1; j < order.size(); ++j) {
      int other = order[j];
      if (removed[other]) continue;
      if (iou(boxes[idx], boxes[other]) > iou_threshold) removed[other] = 1;
    }
  }
  return kept;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<Box> boxes(dets.size());
  std::vector<double> scores(dets.size());
  for (size_t i = 0; i < dets.size(); ++i) {
    boxes[i] = dets[i].box;
    scores[i] = dets[i].score;
  }
  std::vector<Detection> out;
  for (int idx : nms_indices(boxes, scores, iou_threshold)) out.push_back(dets[idx]);
  return out;
}

}  // namespace oicr
