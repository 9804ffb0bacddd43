#pragma once

#include <vector>

namespace oicr {

// Axis-aligned rectangle in continuous canvas units; width = x_max - x_min
// with no pixel "+1" convention. Must satisfy x_min <= x_max, y_min <= y_max.
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

struct Detection {
  Box box;
  int class_index = 0;  // 1-based
  double score = 0;
};

double area(const Box& b);
double intersection_area(const Box& a, const Box& b);

// area(a∩b) / area(a∪b); 0 when the union has zero area.
double iou(const Box& a, const Box& b);

// Greedy non-maximum suppression over one class. Repeatedly keeps the
// highest-scoring remaining box (score ties broken by lower original index)
// and discards every remaining box whose IoU with it is strictly above
// iou_threshold. Returns the kept original indices in descending-score order.
std::vector<int> nms_indices(const std::vector<Box>& boxes, const std::vector<double>& scores,
                             double iou_threshold);

// Same procedure over Detection values; all inputs must share one class.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

}  // namespace oicr
