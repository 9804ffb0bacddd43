#pragma once

#include <string>
#include <vector>

#include "oicr/geometry.hpp"
#include "oicr/netcore.hpp"
#include "oicr/synthdata.hpp"

namespace oicr {

enum class ApMode { voc07, area };

// Which per-proposal class scores drive detection: the mean of the refined
// stages (background row dropped, stage 0 excluded) or the stage-0 MIDN
// matrix. The MIDN source exists for the no-refinement ablation, where there
// are no refined stages to average.
enum class ScoreSource { refined_mean, midn };

struct EvalConfig {
  double nms_threshold = 0.3;
  double score_floor = 1e-4;   // detections below this are dropped
  double match_iou = 0.5;      // strict > for a true positive / CorLoc hit
  ApMode ap_mode = ApMode::voc07;
  ScoreSource source = ScoreSource::refined_mean;
};

// C x |R| class scores for one bag under the chosen source. Rejects
// refined_mean when the model has no refinement stages.
Mat score_matrix(const Bag& bag, const ModelParams& params, ScoreSource source);

// Per-class greedy NMS over one bag's scores, then the score floor. Output
// ordered by class, then descending score.
std::vector<Detection> detections_from_scores(const std::vector<Box>& proposals, const Mat& scores,
                                              double nms_threshold, double score_floor);
std::vector<Detection> detect(const Bag& bag, const ModelParams& params, const EvalConfig& cfg);

// One class's pooled detections across images, for ranking-based AP.
struct RankedDetection {
  int image_id = 0;
  int box_index = 0;  // proposal index within its image
  double score = 0.0;
  Box box;
};

struct ClassGroundTruth {
  int image_id = 0;
  Box box;
};

// Average precision for one class. Detections are ranked by descending score
// (ties by image id, then box index); each detection greedily matches the
// highest-IoU unmatched ground truth of its image and counts as a true
// positive when that IoU strictly exceeds iou_threshold. voc07 averages the
// maximum precision at recalls {0, 0.1, ..., 1.0}; area integrates the
// monotone-interpolated precision-recall curve. NaN when there is no ground
// truth for the class.
double voc_ap(std::vector<RankedDetection> dets, const std::vector<ClassGroundTruth>& gts,
              double iou_threshold, ApMode mode);

struct EvalReport {
  std::vector<double> ap;      // per class, NaN where undefined
  std::vector<double> corloc;  // per class, NaN where undefined
  double map = 0.0;            // mean AP over classes with ground truth
  double mean_corloc = 0.0;    // mean over classes with positive images
  int images = 0;
  int ground_truths = 0;
  int detections = 0;
};

// Score-matrix injection points: scores[i] corresponds to bags[i]. These let
// tests and sanity checks drive the full metric pipeline with synthetic
// scorers.
EvalReport evaluate_map_scores(const std::vector<Bag>& bags, const std::vector<Mat>& scores,
                               const EvalConfig& cfg);
EvalReport evaluate_corloc_scores(const std::vector<Bag>& bags, const std::vector<Mat>& scores,
                                  const EvalConfig& cfg);

EvalReport evaluate_map(const std::vector<Bag>& bags, const ModelParams& params,
                        const EvalConfig& cfg);
EvalReport evaluate_corloc(const std::vector<Bag>& bags, const ModelParams& params,
                           const EvalConfig& cfg);
// Both metric families in one report.
EvalReport evaluate_full(const std::vector<Bag>& bags, const ModelParams& params,
                         const EvalConfig& cfg);

// For every bag and positive class, writes the top-scoring proposal as a JSON
// record {image_id, class_index, box, score}.
void export_pseudo_gt(const std::vector<Bag>& bags, const ModelParams& params,
                      const EvalConfig& cfg, const std::string& path);

// CSV: header class_index,ap,corloc; one row per class (blank fields where a
// metric is undefined); final summary row mean,<mAP>,<mean CorLoc>.
std::string format_metrics_csv(const EvalReport& report);

}  // namespace oicr
