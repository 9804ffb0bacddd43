#include "oicr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "oicr/check.hpp"
#include "oicr/io_util.hpp"
#include "oicr/oicr.hpp"

#include "json.hpp"

namespace oicr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_ignoring_nan(const std::vector<double>& v) {
  double sum = 0.0;
  int n = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      sum += x;
      ++n;
    }
  return n ? sum / n : 0.0;
}

int argmax_row(const Mat& scores, int row) {
  int best = 0;
  for (int r = 1; r < scores.cols; ++r)
    if (scores(row, r) > scores(row, best)) best = r;
  return best;
}

}  // namespace

Mat score_matrix(const Bag& bag, const ModelParams& params, ScoreSource source) {
  ForwardState st = forward_all(bag, params);
  const int C = params.dims.num_classes;
  const int R = static_cast<int>(bag.proposals.size());
  if (source == ScoreSource::midn) return st.midn.x_R0;

  if (params.dims.num_refine < 1)
    throw std::invalid_argument("score_matrix: refined_mean needs at least one refinement stage");
  Mat mean(C, R);
  for (const Mat& probs : st.refine_probs)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < R; ++r) mean(c, r) += probs(c, r);
  for (double& v : mean.a) v /= static_cast<double>(st.refine_probs.size());
  return mean;
}

std::vector<Detection> detections_from_scores(const std::vector<Box>& proposals, const Mat& scores,
                                              double nms_threshold, double score_floor) {
  OICR_CHECK(scores.cols == static_cast<int>(proposals.size()), "score/proposal count");
  std::vector<Detection> out;
  std::vector<double> row(proposals.size());
  for (int c = 0; c < scores.rows; ++c) {
    for (size_t r = 0; r < proposals.size(); ++r) row[r] = scores(c, r);
    for (int idx : nms_indices(proposals, row, nms_threshold)) {
      if (row[idx] < score_floor) continue;
      out.push_back({proposals[idx], c + 1, row[idx]});
    }
  }
  return out;
}

std::vector<Detection> detect(const Bag& bag, const ModelParams& params, const EvalConfig& cfg) {
  Mat scores = score_matrix(bag, params, cfg.source);
  return detections_from_scores(bag.proposals, scores, cfg.nms_threshold, cfg.score_floor);
}

double voc_ap(std::vector<RankedDetection> dets, const std::vector<ClassGroundTruth>& gts,
              double iou_threshold, ApMode mode) {
  if (gts.empty()) return kNaN;
  std::sort(dets.begin(), dets.end(), [](const RankedDetection& a, const RankedDetection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.box_index < b.box_index;
  });

  std::vector<char> matched(gts.size(), 0);
  const int npos = static_cast<int>(gts.size());
  std::vector<int> is_tp(dets.size(), 0);
  for (size_t d = 0; d < dets.size(); ++d) {
    int best_gt = -1;
    double best_iou = 0.0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (matched[g] || gts[g].image_id != dets[d].image_id) continue;
      double o = iou(dets[d].box, gts[g].box);
      if (o > best_iou) {
        best_iou = o;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best_iou > iou_threshold) {
      matched[best_gt] = 1;
      is_tp[d] = 1;
    }
  }

  std::vector<double> recall(dets.size()), precision(dets.size());
  int tp = 0;
  for (size_t d = 0; d < dets.size(); ++d) {
    tp += is_tp[d];
    recall[d] = static_cast<double>(tp) / npos;
    precision[d] = static_cast<double>(tp) / static_cast<double>(d + 1);
  }

  if (mode == ApMode::voc07) {
    double sum = 0.0;
    for (int t = 0; t <= 10; ++t) {
      double threshold = t / 10.0;
      double pmax = 0.0;
      for (size_t d = 0; d < dets.size(); ++d)
        if (recall[d] >= threshold) pmax = std::max(pmax, precision[d]);
      sum += pmax;
    }
    return sum / 11.0;
  }

  // area mode: integrate under the monotone (from the right) envelope
  std::vector<double> r{0.0}, p{0.0};
  r.insert(r.end(), recall.begin(), recall.end());
  p.insert(p.end(), precision.begin(), precision.end());
  r.push_back(1.0);
  p.push_back(0.0);
  for (int i = static_cast<int>(p.size()) - 2; i >= 0; --i) p[i] = std::max(p[i], p[i + 1]);
  double ap = 0.0;
  for (size_t i = 1; i < r.size(); ++i)
    if (r[i] != r[i - 1]) ap += (r[i] - r[i - 1]) * p[i];
  return ap;
}

EvalReport evaluate_map_scores(const std::vector<Bag>& bags, const std::vector<Mat>& scores,
                               const EvalConfig& cfg) {
  OICR_CHECK(bags.size() == scores.size(), "bags/scores count");
  OICR_CHECK(!bags.empty(), "empty evaluation set");
  const int C = static_cast<int>(bags[0].label.size());

  EvalReport report;
  report.images = static_cast<int>(bags.size());
  report.ap.assign(C, kNaN);
  report.corloc.assign(C, kNaN);

  std::vector<std::vector<RankedDetection>> per_class(C);
  std::vector<std::vector<ClassGroundTruth>> per_class_gt(C);

  for (size_t i = 0; i < bags.size(); ++i) {
    const Bag& bag = bags[i];
    for (const GroundTruthObject& g : bag.ground_truth) {
      per_class_gt[g.class_index - 1].push_back({bag.image_id, g.box});
      ++report.ground_truths;
    }
    const Mat& S = scores[i];
    OICR_CHECK(S.rows == C && S.cols == static_cast<int>(bag.proposals.size()),
               "score matrix shape");
    std::vector<double> row(bag.proposals.size());
    for (int c = 0; c < C; ++c) {
      for (size_t r = 0; r < bag.proposals.size(); ++r) row[r] = S(c, r);
      for (int idx : nms_indices(bag.proposals, row, cfg.nms_threshold)) {
        if (row[idx] < cfg.score_floor) continue;
        per_class[c].push_back({bag.image_id, idx, row[idx], bag.proposals[idx]});
        ++report.detections;
      }
    }
  }

  for (int c = 0; c < C; ++c)
    report.ap[c] = voc_ap(per_class[c], per_class_gt[c], cfg.match_iou, cfg.ap_mode);
  report.map = mean_ignoring_nan(report.ap);
  return report;
}

EvalReport evaluate_corloc_scores(const std::vector<Bag>& bags, const std::vector<Mat>& scores,
                                  const EvalConfig& cfg) {
  OICR_CHECK(bags.size() == scores.size(), "bags/scores count");
  OICR_CHECK(!bags.empty(), "empty evaluation set");
  const int C = static_cast<int>(bags[0].label.size());

  EvalReport report;
  report.images = static_cast<int>(bags.size());
  report.ap.assign(C, kNaN);
  report.corloc.assign(C, kNaN);

  std::vector<int> positives(C, 0), hits(C, 0);
  for (size_t i = 0; i < bags.size(); ++i) {
    const Bag& bag = bags[i];
    report.ground_truths += static_cast<int>(bag.ground_truth.size());
    for (int c = 0; c < C; ++c) {
      if (!bag.label[c]) continue;
      ++positives[c];
      // single top-scoring proposal, before any NMS
      int best = argmax_row(scores[i], c);
      for (const GroundTruthObject& g : bag.ground_truth) {
        if (g.class_index != c + 1) continue;
        if (iou(bag.proposals[best], g.box) > cfg.match_iou) {
          ++hits[c];
          break;
        }
      }
    }
  }
  for (int c = 0; c < C; ++c)
    if (positives[c] > 0) report.corloc[c] = static_cast<double>(hits[c]) / positives[c];
  report.mean_corloc = mean_ignoring_nan(report.corloc);
  return report;
}

namespace {

std::vector<Mat> all_score_matrices(const std::vector<Bag>& bags, const ModelParams& params,
                                    ScoreSource source) {
  std::vector<Mat> scores;
  scores.reserve(bags.size());
  for (const Bag& bag : bags) scores.push_back(score_matrix(bag, params, source));
  return scores;
}

}  // namespace

EvalReport evaluate_map(const std::vector<Bag>& bags, const ModelParams& params,
                        const EvalConfig& cfg) {
  return evaluate_map_scores(bags, all_score_matrices(bags, params, cfg.source), cfg);
}

EvalReport evaluate_corloc(const std::vector<Bag>& bags, const ModelParams& params,
                           const EvalConfig& cfg) {
  return evaluate_corloc_scores(bags, all_score_matrices(bags, params, cfg.source), cfg);
}

EvalReport evaluate_full(const std::vector<Bag>& bags, const ModelParams& params,
                         const EvalConfig& cfg) {
  std::vector<Mat> scores = all_score_matrices(bags, params, cfg.source);
  EvalReport report = evaluate_map_scores(bags, scores, cfg);
  EvalReport corloc = evaluate_corloc_scores(bags, scores, cfg);
  report.corloc = corloc.corloc;
  report.mean_corloc = corloc.mean_corloc;
  return report;
}

void export_pseudo_gt(const std::vector<Bag>& bags, const ModelParams& params,
                      const EvalConfig& cfg, const std::string& path) {
  nlohmann::json out = nlohmann::json::array();
  for (const Bag& bag : bags) {
    Mat S = score_matrix(bag, params, cfg.source);
    for (int c = 0; c < S.rows; ++c) {
      if (!bag.label[c]) continue;
      int best = argmax_row(S, c);
      const Box& b = bag.proposals[best];
      nlohmann::json rec;
      rec["image_id"] = bag.image_id;
      rec["class_index"] = c + 1;
      rec["box"] = {b.x_min, b.y_min, b.x_max, b.y_max};
      rec["score"] = S(c, best);
      out.push_back(std::move(rec));
    }
  }
  write_file_atomic(path, out.dump(2) + "\n");
}

std::string format_metrics_csv(const EvalReport& report) {
  std::string csv = "class_index,ap,corloc\n";
  char buf[64];
  auto field = [&](double v) {
    if (std::isnan(v)) return std::string();
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (size_t c = 0; c < report.ap.size(); ++c)
    csv += std::to_string(c + 1) + "," + field(report.ap[c]) + "," + field(report.corloc[c]) + "\n";
  csv += "mean," + field(report.map) + "," + field(report.mean_corloc) + "\n";
  return csv;
}

}  // namespace oicr
