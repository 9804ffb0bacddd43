#pragma once

#include <vector>

#include "oicr/geometry.hpp"
#include "oicr/matrix.hpp"
#include "oicr/midn.hpp"
#include "oicr/netcore.hpp"
#include "oicr/synthdata.hpp"

namespace oicr {

struct OicrConfig {
  int K = 3;                   // number of refinement stages
  double iou_threshold = 0.5;  // I_t: overlap needed to inherit a seed's class
};

// One refinement stage's (C+1) x |R| class probabilities per proposal
// (row C, the last one, is background); every column sums to 1.
std::vector<Mat> refine_forward(const Mat& trunk_features, const ModelParams& params);

// Index of the highest-scoring proposal for a (1-based) foreground class.
// Works on both the C x |R| stage-0 matrix and the (C+1) x |R| refined
// matrices, since foreground class c lives in row c-1 of either. Ties break
// to the lowest proposal index.
int top_proposal(const Mat& scores_prev, int class_index);

// Per-stage pseudo supervision: one-hot labels over C+1 classes per proposal
// plus per-proposal loss weights. Treated as constants by every gradient.
struct StageSupervision {
  Mat labels;                   // (C+1) x |R|, one-hot columns
  std::vector<double> weights;  // |R|
};

struct SupervisionPlan {
  std::vector<StageSupervision> stages;  // one per refinement stage
};

// Builds the plan for stages 1..K from the previous stages' score matrices
// (scores[0] = stage-0 MIDN matrix, scores[k>=1] = refined stage k). For each
// stage every proposal starts as background with best-overlap -inf; classes
// present in the image are visited in ascending index, and whenever a
// proposal's IoU with the class's top proposal strictly improves its best
// overlap, the proposal adopts that top proposal's score as its weight — and
// additionally adopts the class label when the overlap strictly exceeds
// iou_threshold. Throws std::invalid_argument when no label is positive.
SupervisionPlan generate_supervision(const std::vector<Box>& proposals,
                                     const std::vector<int>& label,
                                     const std::vector<Mat>& scores, const OicrConfig& cfg);

// Weighted cross entropy over proposal columns:
//   L = -(1/|R|) * sum_r w_r * log(max(probs[label_r], 1e-12))
// with w_r = 1 when weighted is false. grad_logits (optional) receives the
// exact gradient with respect to the pre-softmax logits.
double loss_refine(const Mat& probs, const Mat& labels, const std::vector<double>& weights,
                   bool weighted, Mat* grad_logits = nullptr);

// All per-bag activations needed by supervision, losses, and backprop.
struct ForwardState {
  Mat feats_T;      // D x |R|
  Mat pre1, t1;     // trunk layer 1 pre-activation / ReLU output
  Mat pre2, t2;     // trunk layer 2
  MidnOutput midn;
  std::vector<Mat> refine_probs;  // K matrices, (C+1) x |R|
};

ForwardState forward_all(const Bag& bag, const ModelParams& params);

struct LossBreakdown {
  double total = 0.0;
  double base = 0.0;
  std::vector<double> refine;  // one entry per stage
};

// Full objective: image-level loss plus every refinement stage's loss, with
// supervision regenerated from the current forward pass and then held
// constant through the backward pass. Gradients from all branches accumulate
// into the shared trunk. Optional outputs may be null.
LossBreakdown total_loss(const Bag& bag, const ModelParams& params, const OicrConfig& cfg,
                         bool weighted, ModelGrads* grads = nullptr,
                         SupervisionPlan* plan_out = nullptr, ForwardState* state_out = nullptr);

// Same objective evaluated against an externally supplied (frozen) plan;
// used by finite-difference checks and the stop-gradient tests.
LossBreakdown total_loss_with_plan(const Bag& bag, const ModelParams& params,
                                   const OicrConfig& cfg, bool weighted,
                                   const SupervisionPlan& plan, ModelGrads* grads = nullptr);

}  // namespace oicr
