#include "oicr/oicr.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "oicr/check.hpp"

namespace oicr {

namespace {

constexpr double kProbFloor = 1e-12;

// Shared loss+backward over a completed forward pass. Gradients are exact
// derivatives of the losses with the plan's labels/weights as constants.
LossBreakdown losses_and_grads(const Bag& bag, const ModelParams& params, const OicrConfig& cfg,
                               bool weighted, const ForwardState& st, const SupervisionPlan& plan,
                               ModelGrads* grads) {
  const int K = cfg.K;
  OICR_CHECK(static_cast<int>(plan.stages.size()) == K, "plan stage count");

  LossBreakdown out;
  std::vector<double> grad_phi;
  out.base = loss_base(st.midn.phi, bag.label, grads ? &grad_phi : nullptr);
  out.total = out.base;

  std::vector<Mat> refine_logit_grads(K);
  for (int k = 0; k < K; ++k) {
    double lk = loss_refine(st.refine_probs[k], plan.stages[k].labels, plan.stages[k].weights,
                            weighted, grads ? &refine_logit_grads[k] : nullptr);
    out.refine.push_back(lk);
    out.total += lk;
  }

  if (!grads) return out;

  // dL/dphi broadcast over proposals, then through the product of the two
  // directional softmaxes back to the stream logits.
  const MidnOutput& m = st.midn;
  Mat d_xR0(m.x_R0.rows, m.x_R0.cols);
  for (int c = 0; c < d_xR0.rows; ++c)
    for (int r = 0; r < d_xR0.cols; ++r) d_xR0(c, r) = grad_phi[c];
  Mat d_sc = hadamard(d_xR0, m.s_d);
  Mat d_sd = hadamard(d_xR0, m.s_c);
  Mat d_xc = softmax_columns_backward(m.s_c, d_sc);
  Mat d_xd = softmax_rows_backward(m.s_d, d_sd);

  Mat d_t2 = dense_grad(params.stream_c, st.t2, d_xc, grads->stream_c);
  add_inplace(d_t2, dense_grad(params.stream_d, st.t2, d_xd, grads->stream_d));
  for (int k = 0; k < K; ++k)
    add_inplace(d_t2, dense_grad(params.refine[k], st.t2, refine_logit_grads[k], grads->refine[k]));

  Mat d_pre2 = relu_backward(st.pre2, d_t2);
  Mat d_t1 = dense_grad(params.trunk2, st.t1, d_pre2, grads->trunk2);
  Mat d_pre1 = relu_backward(st.pre1, d_t1);
  dense_grad(params.trunk1, st.feats_T, d_pre1, grads->trunk1);
  return out;
}

}  // namespace

std::vector<Mat> refine_forward(const Mat& trunk_features, const ModelParams& params) {
  std::vector<Mat> out;
  for (const DenseLayer& layer : params.refine)
    out.push_back(softmax_columns(dense_apply(layer, trunk_features)));
  return out;
}

int top_proposal(const Mat& scores_prev, int class_index) {
  OICR_CHECK(class_index >= 1 && class_index <= scores_prev.rows, "top_proposal class");
  int row = class_index - 1;
  int best = 0;
  for (int r = 1; r < scores_prev.cols; ++r)
    if (scores_prev(row, r) > scores_prev(row, best)) best = r;
  return best;
}

SupervisionPlan generate_supervision(const std::vector<Box>& proposals,
                                     const std::vector<int>& label,
                                     const std::vector<Mat>& scores, const OicrConfig& cfg) {
  const int R = static_cast<int>(proposals.size());
  const int C = static_cast<int>(label.size());
  OICR_CHECK(static_cast<int>(scores.size()) == cfg.K, "score matrix count");

  bool any_positive = false;
  for (int y : label) any_positive |= (y == 1);
  if (!any_positive)
    throw std::invalid_argument("generate_supervision: bag has no positive class");

  SupervisionPlan plan;
  for (int k = 0; k < cfg.K; ++k) {
    const Mat& prev = scores[k];
    OICR_CHECK(prev.cols == R, "score matrix width");
    OICR_CHECK(prev.rows == C || prev.rows == C + 1, "score matrix height");

    StageSupervision stage;
    stage.labels = Mat(C + 1, R);
    for (int r = 0; r < R; ++r) stage.labels(C, r) = 1.0;  // start as background
    stage.weights.assign(R, 0.0);
    std::vector<double> best_iou(R, -std::numeric_limits<double>::infinity());
    std::vector<int> assigned(R, -1);  // foreground row currently owning r, or -1

    for (int c = 1; c <= C; ++c) {
      if (!label[c - 1]) continue;
      int j = top_proposal(prev, c);
      double top_score = prev(c - 1, j);
      for (int r = 0; r < R; ++r) {
        double overlap = iou(proposals[r], proposals[j]);
        if (overlap > best_iou[r]) {
          best_iou[r] = overlap;
          stage.weights[r] = top_score;
          if (overlap > cfg.iou_threshold) {
            if (assigned[r] >= 0)
              stage.labels(assigned[r], r) = 0.0;
            else
              stage.labels(C, r) = 0.0;
            assigned[r] = c - 1;
            stage.labels(c - 1, r) = 1.0;
          }
        }
      }
    }
    plan.stages.push_back(std::move(stage));
  }
  return plan;
}

double loss_refine(const Mat& probs, const Mat& labels, const std::vector<double>& weights,
                   bool weighted, Mat* grad_logits) {
  OICR_CHECK(probs.same_shape(labels), "loss_refine shape");
  OICR_CHECK(static_cast<int>(weights.size()) == probs.cols, "loss_refine weights");
  const int R = probs.cols;

  Mat d_probs;
  if (grad_logits) d_probs = Mat(probs.rows, probs.cols);

  double loss = 0.0;
  for (int r = 0; r < R; ++r) {
    double w = weighted ? weights[r] : 1.0;
    if (w == 0.0) continue;
    for (int c = 0; c < probs.rows; ++c) {
      if (labels(c, r) != 1.0) continue;
      double p = probs(c, r);
      double clamped = std::max(p, kProbFloor);
      loss -= w * std::log(clamped) / R;
      // derivative vanishes where the floor is active
      if (grad_logits && p > kProbFloor) d_probs(c, r) = -w / (clamped * R);
    }
  }
  if (grad_logits) *grad_logits = softmax_columns_backward(probs, d_probs);
  return loss;
}

ForwardState forward_all(const Bag& bag, const ModelParams& params) {
  const int R = static_cast<int>(bag.proposals.size());
  const int D = bag.feature_dim;
  OICR_CHECK(D == params.dims.feature_dim, "bag/model feature dim");

  ForwardState st;
  st.feats_T = Mat(D, R);
  for (int r = 0; r < R; ++r)
    for (int d = 0; d < D; ++d) st.feats_T(d, r) = bag.feature_at(r, d);

  st.pre1 = dense_apply(params.trunk1, st.feats_T);
  st.t1 = relu(st.pre1);
  st.pre2 = dense_apply(params.trunk2, st.t1);
  st.t2 = relu(st.pre2);
  st.midn = midn_forward(st.t2, params);
  st.refine_probs = refine_forward(st.t2, params);
  return st;
}

LossBreakdown total_loss(const Bag& bag, const ModelParams& params, const OicrConfig& cfg,
                         bool weighted, ModelGrads* grads, SupervisionPlan* plan_out,
                         ForwardState* state_out) {
  OICR_CHECK(cfg.K == params.dims.num_refine, "config/model refinement count");
  ForwardState st = forward_all(bag, params);

  SupervisionPlan plan;
  if (cfg.K > 0) {
    // Stage k+1 is supervised by stage k's scores: the MIDN matrix for the
    // first stage, then each refined stage in turn.
    std::vector<Mat> scores;
    scores.push_back(st.midn.x_R0);
    for (int k = 0; k + 1 < cfg.K; ++k) scores.push_back(st.refine_probs[k]);
    plan = generate_supervision(bag.proposals, bag.label, scores, cfg);
  }

  LossBreakdown out = losses_and_grads(bag, params, cfg, weighted, st, plan, grads);
  if (plan_out) *plan_out = std::move(plan);
  if (state_out) *state_out = std::move(st);
  return out;
}

LossBreakdown total_loss_with_plan(const Bag& bag, const ModelParams& params,
                                   const OicrConfig& cfg, bool weighted,
                                   const SupervisionPlan& plan, ModelGrads* grads) {
  OICR_CHECK(cfg.K == params.dims.num_refine, "config/model refinement count");
  ForwardState st = forward_all(bag, params);
  return losses_and_grads(bag, params, cfg, weighted, st, plan, grads);
}

}  // namespace oicr
