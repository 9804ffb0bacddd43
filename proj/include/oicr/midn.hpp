#pragma once

#include <vector>

#include "oicr/matrix.hpp"
#include "oicr/netcore.hpp"

namespace oicr {

// Two-stream multiple-instance head. x_c/x_d are the raw stream logits
// (C x |R|); s_c softmaxes each column over classes, s_d softmaxes each row
// over proposals; their element-wise product x_R0 scores proposal/class
// pairs, and phi sums each class row into an image-level score in (0, 1).
struct MidnOutput {
  Mat x_c, x_d;
  Mat s_c, s_d;
  Mat x_R0;
  std::vector<double> phi;
};

// trunk_features is H x |R| (one column per proposal). Rejects C < 2: with a
// single class the detection softmax forces phi identically 1 and the
// image-level loss degenerates.
MidnOutput midn_forward(const Mat& trunk_features, const ModelParams& params);

// Multi-label binary cross entropy over image scores:
//   L = -sum_c [ y_c*log(phi_c) + (1-y_c)*log(1-phi_c) ]
// with phi clamped to [1e-6, 1-1e-6] before the logs. grad_phi (optional)
// receives the exact derivative of the clamped expression; it is zero where
// the clamp saturates.
double loss_base(const std::vector<double>& phi, const std::vector<int>& label,
                 std::vector<double>* grad_phi = nullptr);

}  // namespace oicr
