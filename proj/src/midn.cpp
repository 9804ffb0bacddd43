#include "oicr/midn.hpp"

#include <cmath>
#include <stdexcept>

#include "oicr/check.hpp"

namespace oicr {

namespace {
constexpr double kPhiClamp = 1e-6;
}

MidnOutput midn_forward(const Mat& trunk_features, const ModelParams& params) {
  if (params.dims.num_classes < 2)
    throw std::invalid_argument("midn_forward requires at least 2 classes");
  OICR_CHECK(trunk_features.rows == params.dims.hidden_dim, "trunk feature height");
  OICR_CHECK(trunk_features.cols >= 1, "at least one proposal");

  MidnOutput out;
  out.x_c = dense_apply(params.stream_c, trunk_features);
  out.x_d = dense_apply(params.stream_d, trunk_features);
  out.s_c = softmax_columns(out.x_c);
  out.s_d = softmax_rows(out.x_d);
  out.x_R0 = hadamard(out.s_c, out.s_d);
  out.phi.assign(out.x_R0.rows, 0.0);
  for (int c = 0; c < out.x_R0.rows; ++c)
    for (int r = 0; r < out.x_R0.cols; ++r) out.phi[c] += out.x_R0(c, r);
  return out;
}

double loss_base(const std::vector<double>& phi, const std::vector<int>& label,
                 std::vector<double>* grad_phi) {
  OICR_CHECK(phi.size() == label.size(), "phi/label length");
  if (grad_phi) grad_phi->assign(phi.size(), 0.0);
  double loss = 0.0;
  for (size_t c = 0; c < phi.size(); ++c) {
    double clamped = std::min(std::max(phi[c], kPhiClamp), 1.0 - kPhiClamp);
    if (label[c])
      loss -= std::log(clamped);
    else
      loss -= std::log(1.0 - clamped);
    if (grad_phi && phi[c] > kPhiClamp && phi[c] < 1.0 - kPhiClamp)
      (*grad_phi)[c] = label[c] ? -1.0 / clamped : 1.0 / (1.0 - clamped);
  }
  return loss;
}

}  // namespace oicr
