#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "oicr/matrix.hpp"

namespace oicr {

// Affine layer computing w*in + b per column, with momentum buffers for SGD.
struct DenseLayer {
  Mat w;                   // out x in
  std::vector<double> b;   // out
  Mat vw;                  // momentum, same shape as w
  std::vector<double> vb;
};

struct DenseGrads {
  Mat gw;
  std::vector<double> gb;
};

struct ModelDims {
  int feature_dim = 0;   // D
  int hidden_dim = 64;   // H
  int num_classes = 0;   // C
  int num_refine = 3;    // K
};

// Shared trunk (two ReLU layers D->H->H), two parallel class/detection
// streams (H->C), and K refinement branches (H->C+1).
struct ModelParams {
  ModelDims dims;
  DenseLayer trunk1, trunk2;
  DenseLayer stream_c, stream_d;
  std::vector<DenseLayer> refine;
};

struct ModelGrads {
  DenseGrads trunk1, trunk2;
  DenseGrads stream_c, stream_d;
  std::vector<DenseGrads> refine;
};

// Weights ~ N(0, 0.01^2) from the seeded portable generator, in a fixed layer
// order (trunk1, trunk2, stream_c, stream_d, refine[0..K)); biases and
// momentum buffers start at zero.
ModelParams init_model(const ModelDims& dims, uint64_t seed);

ModelGrads zero_grads(const ModelDims& dims);
void accumulate_grads(ModelGrads& into, const ModelGrads& g);
void scale_grads(ModelGrads& g, double s);

Mat dense_apply(const DenseLayer& layer, const Mat& input);
// Fills grads with dL/dw and dL/db and returns dL/dinput.
Mat dense_grad(const DenseLayer& layer, const Mat& input, const Mat& upstream, DenseGrads& grads);

Mat relu(const Mat& x);
// upstream masked by the sign of the pre-activation (0 at exactly 0).
Mat relu_backward(const Mat& pre, const Mat& upstream);

// Normalizes each column (softmax_columns) or each row (softmax_rows) to sum
// to 1, stabilized by subtracting the column/row maximum before exponentiating.
Mat softmax_columns(const Mat& x);
Mat softmax_rows(const Mat& x);
// Exact Jacobian-vector products given the softmax output and dL/d(output).
Mat softmax_columns_backward(const Mat& soft, const Mat& upstream);
Mat softmax_rows_backward(const Mat& soft, const Mat& upstream);

struct OptimConfig {
  // (iteration_count, lr) pairs applied in order; must cover total_iterations.
  std::vector<std::pair<int, double>> learning_rate_schedule;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 2;
  int total_iterations = 3500;
};

// Default desk-scale recipe: lr 1e-3 for the first 4/7 of the run, then 1e-4.
OptimConfig default_optim(int total_iterations = 3500, double base_lr = 1e-3);

// Learning rate for a 1-based iteration index.
double lr_at(const OptimConfig& cfg, int iteration);

// v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v.
// Applied element-wise to every tensor (weights and biases) in fixed order.
void sgd_update(ModelParams& params, const ModelGrads& grads, double lr, double momentum,
                double weight_decay);

// Checkpoint layout: "OICRCKPT" magic, one version byte (1), u32 LE dims
// (D, H, C, K), then every tensor as little-endian f32 row-major in the
// init_model layer order (weights then bias per layer), then a u32 LE CRC-32
// of all preceding bytes. Momentum buffers are not serialized; loading
// returns them zeroed.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace oicr
