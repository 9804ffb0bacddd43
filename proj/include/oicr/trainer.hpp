#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oicr/netcore.hpp"
#include "oicr/oicr.hpp"
#include "oicr/synthdata.hpp"

namespace oicr {

struct TrainConfig {
  OptimConfig optim = default_optim();
  OicrConfig oicr;
  bool weighted = true;
  uint64_t seed = 0;
  int hidden_dim = 64;
  int log_every = 50;
};

struct TrainLogRow {
  int iter = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_base = 0.0;
  std::vector<double> loss_refine;  // one entry per stage
};

struct TrainResult {
  ModelParams params;
  std::vector<TrainLogRow> log;
};

// Deterministic SGD loop: model initialized from cfg.seed, epoch-cyclic
// mini-batches from a seeded shuffle, per-bag losses averaged into one batch
// gradient (fixed summation order), learning rate from the schedule. Emits a
// log row every log_every iterations with that iteration's batch-mean losses.
// Throws std::runtime_error naming the iteration and bag if a loss turns
// non-finite, and std::invalid_argument for empty/unlabeled datasets or a
// schedule that does not cover total_iterations.
TrainResult train_run(const std::vector<Bag>& dataset, const TrainConfig& cfg);

// CSV with header iter,lr,loss_total,loss_base,loss_r1,...,loss_rK.
std::string format_training_log(const std::vector<TrainLogRow>& log, int K);

}  // namespace oicr
