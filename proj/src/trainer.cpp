#include "oicr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "oicr/check.hpp"
#include "oicr/rng.hpp"

namespace oicr {

namespace {

// Distinct stream from the model-init seed so reseeding one never aliases
// the other.
constexpr uint64_t kShuffleSalt = 0x9e3779b97f4a7c15ull;

void shuffle_indices(std::vector<int>& order, Rng& rng) {
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(0, i)]);
}

}  // namespace

TrainResult train_run(const std::vector<Bag>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train_run: empty dataset");
  for (const Bag& bag : dataset) {
    bool positive = false;
    for (int y : bag.label) positive |= (y == 1);
    if (!positive)
      throw std::invalid_argument("train_run: bag " + std::to_string(bag.image_id) +
                                  " has no positive class");
  }
  int scheduled = 0;
  for (const auto& [count, lr] : cfg.optim.learning_rate_schedule) scheduled += count;
  if (scheduled < cfg.optim.total_iterations)
    throw std::invalid_argument("train_run: lr schedule covers " + std::to_string(scheduled) +
                                " of " + std::to_string(cfg.optim.total_iterations) +
                                " iterations");
  OICR_CHECK(cfg.optim.batch_size >= 1, "batch size");

  ModelDims dims;
  dims.feature_dim = dataset[0].feature_dim;
  dims.hidden_dim = cfg.hidden_dim;
  dims.num_classes = static_cast<int>(dataset[0].label.size());
  dims.num_refine = cfg.oicr.K;

  TrainResult result;
  result.params = init_model(dims, cfg.seed);

  Rng shuffle_rng(cfg.seed ^ kShuffleSalt);
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_indices(order, shuffle_rng);
  size_t cursor = 0;

  const int B = cfg.optim.batch_size;
  for (int iter = 1; iter <= cfg.optim.total_iterations; ++iter) {
    ModelGrads batch = zero_grads(dims);
    double sum_total = 0.0, sum_base = 0.0;
    std::vector<double> sum_refine(cfg.oicr.K, 0.0);

    for (int b = 0; b < B; ++b) {
      if (cursor >= order.size()) {
        shuffle_indices(order, shuffle_rng);
        cursor = 0;
      }
      const Bag& bag = dataset[order[cursor++]];
      ModelGrads g = zero_grads(dims);
      LossBreakdown loss = total_loss(bag, result.params, cfg.oicr, cfg.weighted, &g);
      if (!std::isfinite(loss.total))
        throw std::runtime_error("train_run: non-finite loss at iteration " +
                                 std::to_string(iter) + ", bag " + std::to_string(bag.image_id));
      accumulate_grads(batch, g);
      sum_total += loss.total;
      sum_base += loss.base;
      for (int k = 0; k < cfg.oicr.K; ++k) sum_refine[k] += loss.refine[k];
    }
    scale_grads(batch, 1.0 / B);

    double lr = lr_at(cfg.optim, iter);
    sgd_update(result.params, batch, lr, cfg.optim.momentum, cfg.optim.weight_decay);

    if (cfg.log_every > 0 && iter % cfg.log_every == 0) {
      TrainLogRow row;
      row.iter = iter;
      row.lr = lr;
      row.loss_total = sum_total / B;
      row.loss_base = sum_base / B;
      for (double v : sum_refine) row.loss_refine.push_back(v / B);
      result.log.push_back(std::move(row));
    }
  }
  return result;
}

std::string format_training_log(const std::vector<TrainLogRow>& log, int K) {
  std::string csv = "iter,lr,loss_total,loss_base";
  for (int k = 1; k <= K; ++k) csv += ",loss_r" + std::to_string(k);
  csv += "\n";
  char buf[64];
  for (const TrainLogRow& row : log) {
    OICR_CHECK(static_cast<int>(row.loss_refine.size()) == K, "log row refine count");
    std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6f,%.6f", row.iter, row.lr, row.loss_total,
                  row.loss_base);
    csv += buf;
    for (double v : row.loss_refine) {
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      csv += buf;
    }
    csv += "\n";
  }
  return csv;
}

}  // namespace oicr
