#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "oicr/oicr.hpp"
#include "oicr/synthdata.hpp"
#include "oicr/trainer.hpp"
#include "test_support.hpp"

using namespace oicr;

namespace {

std::vector<Bag> tiny_dataset(int images = 8) {
  SceneConfig cfg;
  cfg.images = images;
  cfg.num_classes = 4;
  cfg.feature_dim = 16;
  cfg.proposals_per_image = 14;
  cfg.objects_min = cfg.objects_max = 1;
  cfg.seed = 21;
  return generate_dataset(cfg);
}

TrainConfig tiny_config(int iters, int K = 2) {
  TrainConfig cfg;
  cfg.optim = default_optim(iters, 1e-3);
  cfg.oicr.K = K;
  cfg.hidden_dim = 16;
  cfg.seed = 5;
  cfg.log_every = 10;
  return cfg;
}

bool params_equal(ModelParams& a, ModelParams& b) {
  auto sa = testsup::param_slots(a);
  auto sb = testsup::param_slots(b);
  if (sa.size() != sb.size()) return false;
  for (size_t i = 0; i < sa.size(); ++i)
    if (*sa[i] != *sb[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("train_run is bit-deterministic for a fixed seed") {
  auto data = tiny_dataset();
  TrainConfig cfg = tiny_config(30);
  TrainResult a = train_run(data, cfg);
  TrainResult b = train_run(data, cfg);
  CHECK(params_equal(a.params, b.params));
  CHECK(format_training_log(a.log, cfg.oicr.K) == format_training_log(b.log, cfg.oicr.K));

  cfg.seed = 6;
  TrainResult c = train_run(data, cfg);
  CHECK(!params_equal(a.params, c.params));
}

TEST_CASE("train_run validates its inputs up front") {
  TrainConfig cfg = tiny_config(10);
  CHECK_THROWS_AS(train_run({}, cfg), std::invalid_argument);

  auto data = tiny_dataset(2);
  data[1].label.assign(data[1].label.size(), 0);
  data[1].image_id = 7;
  try {
    train_run(data, cfg);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }

  TrainConfig gap = tiny_config(10);
  gap.optim.learning_rate_schedule = {{5, 1e-3}};  // covers only half the run
  CHECK_THROWS_AS(train_run(tiny_dataset(2), gap), std::invalid_argument);
}

TEST_CASE("the logged loss decreases over a short run") {
  auto data = tiny_dataset();
  TrainConfig cfg = tiny_config(300);
  TrainResult res = train_run(data, cfg);
  REQUIRE(res.log.size() == 30);
  for (const TrainLogRow& row : res.log) {
    REQUIRE(std::isfinite(row.loss_total));
    REQUIRE(row.loss_total >= 0.0);
  }
  CHECK(res.log.back().loss_total < res.log.front().loss_total * 0.95);
}

TEST_CASE("log rows follow the cadence and the lr schedule") {
  auto data = tiny_dataset(2);
  TrainConfig cfg = tiny_config(4, 1);
  cfg.optim.learning_rate_schedule = {{2, 1e-3}, {2, 1e-4}};
  cfg.optim.total_iterations = 4;
  cfg.log_every = 1;
  TrainResult res = train_run(data, cfg);
  REQUIRE(res.log.size() == 4);
  CHECK(res.log[0].iter == 1);
  CHECK(res.log[1].lr == 1e-3);
  CHECK(res.log[2].lr == 1e-4);
  CHECK(res.log[3].lr == 1e-4);
  for (const TrainLogRow& row : res.log) REQUIRE(row.loss_refine.size() == 1);

  std::string csv = format_training_log(res.log, 1);
  CHECK(csv.rfind("iter,lr,loss_total,loss_base,loss_r1\n", 0) == 0);
  CHECK(csv.find("\n1,0.001,") != std::string::npos);
  CHECK(csv.find("\n3,0.0001,") != std::string::npos);

  // a K=0 run logs only the base loss and the header shrinks to match
  TrainConfig base_only = tiny_config(2, 0);
  base_only.log_every = 1;
  TrainResult res0 = train_run(data, base_only);
  std::string csv0 = format_training_log(res0.log, 0);
  CHECK(csv0.rfind("iter,lr,loss_total,loss_base\n", 0) == 0);
  REQUIRE(res0.log.size() == 2);
  CHECK(res0.log[0].loss_total == res0.log[0].loss_base);

  // log_every 0 disables logging entirely
  TrainConfig quiet = tiny_config(3, 1);
  quiet.log_every = 0;
  CHECK(train_run(data, quiet).log.empty());
}

TEST_CASE("one iteration equals the hand-computed batch-mean SGD step") {
  auto data = tiny_dataset(2);
  TrainConfig cfg = tiny_config(1);
  cfg.optim.batch_size = 2;
  TrainResult trained = train_run(data, cfg);

  ModelDims dims{data[0].feature_dim, cfg.hidden_dim, static_cast<int>(data[0].label.size()),
                 cfg.oicr.K};
  ModelParams manual = init_model(dims, cfg.seed);
  ModelGrads batch = zero_grads(dims);
  for (const Bag& bag : data) {  // batch of 2 = the whole dataset; order cancels in the mean
    ModelGrads g = zero_grads(dims);
    total_loss(bag, manual, cfg.oicr, cfg.weighted, &g);
    accumulate_grads(batch, g);
  }
  scale_grads(batch, 0.5);
  sgd_update(manual, batch, lr_at(cfg.optim, 1), cfg.optim.momentum, cfg.optim.weight_decay);

  CHECK(params_equal(trained.params, manual));
}

TEST_CASE("exploding updates raise a runtime error instead of logging NaN") {
  auto data = tiny_dataset(2);
  TrainConfig cfg = tiny_config(100);
  cfg.optim.learning_rate_schedule = {{100, 1e12}};
  CHECK_THROWS_AS(train_run(data, cfg), std::runtime_error);
}
