#include <cmath>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "oicr/eval.hpp"
#include "oicr/io_util.hpp"
#include "oicr/netcore.hpp"
#include "oicr/oicr.hpp"
#include "oicr/synthdata.hpp"
#include "oicr/trainer.hpp"

namespace {

using namespace oicr;

void print_kv(const std::string& key, const std::string& value) {
  std::printf("config %s=%s\n", key.c_str(), value.c_str());
}
void print_kv(const std::string& key, double value) {
  std::printf("config %s=%g\n", key.c_str(), value);
}
void print_kv(const std::string& key, int value) { std::printf("config %s=%d\n", key.c_str(), value); }
void print_kv(const std::string& key, uint64_t value) {
  std::printf("config %s=%llu\n", key.c_str(), static_cast<unsigned long long>(value));
}

// Fraction of objects whose best proposal (by feature alignment with the
// class signature) fails to localize the object; a quick view of how strongly
// the benchmark exhibits part lock-on.
double part_dominance_fraction(const std::vector<Bag>& bags, int num_classes, int feature_dim) {
  int total = 0, locked = 0;
  for (const Bag& bag : bags) {
    for (const GroundTruthObject& g : bag.ground_truth) {
      std::vector<double> sig = class_signature(g.class_index, num_classes, feature_dim);
      int best = 0;
      double best_dot = -1e300;
      for (size_t r = 0; r < bag.proposals.size(); ++r) {
        double dot = 0.0;
        for (int d = 0; d < feature_dim; ++d) dot += bag.feature_at(static_cast<int>(r), d) * sig[d];
        if (dot > best_dot) {
          best_dot = dot;
          best = static_cast<int>(r);
        }
      }
      ++total;
      if (iou(bag.proposals[best], g.box) < 0.5) ++locked;
    }
  }
  return total ? static_cast<double>(locked) / total : 0.0;
}

struct TrainFlags {
  std::string data, out = "checkpoint.bin", log = "train_log.csv";
  uint64_t seed = 0;
  int iters = 3500;
  int K = 3;
  double iou_threshold = 0.5;
  bool unweighted = false;
  int hidden_dim = 64;
  int batch = 2;
  double momentum = 0.9, weight_decay = 0.0005, lr = 0.001;
  int log_every = 50;
};

TrainConfig make_train_config(const TrainFlags& f) {
  TrainConfig cfg;
  cfg.optim = default_optim(f.iters, f.lr);
  cfg.optim.batch_size = f.batch;
  cfg.optim.momentum = f.momentum;
  cfg.optim.weight_decay = f.weight_decay;
  cfg.oicr.K = f.K;
  cfg.oicr.iou_threshold = f.iou_threshold;
  cfg.weighted = !f.unweighted;
  cfg.seed = f.seed;
  cfg.hidden_dim = f.hidden_dim;
  cfg.log_every = f.log_every;
  return cfg;
}

ScoreSource parse_source(const std::string& name) {
  if (name == "refined") return ScoreSource::refined_mean;
  if (name == "midn") return ScoreSource::midn;
  throw std::invalid_argument("unknown score source: " + name);
}

int run_gen_data(const SceneConfig& cfg, const std::string& out) {
  print_kv("out", out);
  print_kv("seed", cfg.seed);
  print_kv("images", cfg.images);
  print_kv("classes", cfg.num_classes);
  print_kv("feature_dim", cfg.feature_dim);
  print_kv("proposals", cfg.proposals_per_image);
  print_kv("canvas_width", cfg.canvas_width);
  print_kv("canvas_height", cfg.canvas_height);
  print_kv("objects_min", cfg.objects_min);
  print_kv("objects_max", cfg.objects_max);
  print_kv("part_bias", cfg.part_bias);
  print_kv("noise_sigma", cfg.feature_noise_sigma);

  std::vector<Bag> bags = generate_dataset(cfg);
  save_dataset(bags, out);
  int objects = 0;
  for (const Bag& b : bags) objects += static_cast<int>(b.ground_truth.size());
  std::printf("wrote %zu images (%d objects) to %s\n", bags.size(), objects, out.c_str());
  std::printf("part_dominance=%.3f\n",
              part_dominance_fraction(bags, cfg.num_classes, cfg.feature_dim));
  return 0;
}

int run_train(const TrainFlags& f) {
  print_kv("data", f.data);
  print_kv("out", f.out);
  print_kv("log", f.log);
  print_kv("seed", f.seed);
  print_kv("iters", f.iters);
  print_kv("K", f.K);
  print_kv("iou_threshold", f.iou_threshold);
  print_kv("weighted", f.unweighted ? 0 : 1);
  print_kv("hidden_dim", f.hidden_dim);
  print_kv("batch", f.batch);
  print_kv("momentum", f.momentum);
  print_kv("weight_decay", f.weight_decay);
  print_kv("lr", f.lr);
  print_kv("log_every", f.log_every);

  std::vector<Bag> bags = load_dataset(f.data);
  TrainConfig cfg = make_train_config(f);
  TrainResult result = train_run(bags, cfg);
  save_checkpoint(result.params, f.out);
  write_file_atomic(f.log, format_training_log(result.log, cfg.oicr.K));
  double final_loss = result.log.empty() ? 0.0 : result.log.back().loss_total;
  std::printf("trained %d iterations; final logged loss %.6f\n", f.iters, final_loss);
  std::printf("checkpoint %s\nlog %s\n", f.out.c_str(), f.log.c_str());
  return 0;
}

int run_eval(const std::string& data, const std::string& ckpt, const std::string& out,
             double nms_threshold, double match_iou, const std::string& ap_mode,
             const std::string& source) {
  print_kv("data", data);
  print_kv("ckpt", ckpt);
  print_kv("out", out);
  print_kv("nms_threshold", nms_threshold);
  print_kv("match_iou", match_iou);
  print_kv("ap_mode", ap_mode);
  print_kv("source", source);

  std::vector<Bag> bags = load_dataset(data);
  ModelParams params = load_checkpoint(ckpt);
  EvalConfig cfg;
  cfg.nms_threshold = nms_threshold;
  cfg.match_iou = match_iou;
  cfg.ap_mode = ap_mode == "area" ? ApMode::area : ApMode::voc07;
  cfg.source = parse_source(source);
  EvalReport report = evaluate_full(bags, params, cfg);
  write_file_atomic(out, format_metrics_csv(report));
  std::printf("images=%d ground_truths=%d detections=%d\n", report.images, report.ground_truths,
              report.detections);
  std::printf("mAP=%.6f CorLoc=%.6f\n", report.map, report.mean_corloc);
  return 0;
}

int run_detect(const std::string& data, const std::string& ckpt, const std::string& out,
               int image_id, double nms_threshold, const std::string& source) {
  print_kv("data", data);
  print_kv("ckpt", ckpt);
  print_kv("out", out);
  print_kv("image", image_id);
  print_kv("nms_threshold", nms_threshold);
  print_kv("source", source);

  std::vector<Bag> bags = load_dataset(data);
  ModelParams params = load_checkpoint(ckpt);
  EvalConfig cfg;
  cfg.nms_threshold = nms_threshold;
  cfg.source = parse_source(source);

  nlohmann::json records = nlohmann::json::array();
  int emitted = 0;
  for (const Bag& bag : bags) {
    if (image_id >= 0 && bag.image_id != image_id) continue;
    for (const Detection& det : detect(bag, params, cfg)) {
      nlohmann::json rec;
      rec["image_id"] = bag.image_id;
      rec["class_index"] = det.class_index;
      rec["box"] = {det.box.x_min, det.box.y_min, det.box.x_max, det.box.y_max};
      rec["score"] = det.score;
      records.push_back(std::move(rec));
      ++emitted;
    }
  }
  write_file_atomic(out, records.dump(2) + "\n");
  std::printf("wrote %d detections to %s\n", emitted, out.c_str());
  return 0;
}

int run_export_pseudo_gt(const std::string& data, const std::string& ckpt, const std::string& out,
                         const std::string& source) {
  print_kv("data", data);
  print_kv("ckpt", ckpt);
  print_kv("out", out);
  print_kv("source", source);

  std::vector<Bag> bags = load_dataset(data);
  ModelParams params = load_checkpoint(ckpt);
  EvalConfig cfg;
  cfg.source = parse_source(source);
  export_pseudo_gt(bags, params, cfg, out);
  std::printf("wrote pseudo ground truths to %s\n", out.c_str());
  return 0;
}

struct AblateCell {
  int K;
  bool weighted;
  double iou_threshold;
};

int run_ablate(const std::string& data, const std::string& out, const std::string& axis,
               uint64_t seed, int iters) {
  print_kv("data", data);
  print_kv("out", out);
  print_kv("axis", axis);
  print_kv("seed", seed);
  print_kv("iters", iters);

  std::vector<Bag> bags = load_dataset(data);

  std::vector<AblateCell> cells;
  const std::vector<int> k_axis{0, 1, 2, 3};
  const std::vector<double> it_axis{0.3, 0.4, 0.5, 0.6, 0.7};
  if (axis == "K") {
    for (int k : k_axis) cells.push_back({k, true, 0.5});
  } else if (axis == "loss") {
    cells.push_back({3, true, 0.5});
    cells.push_back({3, false, 0.5});
  } else if (axis == "it") {
    for (double it : it_axis) cells.push_back({3, true, it});
  } else if (axis == "all") {
    for (int k : k_axis)
      for (int weighted = 1; weighted >= 0; --weighted)
        for (double it : it_axis) cells.push_back({k, weighted == 1, it});
  } else {
    throw std::invalid_argument("unknown ablation axis: " + axis);
  }

  std::string csv = "K,weighted,I_t,seed,mAP,CorLoc\n";
  for (const AblateCell& cell : cells) {
    TrainFlags f;
    f.seed = seed;
    f.iters = iters;
    f.K = cell.K;
    f.iou_threshold = cell.iou_threshold;
    f.unweighted = !cell.weighted;
    TrainConfig cfg = make_train_config(f);
    TrainResult result = train_run(bags, cfg);

    EvalConfig ecfg;
    ecfg.source = cell.K == 0 ? ScoreSource::midn : ScoreSource::refined_mean;
    EvalReport report = evaluate_full(bags, result.params, ecfg);

    char line[160];
    std::snprintf(line, sizeof(line), "%d,%d,%.2f,%llu,%.6f,%.6f\n", cell.K,
                  cell.weighted ? 1 : 0, cell.iou_threshold,
                  static_cast<unsigned long long>(seed), report.map, report.mean_corloc);
    csv += line;
    std::printf("cell K=%d weighted=%d I_t=%.2f: mAP=%.6f CorLoc=%.6f\n", cell.K,
                cell.weighted ? 1 : 0, cell.iou_threshold, report.map, report.mean_corloc);
    std::fflush(stdout);
  }
  write_file_atomic(out, csv);
  std::printf("wrote %zu rows to %s\n", cells.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly supervised detection with online instance classifier refinement"};
  app.require_subcommand(1);

  // gen-data
  SceneConfig scene;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", scene.seed, "dataset seed");
  gen->add_option("--images", scene.images, "number of images");
  gen->add_option("--classes", scene.num_classes, "number of classes");
  gen->add_option("--feature-dim", scene.feature_dim, "feature dimensionality");
  gen->add_option("--proposals", scene.proposals_per_image, "proposals per image");
  gen->add_option("--canvas-width", scene.canvas_width, "canvas width");
  gen->add_option("--canvas-height", scene.canvas_height, "canvas height");
  gen->add_option("--objects-min", scene.objects_min, "min objects per image");
  gen->add_option("--objects-max", scene.objects_max, "max objects per image");
  gen->add_option("--part-bias", scene.part_bias, "part vs extent feature bias in [0,1]");
  gen->add_option("--noise-sigma", scene.feature_noise_sigma, "feature noise sigma");

  // train
  TrainFlags tf;
  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--data", tf.data, "dataset directory")->required();
  train->add_option("--out", tf.out, "checkpoint output path");
  train->add_option("--log", tf.log, "training log CSV path");
  train->add_option("--seed", tf.seed, "training seed");
  train->add_option("--iters", tf.iters, "total iterations");
  train->add_option("--K", tf.K, "refinement stages");
  train->add_option("--iou-threshold", tf.iou_threshold, "supervision overlap threshold");
  train->add_flag("--unweighted", tf.unweighted, "use the unweighted refinement loss");
  train->add_option("--hidden-dim", tf.hidden_dim, "trunk width");
  train->add_option("--batch", tf.batch, "mini-batch size");
  train->add_option("--momentum", tf.momentum, "SGD momentum");
  train->add_option("--weight-decay", tf.weight_decay, "weight decay");
  train->add_option("--lr", tf.lr, "base learning rate");
  train->add_option("--log-every", tf.log_every, "log period in iterations");

  // eval
  std::string eval_data, eval_ckpt, eval_out = "metrics.csv";
  double eval_nms = 0.3, eval_match_iou = 0.5;
  std::string eval_ap_mode = "voc07", eval_source = "refined";
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (mAP and CorLoc)");
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--out", eval_out, "metrics CSV path");
  eval_cmd->add_option("--nms-threshold", eval_nms, "NMS IoU threshold");
  eval_cmd->add_option("--match-iou", eval_match_iou, "true-positive IoU threshold");
  eval_cmd->add_option("--ap-mode", eval_ap_mode, "AP interpolation: voc07 or area")
      ->check(CLI::IsMember({"voc07", "area"}));
  eval_cmd->add_option("--source", eval_source, "score source: refined or midn")
      ->check(CLI::IsMember({"refined", "midn"}));

  // detect
  std::string det_data, det_ckpt, det_out = "detections.json";
  int det_image = -1;
  double det_nms = 0.3;
  std::string det_source = "refined";
  CLI::App* det = app.add_subcommand("detect", "dump detections for one or all images");
  det->add_option("--data", det_data, "dataset directory")->required();
  det->add_option("--ckpt", det_ckpt, "checkpoint path")->required();
  det->add_option("--out", det_out, "detections JSON path");
  det->add_option("--image", det_image, "image id, or -1 for all");
  det->add_option("--nms-threshold", det_nms, "NMS IoU threshold");
  det->add_option("--source", det_source, "score source: refined or midn")
      ->check(CLI::IsMember({"refined", "midn"}));

  // export-pseudo-gt
  std::string pgt_data, pgt_ckpt, pgt_out = "pseudo_gt.json";
  std::string pgt_source = "refined";
  CLI::App* pgt = app.add_subcommand("export-pseudo-gt",
                                     "export top-scoring proposals as pseudo ground truths");
  pgt->add_option("--data", pgt_data, "dataset directory")->required();
  pgt->add_option("--ckpt", pgt_ckpt, "checkpoint path")->required();
  pgt->add_option("--out", pgt_out, "pseudo ground-truth JSON path");
  pgt->add_option("--source", pgt_source, "score source: refined or midn")
      ->check(CLI::IsMember({"refined", "midn"}));

  // ablate
  std::string ab_data, ab_out = "ablation.csv", ab_axis;
  uint64_t ab_seed = 1;
  int ab_iters = 3500;
  CLI::App* ab = app.add_subcommand("ablate", "sweep one study axis, training each cell");
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--out", ab_out, "ablation CSV path");
  ab->add_option("--axis", ab_axis, "K, loss, it, or all")
      ->required()
      ->check(CLI::IsMember({"K", "loss", "it", "all"}));
  ab->add_option("--seed", ab_seed, "training seed for every cell");
  ab->add_option("--iters", ab_iters, "iterations per cell");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(scene, gen_out);
    if (train->parsed()) return run_train(tf);
    if (eval_cmd->parsed())
      return run_eval(eval_data, eval_ckpt, eval_out, eval_nms, eval_match_iou, eval_ap_mode,
                      eval_source);
    if (det->parsed()) return run_detect(det_data, det_ckpt, det_out, det_image, det_nms, det_source);
    if (pgt->parsed()) return run_export_pseudo_gt(pgt_data, pgt_ckpt, pgt_out, pgt_source);
    if (ab->parsed()) return run_ablate(ab_data, ab_out, ab_axis, ab_seed, ab_iters);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
