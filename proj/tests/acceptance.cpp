// Acceptance gate: every release-blocking behavior, one line of verdict each.
// Exits nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <string>
#include <vector>

#include "oicr/eval.hpp"
#include "oicr/io_util.hpp"
#include "oicr/geometry.hpp"
#include "oicr/midn.hpp"
#include "oicr/netcore.hpp"
#include "oicr/oicr.hpp"
#include "oicr/rng.hpp"
#include "oicr/synthdata.hpp"
#include "oicr/trainer.hpp"
#include "test_support.hpp"

using namespace oicr;

namespace {

int g_failures = 0;

void report(int number, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", number, name,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// ---- criterion 1: composed analytic gradient vs central differences --------

void criterion_gradients() {
  auto start = std::chrono::steady_clock::now();
  const double h = 1e-4;
  ModelDims dims{8, 8, 3, 2};
  OicrConfig cfg;
  cfg.K = 2;

  Rng rng(2024);
  double worst = 0.0;
  int ran = 0;
  for (int attempt = 0; attempt < 400 && ran < 20; ++attempt) {
    ModelParams params = init_model(dims, 5000 + attempt);
    // pin every ReLU far from its kink (a mixed on/off pattern) so no probe
    // of size h can flip a unit and break the central difference
    for (size_t i = 0; i < params.trunk1.b.size(); ++i)
      params.trunk1.b[i] = i % 2 ? 0.5 : -0.5;
    for (size_t i = 0; i < params.trunk2.b.size(); ++i)
      params.trunk2.b[i] = i % 3 ? 0.5 : -0.5;
    Bag bag = testsup::random_bag(rng, 3, 7, 8);
    ForwardState state;
    SupervisionPlan plan;
    total_loss(bag, params, cfg, true, nullptr, &plan, &state);
    double closest = 1e9;
    for (double v : state.pre1.a) closest = std::min(closest, std::fabs(v));
    for (double v : state.pre2.a) closest = std::min(closest, std::fabs(v));
    if (closest < 100 * h) continue;  // margin >> any probe-induced shift
    ++ran;

    ModelGrads grads = zero_grads(dims);
    total_loss_with_plan(bag, params, cfg, true, plan, &grads);
    std::vector<double> analytic = testsup::flatten_grads(grads);
    std::vector<double> numeric = testsup::fd_gradient(
        params, [&]() { return total_loss_with_plan(bag, params, cfg, true, plan).total; }, h);
    worst = std::max(worst, testsup::max_rel_err(analytic, numeric));
  }
  double elapsed = seconds_since(start);
  bool pass = ran == 20 && worst < 1e-4 && elapsed < 10.0;
  report(1, "full-model gradient check", pass,
         fmt("%d/20 instances, max rel err %.3e (budget 1e-4), %.2fs (budget 10s)", ran, worst,
             elapsed));
}

// ---- criterion 2: supervision generation vs the literal oracle -------------

void criterion_supervision_oracle() {
  auto start = std::chrono::steady_clock::now();
  Rng rng(7777);
  const double thresholds[] = {0.3, 0.5, 0.6};
  int bags = 0, mismatches = 0;
  for (int trial = 0; trial < 120; ++trial) {
    int C = rng.uniform_int(2, 6);
    int R = rng.uniform_int(2, 50);
    std::vector<Box> proposals;
    for (int r = 0; r < R; ++r) proposals.push_back(testsup::random_box_in(rng));
    std::vector<int> label(C, 0);
    for (int c = 0; c < C; ++c) label[c] = rng.uniform() < 0.5 ? 1 : 0;
    label[rng.uniform_int(0, C - 1)] = 1;
    Mat prev(C, R);
    for (double& v : prev.a) v = rng.uniform();
    for (int r = 1; r < R; ++r)
      if (rng.uniform() < 0.2) prev(rng.uniform_int(0, C - 1), r) = prev(0, r - 1);

    OicrConfig cfg;
    cfg.K = 1;
    cfg.iou_threshold = thresholds[trial % 3];
    SupervisionPlan plan = generate_supervision(proposals, label, {prev}, cfg);
    testsup::OracleStage oracle =
        testsup::oracle_stage(proposals, label, prev, cfg.iou_threshold);
    ++bags;
    for (int r = 0; r < R; ++r) {
      if (testsup::label_row_of(plan.stages[0].labels, r) != oracle.label_row[r] ||
          plan.stages[0].weights[r] != oracle.weights[r])
        ++mismatches;
    }
  }
  double elapsed = seconds_since(start);
  bool pass = bags >= 100 && mismatches == 0 && elapsed < 5.0;
  report(2, "supervision matches the oracle", pass,
         fmt("%d bags, %d proposal mismatches, %.2fs (budget 5s)", bags, mismatches, elapsed));
}

// ---- criterion 3: NMS vs brute force, AP hand values ------------------------

void criterion_nms_and_ap() {
  Rng rng(31337);
  int instances = 0, nms_mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    int n = rng.uniform_int(1, 200);
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      boxes.push_back(testsup::random_box_in(rng));
      scores.push_back(rng.uniform());
    }
    for (int i = 1; i < n; ++i)
      if (rng.uniform() < 0.1) scores[i] = scores[i - 1];  // exercise tie order
    double thr = rng.uniform(0.2, 0.7);
    ++instances;
    if (nms_indices(boxes, scores, thr) != testsup::oracle_nms(boxes, scores, thr))
      ++nms_mismatches;
  }

  std::vector<ClassGroundTruth> two_gt = {{0, {0, 0, 10, 10}}, {0, {50, 50, 60, 60}}};
  std::vector<RankedDetection> tft = {
      {0, 0, 0.9, {0, 0, 10, 10}},
      {0, 1, 0.8, {100, 100, 110, 110}},
      {0, 2, 0.7, {50, 50, 60, 60}},
  };
  bool ap_ok =
      std::fabs(voc_ap(tft, two_gt, 0.5, ApMode::voc07) - 28.0 / 33.0) < 1e-12 &&
      std::fabs(voc_ap(tft, two_gt, 0.5, ApMode::area) - 5.0 / 6.0) < 1e-12;
  std::vector<ClassGroundTruth> one_gt = {{0, {0, 0, 10, 10}}};
  std::vector<RankedDetection> ft = {
      {0, 0, 0.9, {30, 30, 40, 40}},
      {0, 1, 0.8, {0, 0, 10, 10}},
  };
  ap_ok = ap_ok && std::fabs(voc_ap(ft, one_gt, 0.5, ApMode::voc07) - 0.5) < 1e-12 &&
          std::fabs(voc_ap(ft, one_gt, 0.5, ApMode::area) - 0.5) < 1e-12;

  bool pass = instances == 100 && nms_mismatches == 0 && ap_ok;
  report(3, "NMS brute-force equivalence and AP hand values", pass,
         fmt("%d NMS instances, %d mismatches, AP hand values %s", instances, nms_mismatches,
             ap_ok ? "exact" : "WRONG"));
}

// ---- criterion 4: MIDN structural invariants --------------------------------

void criterion_midn_invariants() {
  Rng rng(404);
  int passes = 0, violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    int C = rng.uniform_int(2, 6);
    int H = rng.uniform_int(2, 12);
    int R = rng.uniform_int(1, 20);
    ModelParams p = init_model(ModelDims{4, H, C, 0}, rng.next_u64());
    for (double& v : p.stream_c.w.a) v *= 40.0;
    for (double& v : p.stream_d.w.a) v *= 40.0;
    Mat trunk(H, R);
    for (double& v : trunk.a) v = rng.normal();
    MidnOutput out = midn_forward(trunk, p);
    ++passes;

    for (int r = 0; r < R; ++r) {
      double col = 0;
      for (int c = 0; c < C; ++c) col += out.s_c(c, r);
      if (std::fabs(col - 1.0) > 1e-9) ++violations;
    }
    for (int c = 0; c < C; ++c) {
      double row = 0;
      for (int r = 0; r < R; ++r) row += out.s_d(c, r);
      if (std::fabs(row - 1.0) > 1e-9) ++violations;
    }
    for (double v : out.x_R0.a)
      if (v < 0.0 || v > 1.0) ++violations;
    for (double v : out.phi)
      if (!(v > 0.0 && v < 1.0)) ++violations;
  }
  bool pass = passes == 1000 && violations == 0;
  report(4, "MIDN invariants over 1000 random passes", pass,
         fmt("%d passes, %d violations", passes, violations));
}

// ---- criteria 5-7: refinement ablations on the lock-on dataset -------------

struct RunOutcome {
  double map = 0.0;
  double corloc = 0.0;
  bool finite_log = true;
};

RunOutcome run_cell(const std::vector<Bag>& data, int K, bool weighted, double iou_threshold,
                    uint64_t seed) {
  TrainConfig cfg;
  cfg.optim = default_optim();
  cfg.oicr.K = K;
  cfg.oicr.iou_threshold = iou_threshold;
  cfg.weighted = weighted;
  cfg.seed = seed;
  TrainResult res = train_run(data, cfg);

  RunOutcome out;
  for (const TrainLogRow& row : res.log) {
    out.finite_log = out.finite_log && std::isfinite(row.loss_total) &&
                     std::isfinite(row.loss_base);
    for (double v : row.loss_refine) out.finite_log = out.finite_log && std::isfinite(v);
  }
  EvalConfig ev;
  ev.source = K == 0 ? ScoreSource::midn : ScoreSource::refined_mean;
  EvalReport rep = evaluate_full(data, res.params, ev);
  out.map = rep.map;
  out.corloc = rep.mean_corloc;
  return out;
}

double mean3(const double* v) { return (v[0] + v[1] + v[2]) / 3.0; }

void criteria_ablations() {
  auto start = std::chrono::steady_clock::now();
  std::vector<Bag> data = generate_dataset(SceneConfig{});  // seed 7, 200 images, bias 0.6

  const uint64_t seeds[3] = {1, 2, 3};
  double k0[3], k1[3], k3w[3], k3u[3], k3w_hi[3];
  bool finite = true;
  for (int i = 0; i < 3; ++i) {
    RunOutcome a = run_cell(data, 0, true, 0.5, seeds[i]);
    RunOutcome b = run_cell(data, 1, true, 0.5, seeds[i]);
    RunOutcome c = run_cell(data, 3, true, 0.5, seeds[i]);
    RunOutcome d = run_cell(data, 3, false, 0.5, seeds[i]);
    RunOutcome e = run_cell(data, 3, true, 0.6, seeds[i]);
    k0[i] = a.map;
    k1[i] = b.map;
    k3w[i] = c.map;
    k3u[i] = d.map;
    k3w_hi[i] = e.map;
    finite = finite && a.finite_log && b.finite_log && c.finite_log && d.finite_log &&
             e.finite_log;
  }
  double elapsed = seconds_since(start);

  double m0 = mean3(k0), m1 = mean3(k1), m3 = mean3(k3w);
  bool pass5 = (m3 >= m0 + 0.05) && (m1 > m0) && elapsed < 300.0;
  report(5, "refinement beats the no-refinement baseline", pass5,
         fmt("mAP means K0=%.4f K1=%.4f K3=%.4f (gain %.1f pts, need 5.0; K1>K0 %s), "
             "15 runs in %.0fs (budget 300s)",
             m0, m1, m3, (m3 - m0) * 100.0, m1 > m0 ? "yes" : "NO", elapsed));

  double mu = mean3(k3u);
  bool pass6 = (m3 >= mu) && finite;
  report(6, "weighted refinement loss is no worse than unweighted", pass6,
         fmt("weighted %.4f vs unweighted %.4f (gap %+.1f pts), losses %s", m3, mu,
             (m3 - mu) * 100.0, finite ? "all finite" : "NON-FINITE"));

  double mhi = mean3(k3w_hi);
  bool pass7 = std::fabs(m3 - mhi) <= 0.03;
  report(7, "mAP is stable across the supervision threshold", pass7,
         fmt("I_t=0.5 -> %.4f, I_t=0.6 -> %.4f, |gap| %.2f pts (budget 3.0)", m3, mhi,
             std::fabs(m3 - mhi) * 100.0));
}

// ---- criterion 8: bit-exact reproducibility --------------------------------

void criterion_determinism() {
  std::vector<Bag> data = generate_dataset(SceneConfig{});
  std::string dir = testsup::temp_dir("acceptance_repro");

  auto full_run = [&](const std::string& tag) {
    TrainConfig cfg;
    cfg.optim = default_optim();
    cfg.seed = 1;
    TrainResult res = train_run(data, cfg);
    save_checkpoint(res.params, dir + "/" + tag + ".bin");
    EvalConfig ev;
    EvalReport rep = evaluate_full(data, res.params, ev);
    return std::make_pair(format_training_log(res.log, cfg.oicr.K), format_metrics_csv(rep));
  };
  auto [log_a, metrics_a] = full_run("a");
  auto [log_b, metrics_b] = full_run("b");
  std::string ckpt_a = read_file(dir + "/a.bin");
  std::string ckpt_b = read_file(dir + "/b.bin");

  bool pass = ckpt_a == ckpt_b && log_a == log_b && metrics_a == metrics_b && !ckpt_a.empty();
  report(8, "two full train+eval runs are bit-identical", pass,
         fmt("checkpoint %s (%zu bytes), training log %s, metrics %s",
             ckpt_a == ckpt_b ? "identical" : "DIFFERS", ckpt_a.size(),
             log_a == log_b ? "identical" : "DIFFERS",
             metrics_a == metrics_b ? "identical" : "DIFFERS"));
}

// ---- criterion 9: metric sanity under a perfect scorer ---------------------

void criterion_perfect_scorer() {
  SceneConfig cfg;  // the standard dataset
  std::vector<Bag> bags = generate_dataset(cfg);
  std::vector<Mat> scores;
  for (const Bag& bag : bags) {
    Mat m(cfg.num_classes, static_cast<int>(bag.proposals.size()));
    for (int c = 1; c <= cfg.num_classes; ++c)
      for (size_t r = 0; r < bag.proposals.size(); ++r) {
        double best = 0.0;
        for (const auto& g : bag.ground_truth)
          if (g.class_index == c) best = std::max(best, iou(bag.proposals[r], g.box));
        m(c - 1, static_cast<int>(r)) = best;
      }
    scores.push_back(std::move(m));
  }
  EvalConfig ev;  // voc07, NMS 0.3, match 0.5
  EvalReport map_rep = evaluate_map_scores(bags, scores, ev);
  EvalReport cl_rep = evaluate_corloc_scores(bags, scores, ev);
  bool pass = std::fabs(map_rep.map - 1.0) < 1e-9 && std::fabs(cl_rep.mean_corloc - 1.0) < 1e-9;
  report(9, "a perfect overlap scorer maxes both metrics", pass,
         fmt("mAP %.6f, CorLoc %.6f (both must be 1.0)", map_rep.map, cl_rep.mean_corloc));
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_supervision_oracle();
  criterion_nms_and_ap();
  criterion_midn_invariants();
  criteria_ablations();
  criterion_determinism();
  criterion_perfect_scorer();

  if (g_failures == 0)
    std::printf("all acceptance criteria passed\n");
  else
    std::printf("%d acceptance criterion(s) FAILED\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
