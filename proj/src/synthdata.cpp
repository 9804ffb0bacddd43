#include "oicr/synthdata.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <stdexcept>

#include "oicr/check.hpp"
#include "oicr/errors.hpp"
#include "oicr/io_util.hpp"

#include "json.hpp"

namespace oicr {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");

constexpr char kFeatureMagic[8] = {'O', 'I', 'C', 'R', 'F', 'E', 'A', 'T'};
constexpr const char* kManifestVersion = "oicr-ds-1";

// --- feature model ---------------------------------------------------------
// Each object writes class energy into its feature block through two
// channels that share the block but are not collinear:
//   extent channel: (1 - part_bias) * cover(p, box) added across the whole
//     block, where cover(p, b) = |p∩b| / |b|;
//   part channel:   kPartChannel * part_bias * iou(p, part_box) added to the
//     first half of the block only.
// An overshoot penalty (fraction of p outside the object's box, applied only
// when p actually touches the box so far-away proposals stay exactly zero)
// is subtracted across the whole block, and everything is scaled by
// kFeatureGain so a small-variance trunk initialization still trains.
//
// The geometry matters: summed over the block, the part channel dominates
// whenever the object's effective bias exceeds 0.5, so a plain signature dot
// (and the base MIL image classifier with it) prefers the discriminative
// part. But the extent channel gives whole-object boxes a direction of their
// own, so a refining classifier that is shown enclosing boxes as positives
// can learn to rank them above the part — the escape hatch refinement needs.
//
// part_bias is the population mean: each object's effective bias varies with
// its part size (small parts are the most discriminative ones), so a
// minority of objects is extent-dominant. Those keep the whole-object
// direction alive in the refinement supervision; without them the part
// basin is absorbing and refinement can never escape it. The spread scales
// with 4·pb·(1−pb) so the exact-feature guarantees at part_bias 0 and 1
// still hold.
constexpr double kLambdaBg = 0.25;
constexpr double kPartChannel = 2.0;
constexpr double kFeatureGain = 64.0;
constexpr double kPartBiasSpread = 0.25;
// feature_noise_sigma is expressed relative to the signature scale; the
// boost sets how much per-proposal identity the noise carries. Enough of it
// makes background proposals memorizable, which is what makes confident
// training on unreliable early supervision costly.
constexpr double kNoiseBoost = 3.0;

// Object geometry: the part occupies this fraction of the object's area, so
// IoU(part, box) stays below the 0.5 evaluation threshold.
constexpr double kPartAreaLo = 0.35;
constexpr double kPartAreaHi = 0.46;

// Proposal mix per object: one tight jitter of the box and of the part
// (guarantees an evaluation-grade proposal per object), loose jitters
// spanning both sides of the 0.5 IoU boundary, and bridge boxes
// interpolated between part and box so consecutive refinement stages always
// have an overlap chain from the part to the whole object.
constexpr int kLooseBoxJitters = 3;
constexpr int kLoosePartJitters = 5;
constexpr int kBridgeJitters = 4;
constexpr int kStructuredPerObject = 2 + kLooseBoxJitters + kLoosePartJitters + kBridgeJitters;
constexpr double kTightScaleLo = 0.94, kTightScaleHi = 1.06, kTightShift = 0.04;
constexpr double kLooseScaleLo = 0.70, kLooseScaleHi = 1.30, kLooseShift = 0.20;
constexpr double kBridgeLo = 0.20, kBridgeHi = 0.95;

double cover(const Box& p, const Box& b) {
  double denom = area(b);
  if (denom <= 0.0) return 0.0;
  return intersection_area(p, b) / denom;
}

// Effective per-object part bias, derived from the part's area fraction so
// it is a pure function of the scene: the smallest parts carry the most
// extra bias, the largest the least.
double object_part_bias(const GroundTruthObject& obj, const SceneConfig& cfg) {
  double ba = area(obj.box);
  double frac = ba > 0.0 ? area(obj.part_box) / ba : kPartAreaLo;
  double u = std::clamp((frac - kPartAreaLo) / (kPartAreaHi - kPartAreaLo), 0.0, 1.0);
  double spread = 4.0 * cfg.part_bias * (1.0 - cfg.part_bias) * kPartBiasSpread;
  return std::clamp(cfg.part_bias + spread * (1.0 - 2.0 * u), 0.0, 1.0);
}

Box clip_to_canvas(Box b, const SceneConfig& cfg) {
  b.x_min = std::clamp(b.x_min, 0.0, cfg.canvas_width);
  b.x_max = std::clamp(b.x_max, 0.0, cfg.canvas_width);
  b.y_min = std::clamp(b.y_min, 0.0, cfg.canvas_height);
  b.y_max = std::clamp(b.y_max, 0.0, cfg.canvas_height);
  // keep a minimum 1-unit side so degenerate slivers never enter the pool
  if (b.x_max - b.x_min < 1.0) {
    double c = std::clamp(0.5 * (b.x_min + b.x_max), 0.5, cfg.canvas_width - 0.5);
    b.x_min = c - 0.5;
    b.x_max = c + 0.5;
  }
  if (b.y_max - b.y_min < 1.0) {
    double c = std::clamp(0.5 * (b.y_min + b.y_max), 0.5, cfg.canvas_height - 0.5);
    b.y_min = c - 0.5;
    b.y_max = c + 0.5;
  }
  return b;
}

Box jitter_box(const Box& b, double scale_lo, double scale_hi, double max_shift,
               const SceneConfig& cfg, Rng& rng) {
  double w = b.x_max - b.x_min, h = b.y_max - b.y_min;
  double s = rng.uniform(scale_lo, scale_hi);
  double cx = 0.5 * (b.x_min + b.x_max) + rng.uniform(-max_shift, max_shift) * w;
  double cy = 0.5 * (b.y_min + b.y_max) + rng.uniform(-max_shift, max_shift) * h;
  double hw = 0.5 * w * s, hh = 0.5 * h * s;
  return clip_to_canvas({cx - hw, cy - hh, cx + hw, cy + hh}, cfg);
}

Box bridge_box(const Box& part, const Box& box, bool near_part, const SceneConfig& cfg, Rng& rng) {
  // Alternate between part-side and box-side interpolants: the part side
  // keeps a one-hop overlap chain from part to whole object, the box side
  // supplies extra evaluation-grade boxes, and skipping the middle keeps the
  // supervision sets at overlap thresholds 0.5 and 0.6 nearly identical.
  double t = near_part ? rng.uniform(kBridgeLo, 0.40) : rng.uniform(0.75, kBridgeHi);
  Box b{part.x_min + t * (box.x_min - part.x_min), part.y_min + t * (box.y_min - part.y_min),
        part.x_max + t * (box.x_max - part.x_max), part.y_max + t * (box.y_max - part.y_max)};
  return jitter_box(b, 0.97, 1.03, 0.02, cfg, rng);
}

Box random_box(const SceneConfig& cfg, Rng& rng) {
  double w = rng.uniform(0.08, 0.50) * cfg.canvas_width;
  double h = rng.uniform(0.08, 0.50) * cfg.canvas_height;
  double x = rng.uniform(0.0, cfg.canvas_width - w);
  double y = rng.uniform(0.0, cfg.canvas_height - h);
  return clip_to_canvas({x, y, x + w, y + h}, cfg);
}

void validate(const SceneConfig& cfg) {
  if (cfg.num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (cfg.feature_dim < 8) throw std::invalid_argument("feature_dim must be >= 8");
  if (cfg.feature_dim / cfg.num_classes < 2)
    throw std::invalid_argument("feature_dim must give each class a block of at least 2");
  if (cfg.canvas_width <= 0 || cfg.canvas_height <= 0)
    throw std::invalid_argument("canvas must have positive size");
  if (cfg.proposals_per_image < 2) throw std::invalid_argument("proposals_per_image must be >= 2");
  if (cfg.proposals_per_image < kStructuredPerObject * cfg.objects_max)
    throw std::invalid_argument("proposals_per_image must be at least " +
                                std::to_string(kStructuredPerObject) +
                                " per object so every object keeps its structured proposals");
  if (cfg.images <= 0) throw std::invalid_argument("images must be positive");
  if (cfg.objects_min < 1 || cfg.objects_max < cfg.objects_min)
    throw std::invalid_argument("objects_per_image range invalid");
  if (cfg.objects_max > cfg.num_classes)
    throw std::invalid_argument("objects_max exceeds num_classes (classes are distinct per image)");
  if (cfg.part_bias < 0.0 || cfg.part_bias > 1.0)
    throw std::invalid_argument("part_bias must be in [0,1]");
  if (cfg.feature_noise_sigma < 0.0) throw std::invalid_argument("feature_noise_sigma must be >= 0");
}

uint32_t crc32_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  size_t pos = 0;
  while (pos < bytes.size()) {
    uInt chunk = static_cast<uInt>(std::min<size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), chunk);
    pos += chunk;
  }
  return static_cast<uint32_t>(crc);
}

json box_to_json(const Box& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be a 4-array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

std::vector<double> class_signature(int class_index, int num_classes, int feature_dim) {
  OICR_CHECK(class_index >= 1 && class_index <= num_classes, "class_index range");
  std::vector<double> sig(feature_dim, 0.0);
  int block = feature_dim / num_classes;
  int begin = (class_index - 1) * block;
  for (int d = begin; d < begin + block; ++d) sig[d] = kFeatureGain;
  return sig;
}

std::vector<double> featurize_proposal(const Box& p, const std::vector<GroundTruthObject>& scene,
                                       const SceneConfig& cfg, Rng& noise_source) {
  std::vector<double> feat(cfg.feature_dim, 0.0);
  int block = cfg.feature_dim / cfg.num_classes;
  int half = block / 2;
  for (const GroundTruthObject& obj : scene) {
    double bias = object_part_bias(obj, cfg);
    double part_term = kPartChannel * bias * iou(p, obj.part_box);
    double extent_term = (1.0 - bias) * cover(p, obj.box);
    double pa = area(p);
    double overshoot = 0.0;
    if (pa > 0.0 && intersection_area(p, obj.box) > 0.0)
      overshoot = (pa - intersection_area(p, obj.box)) / pa;
    double flat = extent_term - kLambdaBg * overshoot;
    if (flat == 0.0 && part_term == 0.0) continue;
    int begin = (obj.class_index - 1) * block;
    for (int d = begin; d < begin + block; ++d) feat[d] += kFeatureGain * flat;
    for (int d = begin; d < begin + half; ++d) feat[d] += kFeatureGain * part_term;
  }
  if (cfg.feature_noise_sigma > 0.0) {
    // Noise is centered within each class block so it gives every proposal
    // an identity (backgrounds become memorizable) without perturbing
    // signature dots, which keeps the part-dominance statistics stable.
    std::vector<double> noise(cfg.feature_dim);
    for (int d = 0; d < cfg.feature_dim; ++d)
      noise[d] = kNoiseBoost * noise_source.normal(0.0, cfg.feature_noise_sigma);
    for (int c = 0; c < cfg.num_classes; ++c) {
      double mean = 0.0;
      for (int d = c * block; d < (c + 1) * block; ++d) mean += noise[d];
      mean /= block;
      for (int d = c * block; d < (c + 1) * block; ++d) noise[d] -= mean;
    }
    for (int d = 0; d < cfg.feature_dim; ++d) feat[d] += kFeatureGain * noise[d];
  }
  return feat;
}

std::vector<Bag> generate_dataset(const SceneConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  std::vector<Bag> bags;
  bags.reserve(cfg.images);

  for (int img = 0; img < cfg.images; ++img) {
    Bag bag;
    bag.image_id = img;
    bag.feature_dim = cfg.feature_dim;
    bag.label.assign(cfg.num_classes, 0);

    int n_objects = rng.uniform_int(cfg.objects_min, cfg.objects_max);
    for (int o = 0; o < n_objects; ++o) {
      int cls;
      do {
        cls = rng.uniform_int(1, cfg.num_classes);
      } while (bag.label[cls - 1] == 1);
      bag.label[cls - 1] = 1;

      double w = rng.uniform(0.18, 0.42) * cfg.canvas_width;
      double h = rng.uniform(0.18, 0.42) * cfg.canvas_height;
      double x = rng.uniform(0.0, cfg.canvas_width - w);
      double y = rng.uniform(0.0, cfg.canvas_height - h);
      Box box{x, y, x + w, y + h};

      // part: a sub-rectangle taking kPartArea fraction of the object's area,
      // with a mild aspect perturbation, placed uniformly inside the box
      double frac = rng.uniform(kPartAreaLo, kPartAreaHi);
      double aspect = rng.uniform(0.85, 1.15);
      double pw = w * std::sqrt(frac) * aspect;
      double ph = h * std::sqrt(frac) / aspect;
      pw = std::min(pw, w);
      ph = std::min(ph, h);
      double px = x + rng.uniform(0.0, w - pw);
      double py = y + rng.uniform(0.0, h - ph);
      Box part{px, py, px + pw, py + ph};

      bag.ground_truth.push_back({box, part, cls});
    }

    for (const GroundTruthObject& obj : bag.ground_truth) {
      bag.proposals.push_back(
          jitter_box(obj.box, kTightScaleLo, kTightScaleHi, kTightShift, cfg, rng));
      for (int i = 0; i < kLooseBoxJitters; ++i)
        bag.proposals.push_back(
            jitter_box(obj.box, kLooseScaleLo, kLooseScaleHi, kLooseShift, cfg, rng));
      bag.proposals.push_back(
          jitter_box(obj.part_box, kTightScaleLo, kTightScaleHi, kTightShift, cfg, rng));
      for (int i = 0; i < kLoosePartJitters; ++i)
        bag.proposals.push_back(
            jitter_box(obj.part_box, kLooseScaleLo, kLooseScaleHi, kLooseShift, cfg, rng));
      for (int i = 0; i < kBridgeJitters; ++i)
        bag.proposals.push_back(bridge_box(obj.part_box, obj.box, i % 2 == 0, cfg, rng));
    }
    while (static_cast<int>(bag.proposals.size()) < cfg.proposals_per_image)
      bag.proposals.push_back(random_box(cfg, rng));

    bag.features.reserve(static_cast<size_t>(cfg.proposals_per_image) * cfg.feature_dim);
    for (const Box& p : bag.proposals) {
      std::vector<double> feat = featurize_proposal(p, bag.ground_truth, cfg, rng);
      for (double v : feat) bag.features.push_back(static_cast<float>(v));
    }

    bags.push_back(std::move(bag));
  }
  return bags;
}

void save_dataset(const std::vector<Bag>& bags, const std::string& dir) {
  OICR_CHECK(!bags.empty(), "empty dataset");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FileError(FileErrorKind::io, dir, 0, "cannot create directory: " + ec.message());

  const int R = static_cast<int>(bags[0].proposals.size());
  const int D = bags[0].feature_dim;
  const int C = static_cast<int>(bags[0].label.size());

  std::string payload(kFeatureMagic, sizeof(kFeatureMagic));
  for (const Bag& bag : bags) {
    OICR_CHECK(static_cast<int>(bag.proposals.size()) == R, "uniform proposal count");
    OICR_CHECK(bag.feature_dim == D, "uniform feature dim");
    size_t off = payload.size();
    payload.resize(off + bag.features.size() * sizeof(float));
    std::memcpy(payload.data() + off, bag.features.data(), bag.features.size() * sizeof(float));
  }
  write_file_atomic(dir + "/features.bin", payload);

  json manifest;
  manifest["version"] = kManifestVersion;
  manifest["num_classes"] = C;
  manifest["feature_dim"] = D;
  manifest["proposals_per_image"] = R;
  manifest["features_crc32"] = crc32_of(payload);
  json images = json::array();
  for (const Bag& bag : bags) {
    json jb;
    jb["image_id"] = bag.image_id;
    jb["label"] = bag.label;
    json props = json::array();
    for (const Box& p : bag.proposals) props.push_back(box_to_json(p));
    jb["proposals"] = std::move(props);
    json gts = json::array();
    for (const GroundTruthObject& g : bag.ground_truth) {
      json jg;
      jg["class_index"] = g.class_index;
      jg["box"] = box_to_json(g.box);
      jg["part_box"] = box_to_json(g.part_box);
      gts.push_back(std::move(jg));
    }
    jb["ground_truth"] = std::move(gts);
    images.push_back(std::move(jb));
  }
  manifest["images"] = std::move(images);
  write_file_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

std::vector<Bag> load_dataset(const std::string& dir) {
  const std::string manifest_path = dir + "/manifest.json";
  const std::string features_path = dir + "/features.bin";

  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw FileError(FileErrorKind::format, manifest_path, 0, e.what());
  }

  std::vector<Bag> bags;
  int R = 0, D = 0, C = 0;
  uint32_t declared_crc = 0;
  try {
    std::string version = manifest.at("version").get<std::string>();
    if (version != kManifestVersion)
      throw FileError(FileErrorKind::version, manifest_path, 0,
                      "expected \"" + std::string(kManifestVersion) + "\", found \"" + version + "\"");
    C = manifest.at("num_classes").get<int>();
    D = manifest.at("feature_dim").get<int>();
    R = manifest.at("proposals_per_image").get<int>();
    declared_crc = manifest.at("features_crc32").get<uint32_t>();
    if (C < 2 || D < 1 || R < 2)
      throw FileError(FileErrorKind::format, manifest_path, 0, "dimension fields out of range");

    for (const json& jb : manifest.at("images")) {
      Bag bag;
      bag.image_id = jb.at("image_id").get<int>();
      bag.feature_dim = D;
      bag.label = jb.at("label").get<std::vector<int>>();
      if (static_cast<int>(bag.label.size()) != C)
        throw FileError(FileErrorKind::format, manifest_path, 0, "label length mismatch");
      for (const json& jp : jb.at("proposals")) bag.proposals.push_back(box_from_json(jp));
      if (static_cast<int>(bag.proposals.size()) != R)
        throw FileError(FileErrorKind::format, manifest_path, 0, "proposal count mismatch");
      for (const json& jg : jb.at("ground_truth")) {
        GroundTruthObject g;
        g.class_index = jg.at("class_index").get<int>();
        g.box = box_from_json(jg.at("box"));
        g.part_box = box_from_json(jg.at("part_box"));
        bag.ground_truth.push_back(g);
      }
      bags.push_back(std::move(bag));
    }
  } catch (const FileError&) {
    throw;
  } catch (const std::exception& e) {
    throw FileError(FileErrorKind::format, manifest_path, 0, e.what());
  }

  std::string payload = read_file(features_path);
  if (payload.size() < sizeof(kFeatureMagic))
    throw FileError(FileErrorKind::truncated, features_path, payload.size(),
                    "file shorter than magic header");
  if (std::memcmp(payload.data(), kFeatureMagic, sizeof(kFeatureMagic)) != 0)
    throw FileError(FileErrorKind::format, features_path, 0, "bad magic");
  size_t expected =
      sizeof(kFeatureMagic) + bags.size() * static_cast<size_t>(R) * D * sizeof(float);
  if (payload.size() < expected)
    throw FileError(FileErrorKind::truncated, features_path, payload.size(),
                    "expected " + std::to_string(expected) + " bytes");
  if (payload.size() > expected)
    throw FileError(FileErrorKind::format, features_path, expected, "unexpected trailing bytes");
  uint32_t actual_crc = crc32_of(payload);
  if (actual_crc != declared_crc)
    throw FileError(FileErrorKind::checksum, features_path, 0,
                    "crc32 mismatch: manifest declares " + std::to_string(declared_crc) +
                        ", file has " + std::to_string(actual_crc));

  size_t off = sizeof(kFeatureMagic);
  for (Bag& bag : bags) {
    bag.features.resize(static_cast<size_t>(R) * D);
    std::memcpy(bag.features.data(), payload.data() + off, bag.features.size() * sizeof(float));
    off += bag.features.size() * sizeof(float);
  }
  return bags;
}

}  // namespace oicr
