#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oicr/geometry.hpp"
#include "oicr/rng.hpp"

namespace oicr {

struct SceneConfig {
  double canvas_width = 128.0;
  double canvas_height = 128.0;
  int num_classes = 4;       // C >= 2
  int feature_dim = 32;      // D >= 8
  int proposals_per_image = 64;  // >= 14 * objects_max (structured proposals per object)
  int images = 200;
  int objects_min = 1;
  int objects_max = 3;
  double part_bias = 0.6;          // in [0, 1]
  double feature_noise_sigma = 0.05;
  uint64_t seed = 7;
};

struct GroundTruthObject {
  Box box;       // full object extent
  Box part_box;  // discriminative sub-rectangle, strictly inside box
  int class_index = 0;  // 1-based
};

// One weakly-labeled image: proposals with features, an image-level label
// vector, and ground truth that only evaluation may read.
struct Bag {
  int image_id = 0;
  std::vector<Box> proposals;
  std::vector<float> features;  // |R| x D, row-major
  int feature_dim = 0;
  std::vector<int> label;       // length C, 0/1
  std::vector<GroundTruthObject> ground_truth;

  double feature_at(int r, int d) const {
    return features[static_cast<size_t>(r) * feature_dim + d];
  }
};

// Class embedding: a fixed positive gain on the block of ⌊D/C⌋ indices
// assigned to the class, zeros elsewhere.
std::vector<double> class_signature(int class_index, int num_classes, int feature_dim);

// Proposal descriptor. Each object writes class energy into its block via a
// part channel (overlap with the discriminative part, first half of the
// block) and an extent channel (coverage of the full box, whole block),
// minus a penalty for spilling outside the object; block-centered Gaussian
// noise is added per dimension when sigma > 0.
std::vector<double> featurize_proposal(const Box& p, const std::vector<GroundTruthObject>& scene,
                                       const SceneConfig& cfg, Rng& noise_source);

// Deterministic function of cfg: identical configs produce bit-identical
// datasets. Throws std::invalid_argument for C < 2, D < 8, or other
// out-of-range settings.
std::vector<Bag> generate_dataset(const SceneConfig& cfg);

// Dataset directory layout: manifest.json (version "oicr-ds-1", dimensions,
// per-image boxes/labels/ground truth, CRC-32 of features.bin) plus
// features.bin ("OICRFEAT" magic, then row-major little-endian f32 rows for
// every image in manifest order). load(save(x)) reproduces x bit-exactly.
void save_dataset(const std::vector<Bag>& bags, const std::string& dir);
std::vector<Bag> load_dataset(const std::string& dir);

}  // namespace oicr
