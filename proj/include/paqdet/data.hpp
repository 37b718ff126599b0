// Synthetic long-tailed detection data: six parametric glyph classes on a
// noisy background, class frequencies mirroring a heavily imbalanced
// six-category inventory (one class near 0.6%). Two warm-colored round
// classes differ only in aspect so small models can confuse them.
#pragma once

#include "paqdet/image.hpp"
#include "paqdet/matching.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace paqdet::data {

inline constexpr int kNumClasses = 6;
extern const std::array<const char*, kNumClasses> kClassNames;

struct DatasetConfig {
    int train_images = 700;
    int val_images = 200;
    int test_images = 100;
    int image_size = 64;
    // long-tailed: counts 159, 6, 415, 60, 86, 226 out of 952
    std::vector<double> class_probs = {159.0 / 952, 6.0 / 952, 415.0 / 952,
                                       60.0 / 952,  86.0 / 952, 226.0 / 952};
    int min_objects = 2;
    int max_objects = 5;
    std::uint64_t seed = 0;
    double overlap_allowance = 0.1;  // max pairwise IoU between placed boxes

    void validate() const;  // throws with the violated constraint named
};

struct SceneAnnotation {
    int image_id = 0;
    std::vector<match::Box> boxes;
    std::vector<int> labels;
};

struct Scene {
    Image image;
    SceneAnnotation annotation;
};

// One split's annotations plus the image file names, aligned by index.
// Files are relative to the directory holding the annotations JSON.
struct DatasetSplit {
    int image_size = 0;
    std::vector<SceneAnnotation> scenes;
    std::vector<std::string> files;
};

// Deterministic in (cfg.seed, image_id) only; safe to generate out of order.
Scene generate_scene(const DatasetConfig& cfg, int image_id);

// Writes root/{train,val,test}/images/*.ppm and per-split annotations.json.
// Image ids are globally unique across splits. Returns per-class instance
// counts over all splits, indexed [split][class].
std::array<std::vector<long long>, 3> generate_dataset(const DatasetConfig& cfg,
                                                       const std::string& root);

void save_annotations(const DatasetSplit& split, const std::string& path);
// Malformed JSON, unknown class ids, invalid or out-of-bounds boxes are
// rejected with the offending entry named.
DatasetSplit load_annotations(const std::string& path);

}  // namespace paqdet::data
