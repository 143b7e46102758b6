#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camoseg/tensor.hpp"
#include "camoseg/vocab.hpp"

namespace camoseg::data {

// COCO compressed RLE: column-major runs starting with the background count,
// serialized as 5-bit groups with continuation flag and +48 char offset.
struct Rle {
    int64_t h = 0, w = 0;
    std::vector<int64_t> counts;
    std::string to_string() const;
    static Rle from_string(const std::string& s, int64_t h, int64_t w);
};

Rle rle_encode(const Tensor& mask);  // mask: [H,W] binary
Tensor rle_decode(const Rle& rle);

struct Instance {
    Tensor mask;  // [H,W] binary
    int64_t category_id = 0;
    bool iscrowd = false;
};

struct AnnotatedSample {
    Tensor image;  // [3,H,W] in [0,1]
    std::vector<Instance> instances;
};

struct SampleRecord {
    int64_t image_id = 0;
    std::string file_name;  // relative to the dataset root
    int64_t height = 0, width = 0;
    std::vector<Instance> instances;  // masks at native resolution
};

struct DatasetIndex {
    std::string root;
    std::vector<SampleRecord> samples;
    vocab::Vocabulary vocabulary;
    std::vector<int64_t> category_image_freq;    // images containing category, by vocab id
    std::vector<int64_t> category_instance_count;
    int64_t rejected_annotations = 0;  // unknown-category annotations skipped with a warning
};

// Rasterize a polygon (x0,y0,x1,y1,...) with even-odd fill at pixel centers.
Tensor rasterize_polygons(const std::vector<std::vector<double>>& polys, int64_t h, int64_t w);

DatasetIndex load_coco(const std::string& json_path, const vocab::Vocabulary& vocab);

DatasetIndex filter_rare_classes(const DatasetIndex& index, int64_t min_instances = 5);

// LVIS-style repeat factors: r(c) = max(1, sqrt(t/f(c))), per-image max.
std::vector<double> repeat_factors(const DatasetIndex& index, double freq_threshold);

// Expands repeat factors into an epoch's sample index list with stochastic
// rounding of the fractional parts under the given seed.
std::vector<int64_t> epoch_sample_list(const std::vector<double>& factors, uint64_t seed);

// Large-scale jitter: uniform scale in [0.1,2], then fixed crop/pad.
AnnotatedSample augment(const AnnotatedSample& sample, uint64_t seed, int64_t out_size,
                        double scale_lo = 0.1, double scale_hi = 2.0);
// deterministic core with explicit scale and crop offset
AnnotatedSample augment_fixed(const AnnotatedSample& sample, double scale, int64_t off_y, int64_t off_x,
                              int64_t out_size);

AnnotatedSample load_sample(const DatasetIndex& index, int64_t i);

struct SynthConfig {
    int64_t num_images = 8;
    int64_t num_categories = 3;
    int64_t min_instances = 1, max_instances = 3;
    int64_t image_size = 128;
    double contrast = 0.5;  // texture phase-shift magnitude; 0 = perfectly camouflaged
};

// Writes PNG images, a COCO instances JSON, and a vocabulary JSON into
// out_dir. Deterministic per seed.
void synth_generate(const SynthConfig& cfg, uint64_t seed, const std::string& out_dir);

}  // namespace camoseg::data
