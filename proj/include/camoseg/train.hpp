#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "camoseg/data.hpp"
#include "camoseg/eval.hpp"
#include "camoseg/losses.hpp"
#include "camoseg/model.hpp"

namespace camoseg::train {

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 0.05;
    int64_t iterations = 2000;
    std::vector<int64_t> lr_drop_points;  // empty = drops at 90% and 95%
    int64_t batch_size = 4;
    uint64_t seed = 0;
    losses::TotalLossConfig loss;
    int64_t crop_size = 128;
    bool augment = true;
    double repeat_threshold = 0.001;  // LVIS t in r = max(1, sqrt(t/f))
    void validate() const;
    std::vector<int64_t> drops() const;  // resolved lr_drop_points
};

// learning rate after `drops` stepping: divided by 10 at each reached point
double lr_at(const TrainConfig& cfg, int64_t iter);

struct AdamState {
    std::vector<Tensor> m, v;
    int64_t t = 0;
};

struct TrainResult {
    losses::LossBreakdown last;
    int64_t iterations = 0;
};

// Single-threaded training loop (the one parameter writer). Emits one JSON
// line per iteration to `log`: {"iter":..,"lr":..,"bce":..,"dice":..,"ce":..,"total":..}
TrainResult run_training(model::Pipeline& pipe, const data::DatasetIndex& index,
                         const TrainConfig& cfg, std::ostream& log,
                         const model::AblationSwitches& sw = {});

// loss of a single annotated sample (shared by the loop and tests)
losses::TotalLossResult sample_loss(model::Pipeline& pipe, const data::AnnotatedSample& sample,
                                    const losses::TotalLossConfig& cfg,
                                    const model::AblationSwitches& sw = {});

void save_checkpoint(const std::string& path, const model::Pipeline& pipe, const AdamState* opt,
                     int64_t iter, uint64_t seed);
struct CheckpointInfo {
    int64_t iter = 0;
    uint64_t seed = 0;
    bool has_opt = false;
};
CheckpointInfo load_checkpoint(const std::string& path, model::Pipeline& pipe, AdamState* opt);

struct InferenceResult {
    std::vector<cin::ScoredMask> instances;
    std::vector<int64_t> category_ids;          // ensemble argmax per kept instance
    std::vector<std::vector<double>> attention_raw, attention_filtered;  // flattened 1/8 maps
    int64_t h8 = 0, w8 = 0;
};

InferenceResult infer_image(model::Pipeline& pipe, const Tensor& image, double conf_threshold,
                            const model::AblationSwitches& sw = {}, bool use_variants = true);

// resizes every sample to crop_size, runs inference, evaluates class-agnostic
// (or class-aware) AP against the resized ground truth
eval::EvalResult evaluate_dataset(model::Pipeline& pipe, const data::DatasetIndex& index,
                                  int64_t crop_size, double conf_threshold, bool class_agnostic,
                                  const model::AblationSwitches& sw = {}, bool use_variants = true);

}  // namespace camoseg::train
