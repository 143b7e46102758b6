#pragma once

#include <string>

#include "camoseg/data.hpp"
#include "camoseg/model.hpp"
#include "camoseg/train.hpp"

namespace camoseg::config {

struct AppConfig {
    model::ModelConfig model;
    train::TrainConfig train;
    data::SynthConfig synth;
    bool class_agnostic = true;
    bool ensemble = true;
};

// Desk-scale defaults; every field overridable from the JSON config file.
AppConfig defaults();

// Strict parse: unknown keys or wrong types raise ConfigError.
AppConfig load(const std::string& path);
AppConfig parse(const std::string& json_text);

}  // namespace camoseg::config
