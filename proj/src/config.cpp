#include "camoseg/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "camoseg/errors.hpp"

namespace camoseg::config {

using nlohmann::json;

AppConfig defaults() {
    AppConfig c;
    c.model.maskgen.num_queries = 20;
    c.model.maskgen.layers = 6;
    c.train.iterations = 2000;
    c.train.batch_size = 4;
    return c;
}

namespace {

[[noreturn]] void bad(const std::string& what) { throw ConfigError(what); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) bad(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys) known = known || it.key() == k;
        if (!known) bad("unknown config key " + where + "." + it.key());
    }
}

template <typename T>
void get(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        bad("bad value for " + where + "." + key);
    }
}

void parse_model(const json& j, model::ModelConfig& m) {
    check_keys(j, "model", {"seed", "text_dim", "tau_init", "backbone", "msff", "maskgen", "tva", "cin"});
    get(j, "seed", m.seed, "model");
    get(j, "text_dim", m.text_dim, "model");
    get(j, "tau_init", m.tau_init, "model");
    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        check_keys(b, "model.backbone",
                   {"kind", "weights_path", "seed", "caption_dim", "channels", "decoder_channels", "timestep"});
        get(b, "kind", m.backbone.kind, "model.backbone");
        get(b, "weights_path", m.backbone.weights_path, "model.backbone");
        get(b, "seed", m.backbone.seed, "model.backbone");
        get(b, "caption_dim", m.backbone.caption_dim, "model.backbone");
        get(b, "channels", m.backbone.channels, "model.backbone");
        get(b, "decoder_channels", m.backbone.decoder_channels, "model.backbone");
        get(b, "timestep", m.backbone.timestep, "model.backbone");
    }
    if (j.contains("msff")) {
        const json& s = j.at("msff");
        check_keys(s, "model.msff", {"gate_activation", "fusion_scale"});
        get(s, "gate_activation", m.msff.gate_activation, "model.msff");
        get(s, "fusion_scale", m.msff.fusion_scale, "model.msff");
    }
    if (j.contains("maskgen")) {
        const json& g = j.at("maskgen");
        check_keys(g, "model.maskgen", {"num_queries", "layers", "heads", "embed_dim", "query_dim", "ffn_dim"});
        get(g, "num_queries", m.maskgen.num_queries, "model.maskgen");
        get(g, "layers", m.maskgen.layers, "model.maskgen");
        get(g, "heads", m.maskgen.heads, "model.maskgen");
        get(g, "embed_dim", m.maskgen.embed_dim, "model.maskgen");
        get(g, "query_dim", m.maskgen.query_dim, "model.maskgen");
        get(g, "ffn_dim", m.maskgen.ffn_dim, "model.maskgen");
    }
    if (j.contains("tva")) {
        const json& t = j.at("tva");
        check_keys(t, "model.tva", {"channels"});
        get(t, "channels", m.tva.channels, "model.tva");
    }
    if (j.contains("cin")) {
        const json& c = j.at("cin");
        check_keys(c, "model.cin", {"hidden_factor", "confidence_threshold"});
        get(c, "hidden_factor", m.cin.hidden_factor, "model.cin");
        get(c, "confidence_threshold", m.cin.confidence_threshold, "model.cin");
    }
}

void parse_train(const json& j, train::TrainConfig& t) {
    check_keys(j, "train",
               {"learning_rate", "weight_decay", "iterations", "lr_drop_points", "batch_size", "seed",
                "crop_size", "augment", "repeat_threshold", "loss"});
    get(j, "learning_rate", t.learning_rate, "train");
    get(j, "weight_decay", t.weight_decay, "train");
    get(j, "iterations", t.iterations, "train");
    get(j, "lr_drop_points", t.lr_drop_points, "train");
    get(j, "batch_size", t.batch_size, "train");
    get(j, "seed", t.seed, "train");
    get(j, "crop_size", t.crop_size, "train");
    get(j, "augment", t.augment, "train");
    get(j, "repeat_threshold", t.repeat_threshold, "train");
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, "train.loss",
                   {"alpha", "noobj_weight", "dice_smooth", "confidence_weight", "tau_init"});
        get(l, "alpha", t.loss.alpha, "train.loss");
        get(l, "noobj_weight", t.loss.noobj_weight, "train.loss");
        get(l, "dice_smooth", t.loss.dice_smooth, "train.loss");
        get(l, "confidence_weight", t.loss.confidence_weight, "train.loss");
    }
}

void parse_synth(const json& j, data::SynthConfig& s) {
    check_keys(j, "data",
               {"num_images", "num_categories", "min_instances", "max_instances", "image_size", "contrast"});
    get(j, "num_images", s.num_images, "data");
    get(j, "num_categories", s.num_categories, "data");
    get(j, "min_instances", s.min_instances, "data");
    get(j, "max_instances", s.max_instances, "data");
    get(j, "image_size", s.image_size, "data");
    get(j, "contrast", s.contrast, "data");
}

}  // namespace

AppConfig parse(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        bad(std::string("config is not valid JSON: ") + e.what());
    }
    AppConfig c = defaults();
    check_keys(j, "config", {"model", "train", "data", "eval"});
    if (j.contains("model")) parse_model(j.at("model"), c.model);
    if (j.contains("train")) {
        parse_train(j.at("train"), c.train);
        if (j.at("train").contains("loss"))  // tau lives with the model parameters
            get(j.at("train").at("loss"), "tau_init", c.model.tau_init, "train.loss");
    }
    if (j.contains("data")) parse_synth(j.at("data"), c.synth);
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, "eval", {"class_agnostic", "ensemble"});
        get(e, "class_agnostic", c.class_agnostic, "eval");
        get(e, "ensemble", c.ensemble, "eval");
    }
    c.model.validate();
    c.train.validate();
    return c;
}

AppConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

}  // namespace camoseg::config
