#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "camoseg/config.hpp"
#include "camoseg/data.hpp"
#include "camoseg/errors.hpp"
#include "camoseg/image_io.hpp"
#include "camoseg/kernels.hpp"
#include "camoseg/kmeans.hpp"
#include "camoseg/layout.hpp"
#include "camoseg/model.hpp"
#include "camoseg/train.hpp"
#include "camoseg/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace camoseg;

namespace {

constexpr uint64_t kTextEncoderSeed = 0xC11F;  // frozen text-encoder surrogate

struct CommonOpts {
    std::string config_path;
    int64_t seed = -1;  // -1 = keep config seed
    std::string vocab_path;
    std::string out_dir;
};

config::AppConfig load_cfg(const CommonOpts& o) {
    config::AppConfig c = o.config_path.empty() ? config::defaults() : config::load(o.config_path);
    if (o.seed >= 0) {
        c.train.seed = static_cast<uint64_t>(o.seed);
        c.model.seed = static_cast<uint64_t>(o.seed);
        c.model.backbone.seed = static_cast<uint64_t>(o.seed);
    }
    return c;
}

vocab::Vocabulary load_vocab(const std::string& explicit_path, const std::string& data_dir) {
    std::string path = explicit_path;
    if (path.empty() && !data_dir.empty()) path = (fs::path(data_dir) / "vocab.json").string();
    if (path.empty() || !fs::exists(path))
        throw ConfigError("vocabulary file not found (pass --vocab or use a dataset dir with vocab.json)");
    return vocab::Vocabulary::load(path);
}

// checked before the vocabulary so a missing dataset reports as a data error
void require_dataset(const std::string& dir) {
    const fs::path ann = fs::path(dir) / "instances.json";
    if (!fs::exists(ann)) throw DataError("dataset annotations not found: " + ann.string());
}

data::DatasetIndex load_dataset(const std::string& dir, const vocab::Vocabulary& voc) {
    require_dataset(dir);
    return data::load_coco((fs::path(dir) / "instances.json").string(), voc);
}

model::AblationSwitches parse_switches(const std::string& csv) {
    model::AblationSwitches sw;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        if (tok == "no_text") sw.no_text = true;
        else if (tok == "skip_msff") sw.skip_msff = true;
        else if (tok == "skip_cin") sw.skip_cin = true;
        else if (tok == "skip_tva") sw.skip_tva = true;
        else throw ConfigError("unknown ablation switch: " + tok);
    }
    return sw;
}

model::Pipeline make_pipeline(const config::AppConfig& cfg, const vocab::Vocabulary& voc) {
    model::Pipeline pipe(cfg.model);
    auto enc = vocab::toy_hash_encoder(kTextEncoderSeed, cfg.model.text_dim);
    pipe.set_text(vocab::embed_categories(voc, enc));
    return pipe;
}

json eval_json(const eval::EvalResult& r) {
    json j;
    j["ap"] = r.ap;
    j["ap50"] = r.ap50;
    j["ap75"] = r.ap75;
    json pt = json::object();
    for (auto& [t, a] : r.per_threshold) {
        char key[8];
        std::snprintf(key, sizeof(key), "%.2f", t);
        pt[key] = a;
    }
    j["per_threshold"] = pt;
    json pc = json::object();
    for (auto& [c, a] : r.per_category) pc[std::to_string(c)] = a;
    j["per_category"] = pc;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path);
    os << text;
}

void write_overlay(const std::string& path, const Tensor& image,
                   const std::vector<cin::ScoredMask>& instances) {
    static const double palette[6][3] = {{1, 0.2, 0.2}, {0.2, 1, 0.2}, {0.2, 0.4, 1},
                                         {1, 1, 0.2},   {1, 0.2, 1},  {0.2, 1, 1}};
    Tensor out = image;
    const int64_t h = image.dim(1), w = image.dim(2);
    for (size_t i = 0; i < instances.size(); ++i) {
        const auto& col = palette[i % 6];
        for (int64_t p = 0; p < h * w; ++p)
            if (instances[i].mask[p] > 0.5)
                for (int64_t c = 0; c < 3; ++c)
                    out[c * h * w + p] = 0.5 * out[c * h * w + p] + 0.5 * col[c];
    }
    io::write_image(path, out);
}

int cmd_generate(const CommonOpts& o) {
    auto cfg = load_cfg(o);
    if (o.out_dir.empty()) throw ConfigError("generate-data requires --out");
    data::synth_generate(cfg.synth, cfg.train.seed, o.out_dir);
    std::cout << "wrote " << cfg.synth.num_images << " images to " << o.out_dir << "\n";
    return 0;
}

int cmd_train(const CommonOpts& o, const std::string& data_dir) {
    auto cfg = load_cfg(o);
    if (o.out_dir.empty()) throw ConfigError("train requires --out");
    require_dataset(data_dir);
    auto voc = load_vocab(o.vocab_path, data_dir);
    auto index = load_dataset(data_dir, voc);
    auto pipe = make_pipeline(cfg, voc);
    fs::create_directories(o.out_dir);
    std::ofstream log((fs::path(o.out_dir) / "train_log.jsonl").string(), std::ios::binary);
    if (!log) throw DataError("cannot open training log in " + o.out_dir);
    auto res = train::run_training(pipe, index, cfg.train, log);
    train::save_checkpoint((fs::path(o.out_dir) / "checkpoint.bin").string(), pipe, nullptr,
                           res.iterations, cfg.train.seed);
    std::cout << "trained " << res.iterations << " iterations, final total loss "
              << res.last.total << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& data_dir, const std::string& ckpt,
             const std::string& switches, bool no_ensemble) {
    auto cfg = load_cfg(o);
    if (no_ensemble) cfg.ensemble = false;
    require_dataset(data_dir);
    auto voc = load_vocab(o.vocab_path, data_dir);
    auto index = load_dataset(data_dir, voc);
    auto pipe = make_pipeline(cfg, voc);
    train::load_checkpoint(ckpt, pipe, nullptr);
    const auto sw = parse_switches(switches);
    auto r = train::evaluate_dataset(pipe, index, cfg.train.crop_size,
                                     cfg.model.cin.confidence_threshold, cfg.class_agnostic, sw,
                                     cfg.ensemble);
    const std::string text = eval_json(r).dump(2) + "\n";
    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        write_text((fs::path(o.out_dir) / "metrics.json").string(), text);
    }
    std::cout << text;
    std::printf("AP %.3f | AP50 %.3f | AP75 %.3f\n", r.ap, r.ap50, r.ap75);
    return 0;
}

int cmd_infer(const CommonOpts& o, const std::string& image_path, const std::string& ckpt,
              bool no_ensemble) {
    auto cfg = load_cfg(o);
    if (no_ensemble) cfg.ensemble = false;
    if (o.out_dir.empty()) throw ConfigError("infer requires --out");
    auto voc = load_vocab(o.vocab_path, "");
    auto pipe = make_pipeline(cfg, voc);
    train::load_checkpoint(ckpt, pipe, nullptr);
    Tensor image = io::resize_image(io::read_image(image_path), cfg.train.crop_size, cfg.train.crop_size);
    auto inf = train::infer_image(pipe, image, cfg.model.cin.confidence_threshold, {}, cfg.ensemble);

    json out;
    out["image"] = fs::path(image_path).filename().string();
    out["height"] = cfg.train.crop_size;
    out["width"] = cfg.train.crop_size;
    json insts = json::array();
    for (size_t i = 0; i < inf.instances.size(); ++i) {
        json ji;
        ji["rle"] = data::rle_encode(inf.instances[i].mask).to_string();
        ji["confidence"] = inf.instances[i].confidence;
        const int64_t cid = inf.category_ids[i];
        ji["category_id"] = cid;
        ji["category_name"] = voc.categories[static_cast<size_t>(cid)].name;
        insts.push_back(ji);
    }
    out["instances"] = insts;
    fs::create_directories(o.out_dir);
    const std::string stem = fs::path(image_path).stem().string();
    write_text((fs::path(o.out_dir) / (stem + ".json")).string(), out.dump(2) + "\n");
    write_overlay((fs::path(o.out_dir) / (stem + "_overlay.png")).string(), image, inf.instances);
    std::cout << "kept " << inf.instances.size() << " instances\n";
    return 0;
}

int cmd_visualize(const CommonOpts& o, const std::string& image_path, const std::string& ckpt,
                  int64_t k) {
    auto cfg = load_cfg(o);
    if (o.out_dir.empty()) throw ConfigError("visualize requires --out");
    auto voc = load_vocab(o.vocab_path, "");
    auto pipe = make_pipeline(cfg, voc);
    train::load_checkpoint(ckpt, pipe, nullptr);
    Tensor image = io::resize_image(io::read_image(image_path), cfg.train.crop_size, cfg.train.crop_size);

    auto out = pipe.forward(image);
    const Tensor& rows = out.fused.rows->value;  // [HW32, C_cat]
    auto km = kmeans(rows, k, cfg.train.seed);
    static const double palette[8][3] = {{0.9, 0.1, 0.1}, {0.1, 0.9, 0.1}, {0.1, 0.3, 0.9},
                                         {0.9, 0.9, 0.1}, {0.9, 0.1, 0.9}, {0.1, 0.9, 0.9},
                                         {0.6, 0.6, 0.6}, {0.9, 0.5, 0.1}};
    const int64_t h32 = out.fused.h, w32 = out.fused.w, scale = 8;
    Tensor cmap({3, h32 * scale, w32 * scale});
    for (int64_t y = 0; y < h32 * scale; ++y)
        for (int64_t x = 0; x < w32 * scale; ++x) {
            const int64_t lab = km.labels[static_cast<size_t>((y / scale) * w32 + x / scale)];
            for (int64_t c = 0; c < 3; ++c)
                cmap[(c * h32 * scale + y) * w32 * scale + x] = palette[lab % 8][c];
        }
    fs::create_directories(o.out_dir);
    const std::string stem = fs::path(image_path).stem().string();
    io::write_image((fs::path(o.out_dir) / (stem + "_clusters.png")).string(), cmap);

    auto inf = train::infer_image(pipe, image, 0.0, {}, cfg.ensemble);
    const size_t n_show = std::min<size_t>(4, inf.attention_raw.size());
    for (size_t i = 0; i < n_show; ++i) {
        Tensor raw({inf.h8, inf.w8}, inf.attention_raw[i]);
        Tensor filt({inf.h8, inf.w8}, inf.attention_filtered[i]);
        io::write_gray((fs::path(o.out_dir) / (stem + "_attn_raw_" + std::to_string(i) + ".png")).string(), raw);
        io::write_gray((fs::path(o.out_dir) / (stem + "_attn_filtered_" + std::to_string(i) + ".png")).string(), filt);
    }
    std::cout << "wrote cluster map (k=" << k << ", " << km.iterations << " iterations) and "
              << n_show << " attention pairs\n";
    return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& data_dir, const std::string& holdout_dir,
               const std::string& switches_csv) {
    auto cfg = load_cfg(o);
    if (o.out_dir.empty()) throw ConfigError("ablate requires --out");
    require_dataset(data_dir);
    if (!holdout_dir.empty()) require_dataset(holdout_dir);
    auto voc = load_vocab(o.vocab_path, data_dir);
    auto index = load_dataset(data_dir, voc);
    auto hold = load_dataset(holdout_dir.empty() ? data_dir : holdout_dir, voc);

    struct Row {
        std::string name;
        model::AblationSwitches sw;
        eval::EvalResult result;
    };
    std::vector<Row> rows;
    rows.push_back({"full", {}, {}});
    std::stringstream ss(switches_csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) rows.push_back({tok, parse_switches(tok), {}});

    fs::create_directories(o.out_dir);
    for (auto& row : rows) {
        auto pipe = make_pipeline(cfg, voc);
        std::ofstream log((fs::path(o.out_dir) / ("train_" + row.name + ".jsonl")).string(),
                          std::ios::binary);
        train::run_training(pipe, index, cfg.train, log, row.sw);
        row.result = train::evaluate_dataset(pipe, hold, cfg.train.crop_size,
                                             cfg.model.cin.confidence_threshold, cfg.class_agnostic,
                                             row.sw, cfg.ensemble);
    }

    json report = json::array();
    std::ostringstream md;
    md << "| setting | AP | AP50 | AP75 | dAP |\n|---|---|---|---|---|\n";
    const double base = rows[0].result.ap;
    for (const auto& row : rows) {
        json jr = eval_json(row.result);
        jr["setting"] = row.name;
        jr["delta_ap"] = row.result.ap - base;
        report.push_back(jr);
        char line[160];
        std::snprintf(line, sizeof(line), "| %s | %.3f | %.3f | %.3f | %+.3f |\n", row.name.c_str(),
                      row.result.ap, row.result.ap50, row.result.ap75, row.result.ap - base);
        md << line;
    }
    write_text((fs::path(o.out_dir) / "report.json").string(), report.dump(2) + "\n");
    write_text((fs::path(o.out_dir) / "report.md").string(), md.str());
    std::cout << md.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* env = std::getenv("CAMOSEG_NUM_WORKERS")) kernels::set_num_workers(std::atoi(env));

    CLI::App app{"open-vocabulary camouflaged instance segmentation"};
    app.require_subcommand(1);
    CommonOpts o;
    std::string data_dir, holdout_dir, ckpt, image_path, switches;
    int64_t k = 4;
    bool no_ensemble = false;

    auto add_common = [&](CLI::App* c) {
        c->add_option("--config", o.config_path, "JSON config file");
        c->add_option("--seed", o.seed, "override all seeds");
        c->add_option("--vocab", o.vocab_path, "vocabulary JSON");
        c->add_option("--out", o.out_dir, "output directory");
    };

    auto* gen = app.add_subcommand("generate-data", "write a synthetic camouflage dataset");
    add_common(gen);
    auto* tr = app.add_subcommand("train", "train on a dataset directory");
    add_common(tr);
    tr->add_option("--data", data_dir, "dataset directory")->required();
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev);
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    ev->add_option("--ablation", switches, "comma-separated switches applied at eval time");
    ev->add_flag("--no-prompt-ensemble", no_ensemble, "classify with primary names only");
    auto* in = app.add_subcommand("infer", "segment a single image");
    add_common(in);
    in->add_option("--image", image_path, "input image")->required();
    in->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    in->add_flag("--no-prompt-ensemble", no_ensemble, "classify with primary names only");
    auto* vis = app.add_subcommand("visualize", "feature clusters and attention maps");
    add_common(vis);
    vis->add_option("--image", image_path, "input image")->required();
    vis->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    vis->add_option("--k", k, "cluster count");
    auto* ab = app.add_subcommand("ablate", "train and evaluate ablation variants");
    add_common(ab);
    ab->add_option("--data", data_dir, "training dataset directory")->required();
    ab->add_option("--holdout", holdout_dir, "held-out dataset directory");
    ab->add_option("--switches", switches, "comma-separated variants (default: all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_generate(o);
        if (tr->parsed()) return cmd_train(o, data_dir);
        if (ev->parsed()) return cmd_eval(o, data_dir, ckpt, switches, no_ensemble);
        if (in->parsed()) return cmd_infer(o, image_path, ckpt, no_ensemble);
        if (vis->parsed()) return cmd_visualize(o, image_path, ckpt, k);
        if (ab->parsed()) {
            if (switches.empty()) switches = "no_text,skip_msff,skip_cin,skip_tva";
            return cmd_ablate(o, data_dir, holdout_dir, switches);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
