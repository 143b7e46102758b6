#include "camoseg/model.hpp"

#include <algorithm>
#include <cmath>

#include "camoseg/errors.hpp"

namespace camoseg::model {

void ModelConfig::validate() const {
    msff.validate();
    maskgen.validate();
    tva.validate();
    cin.validate();
    if (text_dim < 1) throw ConfigError("model.text_dim must be >= 1");
    if (maskgen.embed_dim != text_dim)
        throw ConfigError("maskgen.embed_dim must equal model.text_dim (embeddings are classified "
                          "against text embeddings)");
    if (tau_init <= 0.0) throw ConfigError("model.tau_init must be > 0");
    if (backbone.channels.size() != 3) throw ConfigError("backbone.channels must list 3 levels");
}

Pipeline::Pipeline(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    backbone_ = backbone::make_backbone(cfg_.backbone);
    const auto& ch = cfg_.backbone.channels;
    msff_ = std::make_unique<msff::Msff>(store_, cfg_.msff, ch[0], ch[1], ch[2],
                                         cfg_.backbone.decoder_channels, cfg_.seed);
    maskgen_ = std::make_unique<maskgen::MaskGen>(store_, cfg_.maskgen, msff_->c_cat(), cfg_.seed);
    tva_ = std::make_unique<tva::Tva>(store_, cfg_.tva, msff_->c_cat(), cfg_.text_dim, cfg_.seed);
    cin_ = std::make_unique<cin::Cin>(store_, cfg_.cin, cfg_.tva.channels, cfg_.seed);
    log_tau_ = store_.add("loss.log_tau", Tensor::scalar(std::log(cfg_.tau_init)));
    noobj_ = store_.add_normal("loss.noobj_embed", {1, cfg_.text_dim}, cfg_.text_dim, cfg_.seed);
}

void Pipeline::set_text(const vocab::TextEmbeddingSet& tes) {
    if (tes.per_category.rank() != 2 || tes.per_category.dim(1) != cfg_.text_dim)
        throw ConfigError("text embedding dim does not match model.text_dim");
    text_ = tes;
}

double Pipeline::tau_value() const { return std::exp(log_tau_->value[0]); }

ag::Var Pipeline::text_with_noobj(bool no_text) const {
    if (text_.per_category.size() == 0) throw ConfigError("pipeline text embeddings not set");
    Tensor cats = no_text ? Tensor::zeros_like(text_.per_category) : text_.per_category;
    return ag::concat_rows({ag::constant(std::move(cats)), noobj_});
}

PipelineOutput Pipeline::forward(const Tensor& image, const AblationSwitches& sw) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("pipeline.forward: image must be [3,H,W]");
    const int64_t h = image.dim(1), w = image.dim(2);
    if (h % 32 != 0 || w % 32 != 0) throw ShapeError("pipeline.forward: dims must be divisible by 32");

    const auto caption = backbone_->implicit_caption(image);
    const auto pyramid = backbone_->extract_features(image, caption, backbone_->default_timestep());

    PipelineOutput out;
    out.height = h;
    out.width = w;
    out.fused = sw.skip_msff ? msff_->fuse_decoder_only(pyramid) : msff_->fuse(pyramid);

    const auto pdo = maskgen_->pixel_decode(out.fused);
    const ag::Var q = maskgen_->transformer_decode(maskgen_->initial_queries(), pdo);
    out.coarse = maskgen_->predict_masks(q, pdo, h, w);
    const int64_t n = cfg_.maskgen.num_queries;

    if (sw.skip_tva) {
        out.tva_out = tva_->passthrough(out.fused, n);
    } else {
        Tensor cats = sw.no_text ? Tensor::zeros_like(text_.per_category) : text_.per_category;
        if (cats.size() == 0) throw ConfigError("pipeline text embeddings not set");
        out.tva_out = tva_->aggregate(out.coarse.embeddings, ag::constant(std::move(cats)), out.fused);
    }

    if (sw.skip_cin) {
        out.final_logits = out.coarse.mask_logits;
        // existence = 1 - p(no-object) under the classification softmax
        const ag::Var tall = text_with_noobj(sw.no_text);
        const Tensor& emb = out.coarse.embeddings->value;
        const Tensor& tm = tall->value;
        const double tau = tau_value();
        const int64_t cc = tm.dim(0);
        for (int64_t i = 0; i < n; ++i) {
            std::vector<double> logits(static_cast<size_t>(cc));
            double mx = -1e300;
            for (int64_t c = 0; c < cc; ++c) {
                double s = 0.0;
                for (int64_t d = 0; d < cfg_.text_dim; ++d) s += emb.at(i, d) * tm.at(c, d);
                logits[static_cast<size_t>(c)] = s / tau;
                mx = std::max(mx, logits[static_cast<size_t>(c)]);
            }
            double z = 0.0;
            for (double l : logits) z += std::exp(l - mx);
            out.confidences.push_back(1.0 - std::exp(logits.back() - mx) / z);
        }
    } else {
        for (int64_t i = 0; i < n; ++i) {
            const ag::Var coarse_q = ag::select_rows(out.coarse.logits_quarter, {i});
            auto r = cin_->forward(out.tva_out.per_instance_map[static_cast<size_t>(i)],
                                   out.tva_out.h8, out.tva_out.w8, coarse_q, out.coarse.h4,
                                   out.coarse.w4, h, w);
            out.final_logits.push_back(r.final_logits);
            out.confidence_logits.push_back(r.confidence_logit);
            out.confidences.push_back(r.confidence);
        }
    }
    out.coarse.confidences = out.confidences;
    return out;
}

uint64_t Pipeline::config_hash() const {
    // FNV-1a over a canonical rendering of the architecture-relevant fields
    std::string s = cfg_.backbone.kind + "|" + std::to_string(cfg_.backbone.seed);
    for (int64_t c : cfg_.backbone.channels) s += "," + std::to_string(c);
    s += "|" + std::to_string(cfg_.backbone.decoder_channels) + "|" +
         std::to_string(cfg_.backbone.caption_dim) + "|" + cfg_.msff.gate_activation + "|" +
         std::to_string(cfg_.maskgen.num_queries) + "," + std::to_string(cfg_.maskgen.layers) + "," +
         std::to_string(cfg_.maskgen.heads) + "," + std::to_string(cfg_.maskgen.embed_dim) + "," +
         std::to_string(cfg_.maskgen.query_dim) + "," + std::to_string(cfg_.maskgen.ffn_dim) + "|" +
         std::to_string(cfg_.tva.channels) + "|" + std::to_string(cfg_.cin.hidden_factor) + "|" +
         std::to_string(cfg_.text_dim) + "|" + std::to_string(cfg_.seed);
    uint64_t hsh = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        hsh ^= c;
        hsh *= 0x100000001b3ULL;
    }
    return hsh;
}

}  // namespace camoseg::model
