#pragma once

#include <memory>
#include <string>
#include <vector>

#include "camoseg/backbone.hpp"
#include "camoseg/cin.hpp"
#include "camoseg/maskgen.hpp"
#include "camoseg/msff.hpp"
#include "camoseg/params.hpp"
#include "camoseg/tva.hpp"
#include "camoseg/vocab.hpp"

namespace camoseg::model {

struct ModelConfig {
    backbone::BackboneConfig backbone;
    msff::MsffConfig msff;
    maskgen::MaskGenConfig maskgen;
    tva::TvaConfig tva;
    cin::CinConfig cin;
    int64_t text_dim = 16;
    uint64_t seed = 0;
    double tau_init = 0.07;
    void validate() const;
};

struct AblationSwitches {
    bool no_text = false;    // text embeddings replaced by zeros
    bool skip_msff = false;  // mask generator sees projected decoder_final only
    bool skip_cin = false;   // coarse masks used directly; confidence = 1 - p(no-object)
    bool skip_tva = false;   // cin consumes unfiltered projected features
};

struct PipelineOutput {
    maskgen::InstancePredictions coarse;
    std::vector<ag::Var> final_logits;       // per instance, [1, H*W]
    std::vector<ag::Var> confidence_logits;  // per instance [1]; empty under skip_cin
    std::vector<double> confidences;
    msff::FusedFeatureMap fused;
    tva::TvaOutput tva_out;
    int64_t height = 0, width = 0;
};

class Pipeline {
public:
    explicit Pipeline(const ModelConfig& cfg);

    void set_text(const vocab::TextEmbeddingSet& tes);

    PipelineOutput forward(const Tensor& image, const AblationSwitches& sw = {});

    // [C+1, D]: category rows (zeros under no_text) + the learned no-object row
    ag::Var text_with_noobj(bool no_text) const;
    ag::Var tau() const { return ag::exp_(log_tau_); }
    double tau_value() const;

    ParamStore& params() { return store_; }
    const ModelConfig& config() const { return cfg_; }
    backbone::Backbone& backbone() { return *backbone_; }
    const vocab::TextEmbeddingSet& text() const { return text_; }
    const msff::Msff& msff_module() const { return *msff_; }
    uint64_t config_hash() const;

private:
    ModelConfig cfg_;
    ParamStore store_;
    std::unique_ptr<backbone::Backbone> backbone_;
    std::unique_ptr<msff::Msff> msff_;
    std::unique_ptr<maskgen::MaskGen> maskgen_;
    std::unique_ptr<tva::Tva> tva_;
    std::unique_ptr<cin::Cin> cin_;
    ag::Var log_tau_;
    ag::Var noobj_;  // [1, D]
    vocab::TextEmbeddingSet text_;
};

}  // namespace camoseg::model
