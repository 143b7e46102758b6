#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "camoseg/errors.hpp"
#include "camoseg/model.hpp"
#include "camoseg/rng.hpp"
#include "camoseg/train.hpp"
#include "camoseg/vocab.hpp"

using namespace camoseg;
namespace fs = std::filesystem;

namespace {

model::ModelConfig small_config() {
    model::ModelConfig cfg;
    cfg.backbone.channels = {8, 12, 16};
    cfg.backbone.decoder_channels = 8;
    cfg.maskgen.num_queries = 4;
    cfg.maskgen.layers = 2;
    cfg.maskgen.query_dim = 16;
    cfg.maskgen.embed_dim = 16;
    cfg.maskgen.ffn_dim = 16;
    cfg.tva.channels = 8;
    cfg.seed = 5;
    return cfg;
}

vocab::TextEmbeddingSet toy_text(int64_t d) {
    vocab::Vocabulary v;
    v.categories = {{0, "frog", {"frog"}}, {1, "moth", {"moth"}}};
    return vocab::embed_categories(v, vocab::toy_hash_encoder(42, d));
}

Tensor test_image(int64_t h, int64_t w, uint64_t seed) {
    Tensor img({3, h, w});
    Rng rng(seed);
    for (int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    return img;
}

bool identical(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("model config validation") {
    model::ModelConfig cfg = small_config();
    CHECK_NOTHROW(cfg.validate());
    SUBCASE("embed_dim must equal text_dim") {
        cfg.maskgen.embed_dim = 8;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    SUBCASE("tau must be positive") {
        cfg.tau_init = 0.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    SUBCASE("three backbone levels required") {
        cfg.backbone.channels = {8, 12};
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_CASE("pipeline forward contract") {
    model::Pipeline pipe(small_config());
    pipe.set_text(toy_text(16));
    Tensor img = test_image(64, 64, 7);
    auto out = pipe.forward(img);
    REQUIRE(out.coarse.mask_logits.size() == 4);
    REQUIRE(out.final_logits.size() == 4);
    REQUIRE(out.confidence_logits.size() == 4);
    REQUIRE(out.confidences.size() == 4);
    for (double c : out.confidences) {
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
    }
    CHECK(out.fused.h == 2);
    CHECK(out.fused.w == 2);
    CHECK(out.tva_out.attn_raw->value.shape() == std::vector<int64_t>{4, 64});
    for (const auto& m : out.final_logits) REQUIRE(m->value.shape() == std::vector<int64_t>{1, 64 * 64});

    SUBCASE("warm start: final equals coarse at init") {
        for (size_t i = 0; i < 4; ++i)
            REQUIRE(identical(out.final_logits[i]->value, out.coarse.mask_logits[i]->value));
    }
    SUBCASE("determinism across fresh pipelines") {
        model::Pipeline pipe2(small_config());
        pipe2.set_text(toy_text(16));
        auto out2 = pipe2.forward(img);
        for (size_t i = 0; i < 4; ++i)
            REQUIRE(identical(out.final_logits[i]->value, out2.final_logits[i]->value));
        for (size_t i = 0; i < 4; ++i) REQUIRE(out.confidences[i] == out2.confidences[i]);
    }
    SUBCASE("image dims must divide by 32") {
        CHECK_THROWS_AS(pipe.forward(test_image(65, 64, 8)), ShapeError);
        CHECK_THROWS_AS(pipe.forward(Tensor({1, 64, 64})), ShapeError);
    }
}

TEST_CASE("text handling") {
    model::Pipeline pipe(small_config());
    SUBCASE("forward without text set fails") {
        CHECK_THROWS_AS(pipe.forward(test_image(64, 64, 9)), ConfigError);
    }
    SUBCASE("dim mismatch rejected") {
        CHECK_THROWS_AS(pipe.set_text(toy_text(8)), ConfigError);
    }
    SUBCASE("text_with_noobj layout") {
        pipe.set_text(toy_text(16));
        ag::Var t = pipe.text_with_noobj(false);
        REQUIRE(t->value.shape() == std::vector<int64_t>{3, 16});
        ag::Var z = pipe.text_with_noobj(true);
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t d = 0; d < 16; ++d) REQUIRE(z->value.at(c, d) == 0.0);
        // the learned no-object row survives no_text
        bool nonzero = false;
        for (int64_t d = 0; d < 16; ++d) nonzero = nonzero || z->value.at(2, d) != 0.0;
        CHECK(nonzero);
        for (int64_t d = 0; d < 16; ++d) CHECK(z->value.at(2, d) == t->value.at(2, d));
    }
    SUBCASE("tau initialization") {
        CHECK(pipe.tau_value() == doctest::Approx(0.07).epsilon(1e-12));
    }
}

TEST_CASE("ablation switches") {
    model::Pipeline pipe(small_config());
    pipe.set_text(toy_text(16));
    Tensor img = test_image(64, 64, 11);
    auto full = pipe.forward(img);

    SUBCASE("skip_cin uses coarse masks and classification confidence") {
        model::AblationSwitches sw;
        sw.skip_cin = true;
        auto out = pipe.forward(img, sw);
        CHECK(out.confidence_logits.empty());
        REQUIRE(out.final_logits.size() == 4);
        for (size_t i = 0; i < 4; ++i)
            REQUIRE(identical(out.final_logits[i]->value, out.coarse.mask_logits[i]->value));
        for (double c : out.confidences) {
            CHECK(c >= 0.0);
            CHECK(c <= 1.0);
        }
    }
    SUBCASE("no_text changes the tva output") {
        model::AblationSwitches sw;
        sw.no_text = true;
        auto out = pipe.forward(img, sw);
        bool differs = false;
        for (int64_t i = 0; i < out.tva_out.attn_raw->value.size(); ++i)
            differs = differs || out.tva_out.attn_raw->value[i] != full.tva_out.attn_raw->value[i];
        CHECK(differs);
    }
    SUBCASE("skip_msff narrows the fused map to the decoder path") {
        model::AblationSwitches sw;
        sw.skip_msff = true;
        auto out = pipe.forward(img, sw);
        CHECK(out.fused.channels == full.fused.channels);
        bool differs = false;
        for (int64_t i = 0; i < out.fused.rows->value.size(); ++i)
            differs = differs || out.fused.rows->value[i] != full.fused.rows->value[i];
        CHECK(differs);
    }
    SUBCASE("skip_tva feeds unfiltered features to cin") {
        model::AblationSwitches sw;
        sw.skip_tva = true;
        auto out = pipe.forward(img, sw);
        REQUIRE(out.tva_out.per_instance_map.size() == 4);
        for (const auto& m : out.tva_out.per_instance_map)
            REQUIRE(identical(m->value, out.tva_out.f8->value));
    }
}

TEST_CASE("config hash separates architectures") {
    model::Pipeline a(small_config());
    model::Pipeline b(small_config());
    CHECK(a.config_hash() == b.config_hash());
    model::ModelConfig other = small_config();
    other.maskgen.num_queries = 5;
    CHECK(model::Pipeline(other).config_hash() != a.config_hash());
    model::ModelConfig reseeded = small_config();
    reseeded.seed = 6;
    CHECK(model::Pipeline(reseeded).config_hash() != a.config_hash());
}

TEST_CASE("checkpoint round trip") {
    const std::string p1 = (fs::temp_directory_path() / "camoseg_ck1.bin").string();
    const std::string p2 = (fs::temp_directory_path() / "camoseg_ck2.bin").string();
    model::Pipeline pipe(small_config());
    pipe.set_text(toy_text(16));
    // make the state nontrivial
    Rng rng(77);
    for (const auto& [name, var] : pipe.params().entries())
        for (int64_t i = 0; i < var->value.size(); ++i) var->value[i] += 0.01 * rng.normal();

    train::save_checkpoint(p1, pipe, nullptr, 123, 9);
    model::Pipeline fresh(small_config());
    fresh.set_text(toy_text(16));
    auto info = train::load_checkpoint(p1, fresh, nullptr);
    CHECK(info.iter == 123);
    CHECK(info.seed == 9);
    CHECK_FALSE(info.has_opt);
    for (size_t i = 0; i < pipe.params().entries().size(); ++i)
        REQUIRE(identical(pipe.params().entries()[i].second->value, fresh.params().entries()[i].second->value));
    train::save_checkpoint(p2, fresh, nullptr, 123, 9);
    CHECK(slurp(p1) == slurp(p2));  // byte-identical save -> load -> save

    SUBCASE("loading into a different architecture fails") {
        model::ModelConfig other = small_config();
        other.maskgen.num_queries = 5;
        model::Pipeline wrong(other);
        CHECK_THROWS_AS(train::load_checkpoint(p1, wrong, nullptr), ConfigError);
    }
    SUBCASE("optimizer state round trip") {
        train::AdamState opt;
        for (const auto& [name, var] : pipe.params().entries()) {
            Tensor m(var->value.shape()), v(var->value.shape());
            for (int64_t i = 0; i < m.size(); ++i) {
                m[i] = 0.001 * static_cast<double>(i % 7);
                v[i] = 0.002 * static_cast<double>(i % 5);
            }
            opt.m.push_back(std::move(m));
            opt.v.push_back(std::move(v));
        }
        opt.t = 42;
        train::save_checkpoint(p1, pipe, &opt, 7, 3);
        train::AdamState opt2;
        model::Pipeline fresh2(small_config());
        auto info2 = train::load_checkpoint(p1, fresh2, &opt2);
        CHECK(info2.has_opt);
        CHECK(opt2.t == 42);
        REQUIRE(opt2.m.size() == opt.m.size());
        for (size_t i = 0; i < opt.m.size(); ++i) {
            REQUIRE(identical(opt.m[i], opt2.m[i]));
            REQUIRE(identical(opt.v[i], opt2.v[i]));
        }
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(train::load_checkpoint("/nonexistent/ck.bin", pipe, nullptr), DataError);
    }
    fs::remove(p1);
    fs::remove(p2);
}
