#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "camoseg/data.hpp"
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

const data::DatasetIndex& tiny_dataset() {
    static data::DatasetIndex index = [] {
        const fs::path dir = fs::temp_directory_path() / "camoseg_train_ds";
        fs::remove_all(dir);
        data::SynthConfig sc;
        sc.num_images = 3;
        sc.num_categories = 2;
        sc.max_instances = 2;
        sc.image_size = 64;
        data::synth_generate(sc, 99, dir.string());
        auto voc = vocab::Vocabulary::load((dir / "vocab.json").string());
        return data::load_coco((dir / "instances.json").string(), voc);
    }();
    return index;
}

model::Pipeline make_pipeline() {
    model::Pipeline pipe(small_config());
    pipe.set_text(vocab::embed_categories(tiny_dataset().vocabulary, vocab::toy_hash_encoder(42, 16)));
    return pipe;
}

train::TrainConfig short_run(int64_t iters) {
    train::TrainConfig cfg;
    cfg.iterations = iters;
    cfg.batch_size = 1;
    cfg.crop_size = 64;
    cfg.learning_rate = 1e-3;
    cfg.augment = false;
    cfg.seed = 7;
    return cfg;
}

std::vector<Tensor> snapshot(model::Pipeline& pipe) {
    std::vector<Tensor> out;
    for (const auto& [name, p] : pipe.params().entries()) out.push_back(p->value);
    return out;
}

}  // namespace

TEST_CASE("lr schedule: factor-10 drops at 81k and 86k") {
    train::TrainConfig cfg;
    cfg.learning_rate = 1e-4;
    cfg.iterations = 90000;
    cfg.lr_drop_points = {81000, 86000};
    CHECK(train::lr_at(cfg, 0) == 1e-4);
    CHECK(train::lr_at(cfg, 80999) == 1e-4);
    CHECK(train::lr_at(cfg, 81000) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(train::lr_at(cfg, 85999) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(train::lr_at(cfg, 86000) == doctest::Approx(1e-6).epsilon(1e-12));
    CHECK(train::lr_at(cfg, 89999) == doctest::Approx(1e-6).epsilon(1e-12));
}

TEST_CASE("default drops scale 81k/86k-of-90k proportionally") {
    train::TrainConfig cfg;
    cfg.iterations = 90000;
    CHECK(cfg.drops() == std::vector<int64_t>{81000, 86000});
    cfg.iterations = 2000;
    CHECK(cfg.drops() == std::vector<int64_t>{1800, 1911});
    cfg.iterations = 2;  // too short for a two-step schedule
    CHECK(cfg.drops().empty());
    cfg.iterations = 2000;
    cfg.lr_drop_points = {500};
    CHECK(cfg.drops() == std::vector<int64_t>{500});
}

TEST_CASE("train config validation") {
    train::TrainConfig cfg = short_run(10);
    CHECK_NOTHROW(cfg.validate());
    SUBCASE("batch size") {
        cfg.batch_size = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    SUBCASE("learning rate") {
        cfg.learning_rate = 0.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    SUBCASE("crop size multiple of 32") {
        cfg.crop_size = 48;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    SUBCASE("drops strictly increasing") {
        cfg.lr_drop_points = {5, 5};
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    SUBCASE("drops below iterations") {
        cfg.lr_drop_points = {10};
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_CASE("zero iterations leave the model at initialization") {
    model::Pipeline pipe = make_pipeline();
    auto before = snapshot(pipe);
    std::ostringstream log;
    auto res = train::run_training(pipe, tiny_dataset(), short_run(0), log);
    CHECK(res.iterations == 0);
    CHECK(log.str().empty());
    auto after = snapshot(pipe);
    for (size_t i = 0; i < before.size(); ++i)
        for (int64_t j = 0; j < before[i].size(); ++j) REQUIRE(before[i][j] == after[i][j]);
}

TEST_CASE("same seed gives bitwise-identical logs; Eq.3 holds per line") {
    std::ostringstream log1, log2;
    model::Pipeline p1 = make_pipeline();
    model::Pipeline p2 = make_pipeline();
    const train::TrainConfig cfg = short_run(3);
    auto r1 = train::run_training(p1, tiny_dataset(), cfg, log1);
    auto r2 = train::run_training(p2, tiny_dataset(), cfg, log2);
    CHECK(r1.iterations == 3);
    REQUIRE(log1.str() == log2.str());

    std::istringstream lines(log1.str());
    std::string line;
    int64_t n = 0;
    while (std::getline(lines, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.at("iter").get<int64_t>() == n);
        CHECK(j.at("lr").get<double>() == train::lr_at(cfg, n));
        const double bce = j.at("bce").get<double>();
        const double dice = j.at("dice").get<double>();
        const double ce = j.at("ce").get<double>();
        const double total = j.at("total").get<double>();
        CHECK(std::isfinite(total));
        CHECK(total == doctest::Approx(0.4 * bce + dice + ce).epsilon(1e-9));
        ++n;
    }
    CHECK(n == 3);
    SUBCASE("training moved the parameters") {
        model::Pipeline fresh = make_pipeline();
        bool moved = false;
        auto a = snapshot(p1), b = snapshot(fresh);
        for (size_t i = 0; i < a.size(); ++i)
            for (int64_t k = 0; k < a[i].size(); ++k) moved = moved || a[i][k] != b[i][k];
        CHECK(moved);
    }
}

TEST_CASE("empty dataset is rejected") {
    model::Pipeline pipe = make_pipeline();
    data::DatasetIndex empty;
    empty.vocabulary = tiny_dataset().vocabulary;
    std::ostringstream log;
    CHECK_THROWS_AS(train::run_training(pipe, empty, short_run(1), log), DataError);
}

TEST_CASE("NaN loss aborts with the iteration number") {
    model::Pipeline pipe = make_pipeline();
    // a cin parameter poisons the loss without touching the match cost matrix
    Tensor& q = pipe.params().find("cin.res_b")->value;
    q[0] = std::numeric_limits<double>::quiet_NaN();
    std::ostringstream log;
    try {
        train::run_training(pipe, tiny_dataset(), short_run(2), log);
        FAIL("expected DomainError");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
    }
}

TEST_CASE("sample_loss breakdown") {
    model::Pipeline pipe = make_pipeline();
    data::AnnotatedSample s = data::load_sample(tiny_dataset(), 0);
    // synth images are already crop-sized here, no resize needed
    REQUIRE(s.image.dim(1) == 64);
    losses::TotalLossConfig lcfg;
    auto r = train::sample_loss(pipe, s, lcfg);
    CHECK(std::isfinite(r.breakdown.total));
    CHECK(r.breakdown.total ==
          doctest::Approx(0.4 * r.breakdown.bce + r.breakdown.dice + r.breakdown.ce).epsilon(1e-9));
    CHECK(r.breakdown.total == doctest::Approx(r.total->value[0]).epsilon(1e-9));
    CHECK(r.breakdown.bce >= 0.0);
    CHECK(r.breakdown.dice >= 0.0);

    SUBCASE("no instances: only the classification term remains") {
        data::AnnotatedSample blank;
        blank.image = s.image;
        auto rb = train::sample_loss(pipe, blank, lcfg);
        CHECK(rb.breakdown.bce == 0.0);
        CHECK(rb.breakdown.dice == 0.0);
        CHECK(rb.breakdown.ce > 0.0);
        CHECK(rb.breakdown.total == doctest::Approx(rb.breakdown.ce).epsilon(1e-9));
    }
}

TEST_CASE("inference and dataset evaluation contracts") {
    model::Pipeline pipe = make_pipeline();
    data::AnnotatedSample s = data::load_sample(tiny_dataset(), 0);
    auto inf = train::infer_image(pipe, s.image, 0.0);
    CHECK(inf.instances.size() <= 4);
    CHECK(inf.category_ids.size() == inf.instances.size());
    CHECK(inf.h8 == 8);
    CHECK(inf.w8 == 8);
    REQUIRE(inf.attention_raw.size() == 4);
    REQUIRE(inf.attention_filtered.size() == 4);
    for (const auto& row : inf.attention_raw) CHECK(row.size() == 64);
    for (const auto& inst : inf.instances) {
        CHECK(inst.confidence >= 0.0);
        CHECK(inst.confidence <= 1.0);
        REQUIRE(inst.mask.shape() == std::vector<int64_t>{64, 64});
        for (int64_t i = 0; i < inst.mask.size(); ++i)
            CHECK((inst.mask[i] == 0.0 || inst.mask[i] == 1.0));
        CHECK(inf.category_ids[&inst - inf.instances.data()] >= 0);
    }
    SUBCASE("deterministic") {
        auto again = train::infer_image(pipe, s.image, 0.0);
        REQUIRE(again.instances.size() == inf.instances.size());
        for (size_t i = 0; i < inf.instances.size(); ++i)
            CHECK(again.instances[i].confidence == inf.instances[i].confidence);
    }
    SUBCASE("evaluate_dataset produces a bounded AP") {
        auto res = train::evaluate_dataset(pipe, tiny_dataset(), 64, 0.0, true);
        CHECK(res.ap >= 0.0);
        CHECK(res.ap <= 1.0);
        CHECK(res.ap50 >= res.ap75);
    }
}
