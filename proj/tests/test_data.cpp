#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "camoseg/data.hpp"
#include "camoseg/errors.hpp"
#include "camoseg/image_io.hpp"
#include "camoseg/rng.hpp"

using namespace camoseg;
namespace fs = std::filesystem;

namespace {

Tensor mask_from_bits(uint32_t bits, int64_t h, int64_t w) {
    Tensor m({h, w});
    for (int64_t i = 0; i < h * w; ++i) m[i] = (bits >> i) & 1;
    return m;
}

std::string write_temp(const std::string& name, const std::string& text) {
    const std::string path = (fs::temp_directory_path() / name).string();
    std::ofstream os(path);
    os << text;
    return path;
}

vocab::Vocabulary two_cats() {
    vocab::Vocabulary v;
    v.categories = {{0, "frog", {"frog"}}, {1, "moth", {"moth"}}};
    return v;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("rle uniform masks") {
    Tensor zeros({3, 3});
    data::Rle rz = data::rle_encode(zeros);
    REQUIRE(rz.counts == std::vector<int64_t>{9});
    Tensor ones({3, 3});
    for (int64_t i = 0; i < 9; ++i) ones[i] = 1.0;
    data::Rle ro = data::rle_encode(ones);
    REQUIRE(ro.counts == std::vector<int64_t>{0, 9});
    for (int64_t i = 0; i < 9; ++i) {
        CHECK(data::rle_decode(rz)[i] == 0.0);
        CHECK(data::rle_decode(ro)[i] == 1.0);
    }
}

TEST_CASE("rle is column-major and COCO-byte-compatible") {
    // single foreground pixel at (row 1, col 0) of a 3x2 mask: column-major
    // position 1 -> counts [1, 1, 4]
    Tensor m({3, 2});
    m.at(1, 0) = 1.0;
    data::Rle r = data::rle_encode(m);
    CHECK(r.counts == std::vector<int64_t>{1, 1, 4});
    // reference encoding of [1,1,4] per the COCO 6-bit char scheme
    CHECK(r.to_string() == "114");
    // delta coding appears from the 3rd count on; spot-check a known pair:
    // counts [0,3] (all-ones 3x1) -> chars for 0 then 3
    Tensor ones({3, 1});
    for (int64_t i = 0; i < 3; ++i) ones[i] = 1.0;
    CHECK(data::rle_encode(ones).to_string() == "03");
}

TEST_CASE("rle round-trip: random 64x64 and parse errors") {
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
        Tensor m({64, 64});
        const double p = rng.uniform();
        for (int64_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < p ? 1.0 : 0.0;
        data::Rle r = data::rle_encode(m);
        const std::string s = r.to_string();
        data::Rle back = data::Rle::from_string(s, 64, 64);
        Tensor dec = data::rle_decode(back);
        for (int64_t i = 0; i < m.size(); ++i) REQUIRE(dec[i] == m[i]);
    }
    SUBCASE("malformed counts carry a byte offset") {
        try {
            data::Rle::from_string("\x01", 4, 4);  // char below the +48 offset range
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
        // truncated continuation: high bit set on the final char
        CHECK_THROWS_AS(data::Rle::from_string("P", 4, 4), ParseError);
        // total does not cover the mask
        CHECK_THROWS_AS(data::Rle::from_string("02", 4, 4), ParseError);
    }
}

TEST_CASE("rle exhaustive 3x3 (subset of the acceptance sweep)") {
    for (uint32_t bits = 0; bits < 512; ++bits) {
        Tensor m = mask_from_bits(bits, 3, 3);
        data::Rle r = data::rle_encode(m);
        Tensor dec = data::rle_decode(data::Rle::from_string(r.to_string(), 3, 3));
        for (int64_t i = 0; i < 9; ++i) REQUIRE(dec[i] == m[i]);
    }
}

TEST_CASE("polygon rasterization") {
    SUBCASE("square covering pixels (1..3,1..3)") {
        // pixel centers at x+0.5: polygon [1,1]..[4,4] contains centers 1.5..3.5
        Tensor m = data::rasterize_polygons({{1, 1, 4, 1, 4, 4, 1, 4}}, 5, 5);
        int64_t count = 0;
        for (int64_t i = 0; i < m.size(); ++i) count += m[i] > 0.5;
        CHECK(count == 9);
        CHECK(m.at(1, 1) == 1.0);
        CHECK(m.at(3, 3) == 1.0);
        CHECK(m.at(0, 0) == 0.0);
        CHECK(m.at(4, 4) == 0.0);
    }
    SUBCASE("point-in-polygon loop oracle on a random triangle") {
        Rng rng(12);
        for (int t = 0; t < 20; ++t) {
            std::vector<double> poly;
            for (int k = 0; k < 3; ++k) {
                poly.push_back(rng.uniform(0.0, 8.0));
                poly.push_back(rng.uniform(0.0, 8.0));
            }
            Tensor m = data::rasterize_polygons({poly}, 8, 8);
            for (int64_t y = 0; y < 8; ++y)
                for (int64_t x = 0; x < 8; ++x) {
                    // even-odd crossing test at the pixel center
                    const double px = x + 0.5, py = y + 0.5;
                    bool inside = false;
                    for (size_t i = 0, j = 4; i < 6; j = i, i += 2) {
                        const double xi = poly[i], yi = poly[i + 1];
                        const double xj = poly[j], yj = poly[j + 1];
                        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi)
                            inside = !inside;
                    }
                    REQUIRE((m.at(y, x) > 0.5) == inside);
                }
        }
    }
}

TEST_CASE("load_coco minimal and error cases") {
    const std::string good = R"({
      "images": [{"id": 1, "file_name": "a.png", "height": 4, "width": 4}],
      "annotations": [{"id": 1, "image_id": 1, "category_id": 10,
        "segmentation": {"size": [4, 4], "counts": "2>"}, "iscrowd": 0}],
      "categories": [{"id": 10, "name": "frog"}, {"id": 11, "name": "moth"}]
    })";
    SUBCASE("minimal valid file") {
        auto idx = data::load_coco(write_temp("cs_min.json", good), two_cats());
        REQUIRE(idx.samples.size() == 1);
        REQUIRE(idx.samples[0].instances.size() == 1);
        CHECK(idx.samples[0].instances[0].category_id == 0);  // remapped to vocab id
        CHECK(idx.rejected_annotations == 0);
        CHECK(idx.category_image_freq[0] == 1);
        CHECK(idx.category_instance_count[0] == 1);
    }
    SUBCASE("unknown image id") {
        std::string bad = good;
        bad.replace(bad.find("\"image_id\": 1"), 13, "\"image_id\": 9");
        CHECK_THROWS_AS(data::load_coco(write_temp("cs_badimg.json", bad), two_cats()), DataError);
    }
    SUBCASE("missing key names the path") {
        try {
            data::load_coco(write_temp("cs_nokeys.json", "{\"images\": []}"), two_cats());
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("annotations") != std::string::npos);
        }
    }
    SUBCASE("unknown category counted as rejected") {
        std::string bad = good;
        bad.replace(bad.find("\"category_id\": 10"), 17, "\"category_id\": 99");
        auto idx = data::load_coco(write_temp("cs_badcat.json", bad), two_cats());
        CHECK(idx.rejected_annotations == 1);
        CHECK(idx.samples[0].instances.empty());
    }
    SUBCASE("order stability") {
        auto a = data::load_coco(write_temp("cs_min.json", good), two_cats());
        auto b = data::load_coco(write_temp("cs_min.json", good), two_cats());
        REQUIRE(a.samples.size() == b.samples.size());
        CHECK(a.samples[0].image_id == b.samples[0].image_id);
    }
}

TEST_CASE("filter_rare_classes threshold and idempotence") {
    data::DatasetIndex idx;
    idx.vocabulary = two_cats();
    idx.category_image_freq = {3, 2};
    idx.category_instance_count = {5, 4};
    data::SampleRecord rec;
    rec.image_id = 0;
    rec.height = rec.width = 4;
    for (int k = 0; k < 5; ++k) rec.instances.push_back({Tensor({4, 4}), 0, false});
    for (int k = 0; k < 4; ++k) rec.instances.push_back({Tensor({4, 4}), 1, false});
    idx.samples.push_back(rec);

    auto f = data::filter_rare_classes(idx, 5);
    CHECK(f.vocabulary.size() == 1);  // category 1 had 4 < 5 instances
    CHECK(f.vocabulary.categories[0].name == "frog");
    for (const auto& s : f.samples)
        for (const auto& inst : s.instances) CHECK(inst.category_id == 0);
    auto ff = data::filter_rare_classes(f, 5);
    CHECK(ff.vocabulary.size() == f.vocabulary.size());
    CHECK(ff.samples[0].instances.size() == f.samples[0].instances.size());
}

TEST_CASE("repeat factors") {
    data::DatasetIndex idx;
    idx.vocabulary = two_cats();
    // 4 images; category 0 in all 4 (f=1), category 1 in image 0 only (f=0.25)
    for (int i = 0; i < 4; ++i) {
        data::SampleRecord rec;
        rec.image_id = i;
        rec.height = rec.width = 4;
        Tensor m({4, 4});
        m[0] = 1.0;
        rec.instances.push_back({m, 0, false});
        if (i == 0) rec.instances.push_back({m, 1, false});
        idx.samples.push_back(rec);
    }
    idx.category_image_freq = {4, 1};
    idx.category_instance_count = {4, 1};

    SUBCASE("boundary: f == threshold gives r = 1") {
        auto r = data::repeat_factors(idx, 1.0);
        CHECK(r[1] == doctest::Approx(1.0));
        CHECK(r[2] == doctest::Approx(1.0));
    }
    SUBCASE("sqrt arithmetic: f = t/4 gives r = 2") {
        // threshold 1.0 against f(cat1) = 0.25 -> r = 2 on image 0
        auto r = data::repeat_factors(idx, 1.0);
        CHECK(r[0] == doctest::Approx(2.0));
    }
    SUBCASE("Monte Carlo expectation of stochastic rounding") {
        auto factors = data::repeat_factors(idx, 0.5);  // image 0: sqrt(0.5/0.25)=1.414
        const double expect = factors[0];
        double total = 0.0;
        const int epochs = 10000;
        for (int e = 0; e < epochs; ++e) {
            auto list = data::epoch_sample_list(factors, Rng::derive(99, 0x5eed0, static_cast<uint64_t>(e)));
            int64_t count = 0;
            for (int64_t s : list) count += s == 0;
            total += static_cast<double>(count);
        }
        CHECK(total / epochs == doctest::Approx(expect).epsilon(0.02));
    }
}

TEST_CASE("augment") {
    // 16x16 image with a centered 6x6 instance
    data::AnnotatedSample s;
    s.image = Tensor({3, 16, 16});
    Rng rng(13);
    for (int64_t i = 0; i < s.image.size(); ++i) s.image[i] = rng.uniform();
    Tensor m({16, 16});
    for (int64_t y = 5; y < 11; ++y)
        for (int64_t x = 5; x < 11; ++x) m.at(y, x) = 1.0;
    s.instances.push_back({m, 0, false});

    SUBCASE("scale 1 identity") {
        auto out = data::augment_fixed(s, 1.0, 0, 0, 16);
        for (int64_t i = 0; i < s.image.size(); ++i) REQUIRE(out.image[i] == s.image[i]);
        for (int64_t i = 0; i < m.size(); ++i) REQUIRE(out.instances[0].mask[i] == m[i]);
    }
    SUBCASE("shape contract and instance preservation") {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            auto out = data::augment(s, seed, 16);
            CHECK(out.image.shape() == std::vector<int64_t>{3, 16, 16});
            CHECK(out.instances.size() == 1);
            CHECK(out.instances[0].category_id == 0);
            CHECK(out.instances[0].mask.shape() == std::vector<int64_t>{16, 16});
        }
    }
    SUBCASE("area scaling oracle on a disk") {
        data::AnnotatedSample disk;
        disk.image = Tensor({3, 64, 64});
        Tensor dm({64, 64});
        for (int64_t y = 0; y < 64; ++y)
            for (int64_t x = 0; x < 64; ++x)
                if ((y - 32.0) * (y - 32.0) + (x - 32.0) * (x - 32.0) < 14.0 * 14.0) dm.at(y, x) = 1.0;
        disk.instances.push_back({dm, 0, false});
        double area0 = 0.0;
        for (int64_t i = 0; i < dm.size(); ++i) area0 += dm[i];
        for (double sc : {0.5, 0.75, 1.25}) {
            auto out = data::augment_fixed(disk, sc, 0, 0, 64);
            double area = 0.0;
            for (int64_t i = 0; i < out.instances[0].mask.size(); ++i) area += out.instances[0].mask[i];
            CHECK(area == doctest::Approx(sc * sc * area0).epsilon(0.10));
        }
    }
}

TEST_CASE("synth_generate determinism and bookkeeping") {
    const fs::path dir1 = fs::temp_directory_path() / "camoseg_synth_a";
    const fs::path dir2 = fs::temp_directory_path() / "camoseg_synth_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    data::SynthConfig cfg;
    cfg.num_images = 4;
    data::synth_generate(cfg, 5, dir1.string());
    data::synth_generate(cfg, 5, dir2.string());

    CHECK(read_file((dir1 / "instances.json").string()) == read_file((dir2 / "instances.json").string()));
    CHECK(read_file((dir1 / "vocab.json").string()) == read_file((dir2 / "vocab.json").string()));
    for (int i = 0; i < 4; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "images/img_%04d.png", i);
        CHECK(read_file((dir1 / name).string()) == read_file((dir2 / name).string()));
    }

    auto voc = vocab::Vocabulary::load((dir1 / "vocab.json").string());
    CHECK(voc.size() == cfg.num_categories);
    auto idx = data::load_coco((dir1 / "instances.json").string(), voc);
    REQUIRE(idx.samples.size() == 4);
    for (const auto& s : idx.samples) {
        CHECK(s.instances.size() >= static_cast<size_t>(cfg.min_instances));
        CHECK(s.instances.size() <= static_cast<size_t>(cfg.max_instances));
        for (const auto& inst : s.instances) {
            int64_t area = 0;
            for (int64_t k = 0; k < inst.mask.size(); ++k) area += inst.mask[k] > 0.5;
            CHECK(area > 0);
        }
    }
    // images load and are in [0,1]
    auto sample = data::load_sample(idx, 0);
    CHECK(sample.image.shape() == std::vector<int64_t>{3, cfg.image_size, cfg.image_size});
    for (int64_t i = 0; i < sample.image.size(); ++i) {
        REQUIRE(sample.image[i] >= 0.0);
        REQUIRE(sample.image[i] <= 1.0);
    }
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("synth contrast 0 camouflage") {
    // same seed, contrast 0 vs 0.8: masks and background texture identical,
    // foreground phase shift collapses at 0
    const fs::path d0 = fs::temp_directory_path() / "camoseg_synth_c0";
    const fs::path d8 = fs::temp_directory_path() / "camoseg_synth_c8";
    fs::remove_all(d0);
    fs::remove_all(d8);
    data::SynthConfig c0, c8;
    c0.num_images = c8.num_images = 2;
    c0.contrast = 0.0;
    c8.contrast = 0.8;
    data::synth_generate(c0, 6, d0.string());
    data::synth_generate(c8, 6, d8.string());
    auto voc = vocab::Vocabulary::load((d0 / "vocab.json").string());
    auto i0 = data::load_coco((d0 / "instances.json").string(), voc);
    auto i8 = data::load_coco((d8 / "instances.json").string(), voc);
    CHECK(read_file((d0 / "instances.json").string()) == read_file((d8 / "instances.json").string()));
    for (int64_t s = 0; s < 2; ++s) {
        auto s0 = data::load_sample(i0, s);
        auto s8 = data::load_sample(i8, s);
        Tensor fg_union({c0.image_size, c0.image_size});
        for (const auto& inst : s0.instances)
            for (int64_t k = 0; k < fg_union.size(); ++k) fg_union[k] = std::max(fg_union[k], inst.mask[k]);
        const int64_t hw = c0.image_size * c0.image_size;
        double diff_fg = 0.0;
        int64_t nfg = 0;
        for (int64_t ch = 0; ch < 3; ++ch)
            for (int64_t k = 0; k < hw; ++k) {
                const double a = s0.image[ch * hw + k], b = s8.image[ch * hw + k];
                if (fg_union[k] > 0.5) {
                    diff_fg += std::abs(a - b);
                    ++nfg;
                } else {
                    REQUIRE(a == b);  // background untouched by contrast
                }
            }
        REQUIRE(nfg > 0);
        CHECK(diff_fg / nfg > 0.01);  // high contrast visibly moves the foreground
    }
    fs::remove_all(d0);
    fs::remove_all(d8);
}
