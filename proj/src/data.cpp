#include "camoseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "camoseg/image_io.hpp"
#include "camoseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace camoseg::data {

// ---------------------------------------------------------------- RLE codec

std::string Rle::to_string() const {
    std::string s;
    for (size_t i = 0; i < counts.size(); ++i) {
        int64_t x = counts[i];
        if (i > 2) x -= counts[i - 2];
        bool more = true;
        while (more) {
            char c = static_cast<char>(x & 0x1f);
            x >>= 5;
            more = (c & 0x10) ? x != -1 : x != 0;
            if (more) c |= 0x20;
            s += static_cast<char>(c + 48);
        }
    }
    return s;
}

Rle Rle::from_string(const std::string& s, int64_t h, int64_t w) {
    Rle r;
    r.h = h;
    r.w = w;
    size_t p = 0;
    while (p < s.size()) {
        int64_t x = 0;
        int k = 0;
        bool more = true;
        while (more) {
            if (p >= s.size()) throw ParseError("RLE counts string truncated", p);
            const int c = static_cast<unsigned char>(s[p]) - 48;
            if (c < 0 || c > 63) throw ParseError("RLE counts character out of range", p);
            x |= static_cast<int64_t>(c & 0x1f) << (5 * k);
            more = (c & 0x20) != 0;
            ++p;
            ++k;
            if (!more && (c & 0x10)) x |= ~int64_t(0) << (5 * k);
        }
        if (r.counts.size() > 2) x += r.counts[r.counts.size() - 2];
        if (x < 0) throw ParseError("RLE negative run length", p);
        r.counts.push_back(x);
    }
    int64_t total = 0;
    for (int64_t c : r.counts) total += c;
    if (total != h * w) throw ParseError("RLE run lengths do not cover the mask", s.size());
    return r;
}

Rle rle_encode(const Tensor& mask) {
    if (mask.rank() != 2) throw ShapeError("rle_encode: mask must be [H,W]");
    const int64_t h = mask.dim(0), w = mask.dim(1);
    Rle r;
    r.h = h;
    r.w = w;
    // column-major scan, first run counts background
    int cur = 0;
    int64_t run = 0;
    for (int64_t x = 0; x < w; ++x)
        for (int64_t y = 0; y < h; ++y) {
            const int v = mask.at(y, x) > 0.5 ? 1 : 0;
            if (v == cur) {
                ++run;
            } else {
                r.counts.push_back(run);
                cur = v;
                run = 1;
            }
        }
    r.counts.push_back(run);
    return r;
}

Tensor rle_decode(const Rle& rle) {
    Tensor mask({rle.h, rle.w});
    int64_t pos = 0;
    int val = 0;
    for (int64_t c : rle.counts) {
        for (int64_t i = 0; i < c; ++i) {
            const int64_t x = pos / rle.h, y = pos % rle.h;
            if (pos >= rle.h * rle.w) throw ParseError("RLE overruns the mask", 0);
            mask.at(y, x) = val;
            ++pos;
        }
        val = 1 - val;
    }
    return mask;
}

// ------------------------------------------------------------ rasterization

Tensor rasterize_polygons(const std::vector<std::vector<double>>& polys, int64_t h, int64_t w) {
    Tensor mask({h, w});
    for (const auto& poly : polys) {
        if (poly.size() < 6 || poly.size() % 2 != 0) throw DataError("polygon must have >= 3 (x,y) points");
        const size_t n = poly.size() / 2;
        for (int64_t y = 0; y < h; ++y) {
            const double py = y + 0.5;
            for (int64_t x = 0; x < w; ++x) {
                const double px = x + 0.5;
                // even-odd crossing count at the pixel center
                bool inside = false;
                for (size_t i = 0, j = n - 1; i < n; j = i++) {
                    const double xi = poly[2 * i], yi = poly[2 * i + 1];
                    const double xj = poly[2 * j], yj = poly[2 * j + 1];
                    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
                }
                if (inside) mask.at(y, x) = 1.0;
            }
        }
    }
    return mask;
}

// ---------------------------------------------------------------- COCO load

namespace {

void require(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw DataError("COCO schema: missing '" + std::string(key) + "' in " + where);
}

void recount(DatasetIndex& idx) {
    const int64_t cats = idx.vocabulary.size();
    idx.category_image_freq.assign(cats, 0);
    idx.category_instance_count.assign(cats, 0);
    for (const auto& s : idx.samples) {
        std::vector<char> present(cats, 0);
        for (const auto& inst : s.instances) {
            idx.category_instance_count[inst.category_id]++;
            present[inst.category_id] = 1;
        }
        for (int64_t c = 0; c < cats; ++c)
            if (present[c]) idx.category_image_freq[c]++;
    }
}

}  // namespace

DatasetIndex load_coco(const std::string& json_path, const vocab::Vocabulary& vocab) {
    std::ifstream f(json_path);
    if (!f) throw DataError("cannot open COCO file: " + json_path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw DataError("COCO JSON parse failure in " + json_path + ": " + e.what());
    }
    require(j, "images", json_path);
    require(j, "annotations", json_path);
    require(j, "categories", json_path);

    DatasetIndex idx;
    idx.root = fs::path(json_path).parent_path().string();
    idx.vocabulary = vocab;

    // COCO category id -> vocab id via name match (primary name or variant)
    std::map<int64_t, int64_t> cat_map;
    for (const auto& c : j["categories"]) {
        require(c, "id", "categories");
        require(c, "name", "categories");
        const std::string name = c["name"].get<std::string>();
        int64_t vid = -1;
        for (const auto& vc : vocab.categories) {
            if (vc.name == name ||
                std::find(vc.variants.begin(), vc.variants.end(), name) != vc.variants.end()) {
                vid = vc.id;
                break;
            }
        }
        if (vid >= 0) cat_map[c["id"].get<int64_t>()] = vid;
    }

    std::map<int64_t, size_t> image_pos;
    for (const auto& im : j["images"]) {
        require(im, "id", "images");
        require(im, "file_name", "images");
        require(im, "height", "images");
        require(im, "width", "images");
        SampleRecord rec;
        rec.image_id = im["id"].get<int64_t>();
        rec.file_name = im["file_name"].get<std::string>();
        rec.height = im["height"].get<int64_t>();
        rec.width = im["width"].get<int64_t>();
        idx.samples.push_back(std::move(rec));
    }
    std::sort(idx.samples.begin(), idx.samples.end(),
              [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
    for (size_t i = 0; i < idx.samples.size(); ++i) image_pos[idx.samples[i].image_id] = i;

    for (const auto& an : j["annotations"]) {
        require(an, "image_id", "annotations");
        require(an, "category_id", "annotations");
        require(an, "segmentation", "annotations");
        const int64_t img_id = an["image_id"].get<int64_t>();
        auto it = image_pos.find(img_id);
        if (it == image_pos.end())
            throw DataError("COCO schema: annotation references unknown image id " + std::to_string(img_id));
        SampleRecord& rec = idx.samples[it->second];

        auto cm = cat_map.find(an["category_id"].get<int64_t>());
        if (cm == cat_map.end()) {
            idx.rejected_annotations++;
            continue;
        }
        Instance inst;
        inst.category_id = cm->second;
        inst.iscrowd = an.value("iscrowd", 0) != 0;
        const auto& seg = an["segmentation"];
        if (seg.is_object()) {
            require(seg, "counts", "segmentation");
            require(seg, "size", "segmentation");
            const int64_t h = seg["size"][0].get<int64_t>(), w = seg["size"][1].get<int64_t>();
            if (h != rec.height || w != rec.width) throw DataError("RLE size differs from image size");
            inst.mask = rle_decode(Rle::from_string(seg["counts"].get<std::string>(), h, w));
        } else if (seg.is_array()) {
            std::vector<std::vector<double>> polys;
            for (const auto& p : seg) polys.push_back(p.get<std::vector<double>>());
            inst.mask = rasterize_polygons(polys, rec.height, rec.width);
        } else {
            throw DataError("COCO schema: segmentation must be polygon list or RLE object");
        }
        rec.instances.push_back(std::move(inst));
    }

    recount(idx);
    return idx;
}

DatasetIndex filter_rare_classes(const DatasetIndex& index, int64_t min_instances) {
    std::vector<int64_t> remap(index.vocabulary.size(), -1);
    DatasetIndex out;
    out.root = index.root;
    out.rejected_annotations = index.rejected_annotations;
    int64_t next = 0;
    for (int64_t c = 0; c < index.vocabulary.size(); ++c) {
        if (index.category_instance_count[c] >= min_instances) {
            remap[c] = next;
            vocab::Category vc = index.vocabulary.categories[c];
            vc.id = next++;
            out.vocabulary.categories.push_back(std::move(vc));
        }
    }
    for (const auto& s : index.samples) {
        SampleRecord rec = s;
        rec.instances.clear();
        for (const auto& inst : s.instances) {
            if (remap[inst.category_id] < 0) continue;
            Instance ni = inst;
            ni.category_id = remap[inst.category_id];
            rec.instances.push_back(std::move(ni));
        }
        out.samples.push_back(std::move(rec));
    }
    recount(out);
    return out;
}

std::vector<double> repeat_factors(const DatasetIndex& index, double freq_threshold) {
    if (freq_threshold <= 0.0 || freq_threshold > 1.0) throw DomainError("repeat_factors: threshold must be in (0,1]");
    const double num_images = static_cast<double>(index.samples.size());
    std::vector<double> cat_factor(index.vocabulary.size(), 1.0);
    for (int64_t c = 0; c < index.vocabulary.size(); ++c) {
        const double f = index.category_image_freq[c] / std::max(num_images, 1.0);
        if (f > 0.0) cat_factor[c] = std::max(1.0, std::sqrt(freq_threshold / f));
    }
    std::vector<double> out;
    out.reserve(index.samples.size());
    for (const auto& s : index.samples) {
        double r = 1.0;
        for (const auto& inst : s.instances) r = std::max(r, cat_factor[inst.category_id]);
        out.push_back(r);
    }
    return out;
}

std::vector<int64_t> epoch_sample_list(const std::vector<double>& factors, uint64_t seed) {
    std::vector<int64_t> out;
    for (size_t i = 0; i < factors.size(); ++i) {
        int64_t n = static_cast<int64_t>(std::floor(factors[i]));
        Rng rng(Rng::derive(seed, i, 0x5eed));
        if (rng.uniform() < factors[i] - static_cast<double>(n)) ++n;
        for (int64_t k = 0; k < n; ++k) out.push_back(static_cast<int64_t>(i));
    }
    return out;
}

// -------------------------------------------------------------- augmentation

AnnotatedSample augment_fixed(const AnnotatedSample& sample, double scale, int64_t off_y, int64_t off_x,
                              int64_t out_size) {
    const int64_t h = sample.image.dim(1), w = sample.image.dim(2);
    const int64_t sh = std::max<int64_t>(1, std::llround(h * scale));
    const int64_t sw = std::max<int64_t>(1, std::llround(w * scale));

    AnnotatedSample out;
    Tensor scaled = (sh == h && sw == w) ? sample.image : io::resize_image(sample.image, sh, sw);
    out.image = Tensor({3, out_size, out_size});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < out_size; ++y)
            for (int64_t x = 0; x < out_size; ++x) {
                const int64_t sy = y + off_y, sx = x + off_x;
                out.image.at(c, y, x) = (sy >= 0 && sy < sh && sx >= 0 && sx < sw) ? scaled.at(c, sy, sx) : 0.0;
            }
    for (const auto& inst : sample.instances) {
        Instance ni;
        ni.category_id = inst.category_id;
        ni.iscrowd = inst.iscrowd;
        Tensor smask = (sh == h && sw == w) ? inst.mask : io::resize_mask_nearest(inst.mask, sh, sw);
        ni.mask = Tensor({out_size, out_size});
        for (int64_t y = 0; y < out_size; ++y)
            for (int64_t x = 0; x < out_size; ++x) {
                const int64_t sy = y + off_y, sx = x + off_x;
                ni.mask.at(y, x) = (sy >= 0 && sy < sh && sx >= 0 && sx < sw) ? smask.at(sy, sx) : 0.0;
            }
        out.instances.push_back(std::move(ni));
    }
    return out;
}

AnnotatedSample augment(const AnnotatedSample& sample, uint64_t seed, int64_t out_size, double scale_lo,
                        double scale_hi) {
    Rng rng(seed);
    const double scale = rng.uniform(scale_lo, scale_hi);
    const int64_t sh = std::max<int64_t>(1, std::llround(sample.image.dim(1) * scale));
    const int64_t sw = std::max<int64_t>(1, std::llround(sample.image.dim(2) * scale));
    const int64_t off_y = sh > out_size ? static_cast<int64_t>(rng.below(sh - out_size + 1)) : 0;
    const int64_t off_x = sw > out_size ? static_cast<int64_t>(rng.below(sw - out_size + 1)) : 0;
    return augment_fixed(sample, scale, off_y, off_x, out_size);
}

AnnotatedSample load_sample(const DatasetIndex& index, int64_t i) {
    if (i < 0 || i >= static_cast<int64_t>(index.samples.size())) throw RangeError("load_sample: index out of range");
    const auto& rec = index.samples[i];
    AnnotatedSample s;
    s.image = io::read_image((fs::path(index.root) / rec.file_name).string());
    s.instances = rec.instances;
    return s;
}

// --------------------------------------------------------- synthetic dataset

namespace {

// smooth periodic texture; `phase` shifts it, which is the camouflage knob
double texture(double x, double y, double phase, int channel, const std::vector<double>& params) {
    double v = 0.45;
    for (size_t k = 0; k + 4 < params.size(); k += 5) {
        const double fx = params[k], fy = params[k + 1], ph = params[k + 2], amp = params[k + 3],
                     chw = params[k + 4];
        v += amp * (1.0 + 0.15 * chw * channel) * std::sin(2.0 * M_PI * (fx * x + fy * y) + ph + phase);
    }
    return std::clamp(v, 0.0, 1.0);
}

// implicit shape families, one per category index mod 3
bool inside_shape(int64_t family, double dx, double dy, double r, double aspect, double rot, double wobble) {
    const double ca = std::cos(rot), sa = std::sin(rot);
    const double ux = (dx * ca + dy * sa) / r;
    const double uy = (-dx * sa + dy * ca) / (r * aspect);
    switch (family % 3) {
        case 0:  // superellipse
            return std::pow(std::abs(ux), 2.5) + std::pow(std::abs(uy), 2.5) <= 1.0;
        case 1: {  // star: radius modulated by angle
            const double ang = std::atan2(uy, ux);
            const double rad = std::sqrt(ux * ux + uy * uy);
            return rad <= 0.75 + 0.25 * std::cos(5.0 * ang + wobble);
        }
        default:  // rounded box
            return std::max(std::abs(ux), std::abs(uy)) + 0.3 * std::sqrt(ux * ux + uy * uy) <= 1.2;
    }
}

const char* kCategoryNames[] = {"mossfrog", "stickbug", "sandcrab", "leafmoth", "stonefish", "barkowl"};

}  // namespace

void synth_generate(const SynthConfig& cfg, uint64_t seed, const std::string& out_dir) {
    if (cfg.num_images < 1 || cfg.num_categories < 1) throw ConfigError("synth_generate: empty config");
    fs::create_directories(fs::path(out_dir) / "images");

    vocab::Vocabulary voc;
    for (int64_t c = 0; c < cfg.num_categories; ++c) {
        vocab::Category cat;
        cat.id = c;
        std::string base = kCategoryNames[c % 6];
        if (c >= 6) base += std::to_string(c / 6);
        cat.name = base;
        cat.variants = {base, base + "s", "camouflaged " + base, "hidden " + base};
        voc.categories.push_back(std::move(cat));
    }
    voc.save((fs::path(out_dir) / "vocab.json").string());

    const int64_t sz = cfg.image_size;
    json images = json::array(), annotations = json::array(), categories = json::array();
    for (const auto& c : voc.categories) categories.push_back({{"id", c.id}, {"name", c.name}});

    int64_t ann_id = 1;
    for (int64_t im = 0; im < cfg.num_images; ++im) {
        Rng rng(Rng::derive(seed, im, 0x1a6e));
        std::vector<double> tex;
        for (int k = 0; k < 4; ++k) {
            tex.push_back(rng.uniform(2.0, 6.0) / sz);   // fx
            tex.push_back(rng.uniform(2.0, 6.0) / sz);   // fy
            tex.push_back(rng.uniform(0.0, 2 * M_PI));   // phase
            tex.push_back(rng.uniform(0.05, 0.12));      // amplitude
            tex.push_back(rng.uniform(-1.0, 1.0));       // channel weight
        }

        const int64_t n_inst =
            cfg.min_instances + static_cast<int64_t>(rng.below(cfg.max_instances - cfg.min_instances + 1));
        std::vector<Instance> instances;
        Tensor occupied({sz, sz});
        for (int64_t k = 0; k < n_inst; ++k) {
            const int64_t cat = static_cast<int64_t>(rng.below(cfg.num_categories));
            Tensor best_mask;
            for (int attempt = 0; attempt < 40; ++attempt) {
                const double r = rng.uniform(0.14, 0.26) * sz;
                const double cx = rng.uniform(r, sz - r), cy = rng.uniform(r, sz - r);
                const double aspect = rng.uniform(0.6, 1.4), rot = rng.uniform(0.0, M_PI);
                const double wobble = rng.uniform(0.0, 2 * M_PI);
                Tensor m({sz, sz});
                bool overlaps = false;
                int64_t area = 0;
                for (int64_t y = 0; y < sz; ++y)
                    for (int64_t x = 0; x < sz; ++x)
                        if (inside_shape(cat, x + 0.5 - cx, y + 0.5 - cy, r, aspect, rot, wobble)) {
                            m.at(y, x) = 1.0;
                            ++area;
                            if (occupied.at(y, x) > 0.5) overlaps = true;
                        }
                if (!overlaps && area > 16) {
                    best_mask = std::move(m);
                    break;
                }
            }
            if (best_mask.size() == 0) continue;  // crowded image, drop this instance
            for (int64_t i = 0; i < best_mask.size(); ++i)
                if (best_mask[i] > 0.5) occupied[i] = 1.0;
            Instance inst;
            inst.mask = std::move(best_mask);
            inst.category_id = cat;
            instances.push_back(std::move(inst));
        }

        Tensor img({3, sz, sz});
        std::vector<double> shift(instances.size());
        for (size_t k = 0; k < instances.size(); ++k)
            shift[k] = cfg.contrast * rng.uniform(0.6, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0) * M_PI;
        for (int64_t y = 0; y < sz; ++y)
            for (int64_t x = 0; x < sz; ++x) {
                double phase = 0.0;
                for (size_t k = 0; k < instances.size(); ++k)
                    if (instances[k].mask.at(y, x) > 0.5) phase = shift[k];
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = texture(x, y, phase, c, tex);
            }

        char name[64];
        std::snprintf(name, sizeof(name), "images/img_%04lld.png", static_cast<long long>(im));
        io::write_image((fs::path(out_dir) / name).string(), img);

        images.push_back({{"id", im + 1}, {"file_name", name}, {"height", sz}, {"width", sz}});
        for (const auto& inst : instances) {
            const Rle rle = rle_encode(inst.mask);
            int64_t area = 0;
            int64_t x0 = sz, y0 = sz, x1 = 0, y1 = 0;
            for (int64_t y = 0; y < sz; ++y)
                for (int64_t x = 0; x < sz; ++x)
                    if (inst.mask.at(y, x) > 0.5) {
                        ++area;
                        x0 = std::min(x0, x);
                        y0 = std::min(y0, y);
                        x1 = std::max(x1, x);
                        y1 = std::max(y1, y);
                    }
            annotations.push_back({{"id", ann_id++},
                                   {"image_id", im + 1},
                                   {"category_id", inst.category_id},
                                   {"segmentation", {{"size", {sz, sz}}, {"counts", rle.to_string()}}},
                                   {"iscrowd", 0},
                                   {"area", area},
                                   {"bbox", {x0, y0, x1 - x0 + 1, y1 - y0 + 1}}});
        }
    }

    json root = {{"images", images}, {"annotations", annotations}, {"categories", categories}};
    std::ofstream f(fs::path(out_dir) / "instances.json");
    f << root.dump(2) << "\n";
}

}  // namespace camoseg::data
