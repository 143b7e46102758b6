#include "camoseg/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "camoseg/errors.hpp"
#include "camoseg/rng.hpp"

namespace camoseg::vocab {

void Vocabulary::validate() const {
    if (categories.empty()) throw ConfigError("vocabulary is empty");
    for (size_t i = 0; i < categories.size(); ++i) {
        const auto& c = categories[i];
        if (c.id != static_cast<int64_t>(i)) throw ConfigError("vocabulary ids must be contiguous from 0");
        if (c.name.empty()) throw ConfigError("vocabulary category name empty at id " + std::to_string(c.id));
        if (c.variants.empty()) throw ConfigError("category '" + c.name + "' has no variants");
    }
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open vocabulary file: " + path);
    nlohmann::json j;
    f >> j;
    Vocabulary v;
    for (const auto& e : j) {
        Category c;
        c.id = e.at("id").get<int64_t>();
        c.name = e.at("name").get<std::string>();
        if (e.contains("variants"))
            for (const auto& s : e["variants"]) c.variants.push_back(s.get<std::string>());
        if (std::find(c.variants.begin(), c.variants.end(), c.name) == c.variants.end())
            c.variants.insert(c.variants.begin(), c.name);
        v.categories.push_back(std::move(c));
    }
    std::sort(v.categories.begin(), v.categories.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    v.validate();
    return v;
}

void Vocabulary::save(const std::string& path) const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : categories) j.push_back({{"id", c.id}, {"name", c.name}, {"variants", c.variants}});
    std::ofstream f(path);
    if (!f) throw DataError("cannot write vocabulary file: " + path);
    f << j.dump(2) << "\n";
}

TextEncoder toy_hash_encoder(uint64_t seed, int64_t dim) {
    return [seed, dim](const std::string& text) {
        if (text.empty()) throw DomainError("text encoder: empty string");
        // FNV-1a over the token string, folded with the encoder seed
        uint64_t h = 1469598103934665603ULL ^ seed;
        for (unsigned char c : text) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        Rng rng(h);
        Tensor v({dim});
        double norm2 = 0.0;
        for (int64_t i = 0; i < dim; ++i) {
            v[i] = rng.normal();
            norm2 += v[i] * v[i];
        }
        const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-30));
        for (int64_t i = 0; i < dim; ++i) v[i] *= inv;
        return v;
    };
}

TextEmbeddingSet embed_categories(const Vocabulary& vocab, const TextEncoder& encoder) {
    vocab.validate();
    TextEmbeddingSet tes;
    int64_t dim = -1;
    for (const auto& c : vocab.categories) {
        std::vector<Tensor> vs;
        for (const auto& name : c.variants) {
            Tensor e = encoder(name);
            if (dim < 0) dim = e.size();
            if (e.size() != dim) throw ConfigError("text encoder returned inconsistent dimensions");
            vs.push_back(std::move(e));
        }
        tes.per_variant.push_back(std::move(vs));
    }
    tes.per_category = Tensor({vocab.size(), dim});
    for (int64_t c = 0; c < vocab.size(); ++c) {
        Tensor e = encoder(vocab.categories[c].name);
        for (int64_t i = 0; i < dim; ++i) tes.per_category.at(c, i) = e[i];
    }
    return tes;
}

ClassifyResult ensemble_classify(const Tensor& embedding, const TextEmbeddingSet& tes, double tau,
                                 bool use_variants) {
    if (tau <= 0.0) throw DomainError("ensemble_classify: tau must be > 0");
    const int64_t cats = tes.per_category.dim(0);
    const int64_t dim = tes.per_category.dim(1);
    if (embedding.size() != dim) throw ShapeError("ensemble_classify: embedding dimension mismatch");

    std::vector<double> scores(cats);
    for (int64_t c = 0; c < cats; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        if (use_variants) {
            for (const auto& v : tes.per_variant[c]) {
                double dot = 0.0;
                for (int64_t i = 0; i < dim; ++i) dot += embedding[i] * v[i];
                best = std::max(best, dot / tau);
            }
        } else {
            double dot = 0.0;
            for (int64_t i = 0; i < dim; ++i) dot += embedding[i] * tes.per_category.at(c, i);
            best = dot / tau;
        }
        scores[c] = best;
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (auto& s : scores) {
        s = std::exp(s - mx);
        z += s;
    }
    ClassifyResult r;
    r.probabilities.resize(cats);
    int64_t arg = 0;
    for (int64_t c = 0; c < cats; ++c) {
        r.probabilities[c] = scores[c] / z;
        if (r.probabilities[c] > r.probabilities[arg]) arg = c;  // strict > keeps the lowest-id tie
    }
    r.category_id = arg;
    return r;
}

}  // namespace camoseg::vocab
