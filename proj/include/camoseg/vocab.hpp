#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "camoseg/tensor.hpp"

namespace camoseg::vocab {

struct Category {
    int64_t id = 0;
    std::string name;
    std::vector<std::string> variants;  // synonyms, subcategories, plurals; always includes the name
};

struct Vocabulary {
    std::vector<Category> categories;

    void validate() const;  // ids contiguous from 0, names nonempty, >=1 variant
    int64_t size() const { return static_cast<int64_t>(categories.size()); }

    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;
};

using TextEncoder = std::function<Tensor(const std::string&)>;

// Deterministic stand-in for a CLIP text encoder: hashes the string into a
// seeded pseudo-random unit vector.
TextEncoder toy_hash_encoder(uint64_t seed, int64_t dim);

struct TextEmbeddingSet {
    // per_variant[c][v] is the unit embedding of variant v of category c
    std::vector<std::vector<Tensor>> per_variant;
    Tensor per_category;  // [C, D], embedding of each primary name
    int64_t dim() const { return per_category.dim(1); }
};

TextEmbeddingSet embed_categories(const Vocabulary& vocab, const TextEncoder& encoder);

struct ClassifyResult {
    int64_t category_id = 0;
    std::vector<double> probabilities;
};

// Per-category score = max over variant logits (dot/tau); softmax over
// categories; argmax with lowest-id tie-break.
ClassifyResult ensemble_classify(const Tensor& embedding, const TextEmbeddingSet& tes, double tau,
                                 bool use_variants = true);

}  // namespace camoseg::vocab
