#pragma once

#include <string>
#include <utility>
#include <vector>

#include "camoseg/autograd.hpp"
#include "camoseg/rng.hpp"

namespace camoseg {

// Registry of long-lived trainable leaves. Modules register parameters at
// construction; the optimizer and checkpoint code walk the registry in
// registration order, which is deterministic.
class ParamStore {
public:
    ag::Var add(const std::string& name, Tensor init);

    // Kaiming-ish scaled normal init: std = gain / sqrt(fan_in)
    ag::Var add_normal(const std::string& name, std::vector<int64_t> shape, int64_t fan_in,
                       uint64_t seed, double gain = 1.0);
    ag::Var add_zeros(const std::string& name, std::vector<int64_t> shape);

    const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }
    ag::Var find(const std::string& name) const;
    int64_t total_size() const;

private:
    std::vector<std::pair<std::string, ag::Var>> entries_;
};

}  // namespace camoseg
