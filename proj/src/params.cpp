#include "camoseg/params.hpp"

#include <cmath>
#include <functional>

#include "camoseg/errors.hpp"

namespace camoseg {

ag::Var ParamStore::add(const std::string& name, Tensor init) {
    for (const auto& [n, v] : entries_)
        if (n == name) throw ConfigError("duplicate parameter name: " + name);
    ag::Var v = ag::leaf(std::move(init));
    entries_.emplace_back(name, v);
    return v;
}

ag::Var ParamStore::add_normal(const std::string& name, std::vector<int64_t> shape, int64_t fan_in,
                               uint64_t seed, double gain) {
    Tensor t(shape);
    Rng rng(Rng::derive(seed, 0x9a7a, std::hash<std::string>{}(name)));
    const double std = gain / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
    return add(name, std::move(t));
}

ag::Var ParamStore::add_zeros(const std::string& name, std::vector<int64_t> shape) {
    return add(name, Tensor(std::move(shape)));
}

ag::Var ParamStore::find(const std::string& name) const {
    for (const auto& [n, v] : entries_)
        if (n == name) return v;
    throw ConfigError("unknown parameter: " + name);
}

int64_t ParamStore::total_size() const {
    int64_t s = 0;
    for (const auto& [n, v] : entries_) s += v->value.size();
    return s;
}

}  // namespace camoseg
