#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "camoseg/autograd.hpp"
#include "camoseg/rng.hpp"

using namespace camoseg;
using ag::Var;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
    return t;
}

// central finite differences on every element of every leaf
void gradcheck(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Tensor> leaves,
               double tol = 1e-5) {
    std::vector<Var> vars;
    for (auto& t : leaves) vars.push_back(ag::leaf(t));
    Var out = f(vars);
    ag::backward(out);
    const double h = 1e-6;
    for (size_t li = 0; li < leaves.size(); ++li) {
        for (int64_t i = 0; i < leaves[li].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<Var> vs;
                for (size_t k = 0; k < leaves.size(); ++k) {
                    Tensor t = leaves[k];
                    if (k == li) t[i] += delta;
                    vs.push_back(ag::leaf(t));
                }
                return f(vs)->value[0];
            };
            const double fd = (eval(h) - eval(-h)) / (2 * h);
            const double an = vars[li]->grad[i];
            const double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            INFO("leaf ", li, " elem ", i, " fd=", fd, " an=", an);
            CHECK(err < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise and broadcast ops gradcheck") {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    Tensor rv = random_tensor({1, 4}, rng), cv = random_tensor({3, 1}, rng);
    gradcheck([](const std::vector<Var>& v) { return ag::mean_all(ag::mul(ag::add(v[0], v[1]), ag::sub(v[0], v[1]))); },
              {a, b});
    gradcheck([](const std::vector<Var>& v) { return ag::sum_all(ag::mul_rowvec(v[0], v[1])); }, {a, rv});
    gradcheck([](const std::vector<Var>& v) { return ag::sum_all(ag::add_rowvec(ag::mul_colvec(v[0], v[1]), v[2])); },
              {a, cv, rv});
    gradcheck([](const std::vector<Var>& v) { return ag::mean_all(ag::affine(v[0], 2.5, -1.0)); }, {a});
}

TEST_CASE("matmul family gradcheck") {
    Rng rng(12);
    Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng), c = random_tensor({4, 5}, rng);
    gradcheck([](const std::vector<Var>& v) { return ag::mean_all(ag::matmul(v[0], v[1])); }, {a, b});
    gradcheck([](const std::vector<Var>& v) { return ag::mean_all(ag::matmul_nt(v[0], v[1])); }, {a, c});
}

TEST_CASE("nonlinearities and normalizations gradcheck") {
    Rng rng(13);
    Tensor x = random_tensor({4, 6}, rng);
    Tensor g = random_tensor({1, 6}, rng), b = random_tensor({1, 6}, rng);
    Tensor s = random_tensor({1}, rng);
    gradcheck([](const std::vector<Var>& v) { return ag::mean_all(ag::sigmoid(v[0])); }, {x});
    gradcheck([](const std::vector<Var>& v) { return ag::mean_all(ag::exp_(ag::affine(v[0], 0.3, 0.0))); }, {x});
    // fixed weight rows so the softmax grad is nontrivial (and the closure pure)
    Tensor w = random_tensor({4, 6}, rng);
    gradcheck([&](const std::vector<Var>& v) {
        return ag::sum_all(ag::mul(ag::softmax_rows(v[0]), ag::constant(w)));
    }, {x}, 2e-4);
    gradcheck([](const std::vector<Var>& v) { return ag::mean_all(ag::mul(ag::layernorm_rows(v[0], v[1], v[2]), v[0])); },
              {x, g, b}, 2e-4);
    gradcheck([](const std::vector<Var>& v) { return ag::mean_all(ag::mul(ag::colnorm(v[0]), v[0])); }, {x}, 2e-4);
    gradcheck([](const std::vector<Var>& v) { return ag::sum_all(ag::mul(ag::center_rows(v[0]), v[0])); }, {x});
    gradcheck([](const std::vector<Var>& v) { return ag::mean_all(ag::mul_scalar(v[0], v[1])); }, {x, s});
}

TEST_CASE("relu gradcheck away from kink") {
    Tensor x({2, 2}, {1.0, -2.0, 0.5, -0.25});
    gradcheck([](const std::vector<Var>& v) { return ag::sum_all(ag::relu(v[0])); }, {x});
}

TEST_CASE("structural ops gradcheck") {
    Rng rng(14);
    Tensor x = random_tensor({5, 4}, rng);
    gradcheck([](const std::vector<Var>& v) {
        return ag::sum_all(ag::mul(ag::select_rows(v[0], {3, 1, 1}), ag::select_rows(v[0], {0, 2, 4})));
    }, {x});
    gradcheck([](const std::vector<Var>& v) {
        auto a = ag::slice_cols(v[0], 0, 2);
        auto b = ag::slice_cols(v[0], 2, 2);
        return ag::mean_all(ag::concat_cols({ag::mul(a, b), a}));
    }, {x});
    gradcheck([](const std::vector<Var>& v) {
        auto r = ag::reshape(v[0], {4, 5});
        return ag::mean_all(ag::matmul(r, v[0]));
    }, {x});
    gradcheck([](const std::vector<Var>& v) {
        return ag::sum_all(ag::mul(ag::concat_rows({v[0], v[0]}), ag::concat_rows({v[0], ag::affine(v[0], 2, 0)})));
    }, {x});
}

TEST_CASE("spatial ops gradcheck") {
    Rng rng(15);
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.5), b = random_tensor({3}, rng);
    gradcheck([](const std::vector<Var>& v) {
        return ag::mean_all(ag::mul(ag::conv3x3(v[0], v[1], v[2]), ag::conv3x3(v[0], v[1], v[2])));
    }, {x, w, b}, 2e-4);
    gradcheck([](const std::vector<Var>& v) { return ag::sum_all(ag::mul(ag::bilinear_to(v[0], 7, 9), ag::bilinear_to(v[0], 7, 9))); },
              {x}, 2e-4);
    gradcheck([](const std::vector<Var>& v) { return ag::sum_all(ag::mul(ag::area_down(v[0], 2), ag::area_down(v[0], 2))); },
              {x});
}

TEST_CASE("loss ops gradcheck") {
    Rng rng(16);
    Tensor logits = random_tensor({3, 5}, rng);
    Tensor target({3, 5});
    for (int64_t i = 0; i < target.size(); ++i) target[i] = (rng.uniform() < 0.5) ? 0.0 : 1.0;
    gradcheck([&](const std::vector<Var>& v) { return ag::bce_with_logits(v[0], target); }, {logits}, 2e-4);
    gradcheck([&](const std::vector<Var>& v) { return ag::softmax_ce_mean(v[0], {2, 0, 4}); }, {logits}, 2e-4);
}

TEST_CASE("scalar division gradcheck") {
    Tensor a({1}, {3.0}), b({1}, {-1.7});
    gradcheck([](const std::vector<Var>& v) { return ag::div_scalar(ag::mul(v[0], v[0]), v[1]); }, {a, b});
}

TEST_CASE("backward reaches shared subexpressions once") {
    Tensor x({1}, {2.0});
    auto v = ag::leaf(x);
    auto y = ag::mul(v, v);     // x^2
    auto z = ag::add(y, y);     // 2x^2, dz/dx = 4x = 8
    ag::backward(z);
    CHECK(v->grad[0] == doctest::Approx(8.0));
}
