#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "camoseg/errors.hpp"
#include "camoseg/losses.hpp"
#include "camoseg/rng.hpp"

using namespace camoseg;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

Tensor random_mask(std::vector<int64_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return t;
}

// exhaustive min-cost over injective assignments of min(P,G) pairs
double brute_force_min_cost(const Tensor& cost) {
    const int64_t p = cost.dim(0), g = cost.dim(1);
    double best = 1e300;
    if (p <= g) {
        std::vector<int64_t> cols(static_cast<size_t>(g));
        std::iota(cols.begin(), cols.end(), 0);
        do {
            double s = 0.0;
            for (int64_t i = 0; i < p; ++i) s += cost.at(i, cols[static_cast<size_t>(i)]);
            best = std::min(best, s);
        } while (std::next_permutation(cols.begin(), cols.end()));
    } else {
        std::vector<int64_t> rows(static_cast<size_t>(p));
        std::iota(rows.begin(), rows.end(), 0);
        do {
            double s = 0.0;
            for (int64_t j = 0; j < g; ++j) s += cost.at(rows[static_cast<size_t>(j)], j);
            best = std::min(best, s);
        } while (std::next_permutation(rows.begin(), rows.end()));
    }
    return best;
}

}  // namespace

TEST_CASE("bce_loss examples and loop oracle") {
    SUBCASE("zero logits") {
        Tensor logits({2, 2}), gt = Tensor({2, 2});
        gt[0] = 1.0;
        CHECK(losses::bce_loss_value(logits, gt) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("saturated") {
        Tensor logits({2, 2}), gt({2, 2});
        gt[0] = gt[3] = 1.0;
        for (int64_t i = 0; i < 4; ++i) logits[i] = gt[i] > 0.5 ? 20.0 : -20.0;
        CHECK(losses::bce_loss_value(logits, gt) < 1e-8);
    }
    SUBCASE("random vs loop oracle") {
        Rng rng(3);
        for (int t = 0; t < 30; ++t) {
            Tensor logits = random_tensor({4, 4}, rng, 2.0);
            Tensor gt = random_mask({4, 4}, rng);
            double loop = 0.0;
            for (int64_t i = 0; i < 16; ++i) {
                const double s = 1.0 / (1.0 + std::exp(-logits[i]));
                loop += -(gt[i] * std::log(s) + (1.0 - gt[i]) * std::log(1.0 - s));
            }
            loop /= 16.0;
            CHECK(losses::bce_loss_value(logits, gt) == doctest::Approx(loop).epsilon(1e-9));
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(losses::bce_loss_value(Tensor({2, 2}), Tensor({2, 3})), ShapeError);
    }
}

TEST_CASE("dice_loss examples") {
    SUBCASE("perfect overlap") {
        Tensor m({3, 3});
        for (int64_t i = 0; i < 4; ++i) m[i] = 1.0;
        CHECK(losses::dice_loss_value(m, m, 1e-12) == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(losses::dice_loss_value(m, m, 1.0) <= 1.0 / (2 * 4 + 1.0) + 1e-12);
    }
    SUBCASE("disjoint") {
        Tensor a({2, 2}), b({2, 2});
        a[0] = 1.0;
        b[3] = 1.0;
        CHECK(losses::dice_loss_value(a, b, 1e-12) == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("closed form") {
        Tensor p({2, 2}), g({2, 2});
        for (int64_t i = 0; i < 4; ++i) {
            p[i] = 0.5;
            g[i] = 1.0;
        }
        CHECK(losses::dice_loss_value(p, g, 1.0) == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
    }
}

TEST_CASE("classification_loss examples") {
    SUBCASE("single class is exactly zero") {
        Rng rng(4);
        Tensor emb = random_tensor({3, 5}, rng);
        Tensor text = random_tensor({1, 5}, rng);
        CHECK(losses::classification_loss_value(emb, text, {0, 0, 0}, 0.07) == 0.0);
    }
    SUBCASE("temperature sharpening") {
        Tensor emb({1, 3}), text({3, 3});
        emb[0] = 1.0;
        for (int64_t c = 0; c < 3; ++c) text.at(c, c) = 1.0;
        CHECK(losses::classification_loss_value(emb, text, {0}, 0.01) < 1e-8);
    }
    SUBCASE("loop oracle") {
        Rng rng(5);
        for (int t = 0; t < 30; ++t) {
            Tensor emb = random_tensor({3, 4}, rng);
            Tensor text = random_tensor({4, 4}, rng);
            std::vector<int64_t> labels = {1, 3, 0};
            const double tau = 0.4;
            double loop = 0.0;
            for (int64_t i = 0; i < 3; ++i) {
                double mx = -1e300;
                std::vector<double> lg(4);
                for (int64_t c = 0; c < 4; ++c) {
                    double s = 0.0;
                    for (int64_t d = 0; d < 4; ++d) s += emb.at(i, d) * text.at(c, d);
                    lg[static_cast<size_t>(c)] = s / tau;
                    mx = std::max(mx, lg[static_cast<size_t>(c)]);
                }
                double z = 0.0;
                for (double v : lg) z += std::exp(v - mx);
                loop += -(lg[static_cast<size_t>(labels[static_cast<size_t>(i)])] - mx - std::log(z));
            }
            loop /= 3.0;
            CHECK(losses::classification_loss_value(emb, text, labels, tau) ==
                  doctest::Approx(loop).epsilon(1e-9));
        }
    }
    SUBCASE("bad label") {
        Tensor emb({1, 2}), text({2, 2});
        CHECK_THROWS_AS(losses::classification_loss_value(emb, text, {2}, 0.1), DomainError);
    }
}

TEST_CASE("gradient checks h=1e-5 within 1e-4") {
    Rng rng(6);
    const double h = 1e-5;
    for (int trial = 0; trial < 50; ++trial) {
        SUBCASE("") {}
        // bce
        {
            Tensor logits = random_tensor({3, 3}, rng, 2.0);
            Tensor gt = random_mask({3, 3}, rng);
            ag::Var x = ag::leaf(logits);
            ag::Var l = losses::bce_loss(x, gt);
            ag::backward(l);
            for (int64_t i = 0; i < logits.size(); ++i) {
                Tensor lp = logits, lm = logits;
                lp[i] += h;
                lm[i] -= h;
                const double fd = (losses::bce_loss_value(lp, gt) - losses::bce_loss_value(lm, gt)) / (2 * h);
                CHECK(x->grad[i] == doctest::Approx(fd).epsilon(1e-4));
            }
        }
        // dice (on probabilities in (0,1))
        {
            Tensor probs({3, 3});
            for (int64_t i = 0; i < 9; ++i) probs[i] = 0.05 + 0.9 * rng.uniform();
            Tensor gt = random_mask({3, 3}, rng);
            gt[0] = 1.0;  // nonempty
            ag::Var x = ag::leaf(probs);
            ag::Var l = losses::dice_loss(x, gt, 1.0);
            ag::backward(l);
            for (int64_t i = 0; i < probs.size(); ++i) {
                Tensor pp = probs, pm = probs;
                pp[i] += h;
                pm[i] -= h;
                const double fd =
                    (losses::dice_loss_value(pp, gt, 1.0) - losses::dice_loss_value(pm, gt, 1.0)) / (2 * h);
                CHECK(x->grad[i] == doctest::Approx(fd).epsilon(1e-4));
            }
        }
        // classification incl. d/d tau
        {
            Tensor emb = random_tensor({2, 3}, rng);
            Tensor text = random_tensor({3, 3}, rng);
            std::vector<int64_t> labels = {static_cast<int64_t>(rng.below(3)), static_cast<int64_t>(rng.below(3))};
            const double tau = 0.2 + 0.5 * rng.uniform();
            ag::Var e = ag::leaf(emb);
            ag::Var t = ag::leaf(text);
            ag::Var tv = ag::leaf(Tensor::scalar(tau));
            ag::Var l = losses::classification_loss(e, t, labels, tv);
            ag::backward(l);
            for (int64_t i = 0; i < emb.size(); ++i) {
                Tensor ep = emb, em = emb;
                ep[i] += h;
                em[i] -= h;
                const double fd = (losses::classification_loss_value(ep, text, labels, tau) -
                                   losses::classification_loss_value(em, text, labels, tau)) /
                                  (2 * h);
                CHECK(e->grad[i] == doctest::Approx(fd).epsilon(1e-4));
            }
            const double fd_tau = (losses::classification_loss_value(emb, text, labels, tau + h) -
                                   losses::classification_loss_value(emb, text, labels, tau - h)) /
                                  (2 * h);
            CHECK(tv->grad[0] == doctest::Approx(fd_tau).epsilon(1e-4));
        }
    }
}

TEST_CASE("hungarian_match examples") {
    SUBCASE("diagonal optimum") {
        Tensor c({3, 3});
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 3; ++j) c.at(i, j) = i == j ? 0.0 : 1.0;
        auto m = losses::hungarian_match(c);
        REQUIRE(m.pairs.size() == 3);
        for (int64_t i = 0; i < 3; ++i) {
            CHECK(m.pairs[static_cast<size_t>(i)].first == i);
            CHECK(m.pairs[static_cast<size_t>(i)].second == i);
        }
        CHECK(m.total_cost == doctest::Approx(0.0));
    }
    SUBCASE("1x1 forced") {
        Tensor c({1, 1});
        c[0] = 7.0;
        auto m = losses::hungarian_match(c);
        REQUIRE(m.pairs.size() == 1);
        CHECK(m.pairs[0] == std::pair<int64_t, int64_t>{0, 0});
        CHECK(m.total_cost == doctest::Approx(7.0));
    }
    SUBCASE("NaN rejected") {
        Tensor c({2, 2});
        c[1] = std::nan("");
        CHECK_THROWS_AS(losses::hungarian_match(c), DomainError);
    }
    SUBCASE("lexicographic tie-break") {
        Tensor c({2, 2});  // all zeros: every assignment costs 0
        auto m = losses::hungarian_match(c);
        REQUIRE(m.pairs.size() == 2);
        CHECK(m.pairs[0] == std::pair<int64_t, int64_t>{0, 0});
        CHECK(m.pairs[1] == std::pair<int64_t, int64_t>{1, 1});
    }
}

TEST_CASE("hungarian vs brute force, rectangular included") {
    Rng rng(7);
    for (int trial = 0; trial < 300; ++trial) {
        const int64_t p = 1 + static_cast<int64_t>(rng.below(6));
        const int64_t g = 1 + static_cast<int64_t>(rng.below(6));
        Tensor cost({p, g});
        for (int64_t i = 0; i < cost.size(); ++i) cost[i] = rng.uniform(-5.0, 5.0);
        auto m = losses::hungarian_match(cost);
        CHECK(static_cast<int64_t>(m.pairs.size()) == std::min(p, g));
        CHECK(m.total_cost == doctest::Approx(brute_force_min_cost(cost)).epsilon(1e-12));
        // injectivity + unmatched bookkeeping
        std::vector<int> pu(static_cast<size_t>(p), 0), gu(static_cast<size_t>(g), 0);
        for (auto& [pi, gi] : m.pairs) {
            CHECK(pu[static_cast<size_t>(pi)] == 0);
            CHECK(gu[static_cast<size_t>(gi)] == 0);
            pu[static_cast<size_t>(pi)] = 1;
            gu[static_cast<size_t>(gi)] = 1;
        }
        CHECK(m.pairs.size() + m.unmatched_predictions.size() == static_cast<size_t>(p));
    }
}

TEST_CASE("hungarian invariances") {
    Rng rng(8);
    Tensor cost({4, 4});
    for (int64_t i = 0; i < cost.size(); ++i) cost[i] = rng.uniform(0.0, 3.0);
    auto base = losses::hungarian_match(cost);
    SUBCASE("constant shift keeps the argmin") {
        Tensor shifted = cost;
        for (int64_t i = 0; i < shifted.size(); ++i) shifted[i] += 2.5;
        auto m = losses::hungarian_match(shifted);
        CHECK(m.pairs == base.pairs);
    }
    SUBCASE("row swap permutes the assignment") {
        Tensor sw = cost;
        for (int64_t j = 0; j < 4; ++j) std::swap(sw.at(0, j), sw.at(1, j));
        auto m = losses::hungarian_match(sw);
        CHECK(m.total_cost == doctest::Approx(base.total_cost).epsilon(1e-12));
    }
}

TEST_CASE("build_cost_matrix compositional oracle") {
    Rng rng(9);
    const int64_t p = 3, g = 2, h = 4, w = 4, d = 3, cats = 3;
    Tensor pred({p, h, w});
    for (int64_t i = 0; i < pred.size(); ++i) pred[i] = rng.normal();
    std::vector<Tensor> gts;
    std::vector<int64_t> labels;
    for (int64_t j = 0; j < g; ++j) {
        gts.push_back(random_mask({h, w}, rng));
        labels.push_back(static_cast<int64_t>(rng.below(cats)));
    }
    Tensor emb = random_tensor({p, d}, rng);
    Tensor text = random_tensor({cats, d}, rng);
    const double tau = 0.3;
    Tensor cost = losses::build_cost_matrix(pred, gts, emb, text, labels, tau, 0.4);
    REQUIRE(cost.shape() == std::vector<int64_t>{p, g});
    for (int64_t i = 0; i < p; ++i) {
        Tensor li({h, w});
        for (int64_t k = 0; k < h * w; ++k) li[k] = pred[i * h * w + k];
        Tensor prob = li;
        for (int64_t k = 0; k < h * w; ++k) prob[k] = 1.0 / (1.0 + std::exp(-li[k]));
        Tensor ei({1, d});
        for (int64_t k = 0; k < d; ++k) ei[k] = emb.at(i, k);
        for (int64_t j = 0; j < g; ++j) {
            const double expect = 0.4 * losses::bce_loss_value(li, gts[static_cast<size_t>(j)]) +
                                  losses::dice_loss_value(prob, gts[static_cast<size_t>(j)], 1.0) +
                                  losses::classification_loss_value(ei, text, {labels[static_cast<size_t>(j)]}, tau);
            CHECK(cost.at(i, j) == doctest::Approx(expect).epsilon(1e-9));
        }
    }
    SUBCASE("identical predictions give identical rows") {
        for (int64_t k = 0; k < h * w; ++k) pred[2 * h * w + k] = pred[0 * h * w + k];
        for (int64_t k = 0; k < d; ++k) emb.at(2, k) = emb.at(0, k);
        Tensor c2 = losses::build_cost_matrix(pred, gts, emb, text, labels, tau, 0.4);
        for (int64_t j = 0; j < g; ++j) CHECK(c2.at(0, j) == c2.at(2, j));
    }
}

TEST_CASE("total_loss follows Eq-3 weighting and composes") {
    Rng rng(10);
    const int64_t p = 4, g = 2, hw = 16, d = 3, cats = 2;
    losses::TotalLossInputs in;
    for (int64_t i = 0; i < p; ++i) in.pred_mask_logits.push_back(ag::leaf(random_tensor({1, hw}, rng)));
    in.embeddings = ag::leaf(random_tensor({p, d}, rng));
    for (int64_t i = 0; i < p; ++i) in.confidences.push_back(ag::leaf(random_tensor({1}, rng)));
    in.text_with_noobj = ag::leaf(random_tensor({cats + 1, d}, rng));
    in.tau = ag::constant(Tensor::scalar(0.25));

    std::vector<losses::GroundTruthInstance> gts;
    for (int64_t j = 0; j < g; ++j) gts.push_back({random_mask({1, hw}, rng), static_cast<int64_t>(rng.below(cats))});
    losses::MatchAssignment match;
    match.pairs = {{0, 1}, {2, 0}};
    match.unmatched_predictions = {1, 3};

    losses::TotalLossConfig cfg;
    auto r = losses::total_loss(in, match, gts, cfg);
    CHECK(r.breakdown.total ==
          doctest::Approx(0.4 * r.breakdown.bce + r.breakdown.dice + r.breakdown.ce).epsilon(1e-9));

    // compositional recomputation of each bucket
    double bce = 0.0, dice = 0.0, ce = 0.0;
    for (auto& [pi, gi] : match.pairs) {
        Tensor logits = in.pred_mask_logits[pi]->value;
        Tensor probs = logits;
        for (int64_t k = 0; k < hw; ++k) probs[k] = 1.0 / (1.0 + std::exp(-logits[k]));
        bce += 0.5 * losses::bce_loss_value(logits, gts[gi].mask);
        dice += 0.5 * losses::dice_loss_value(probs, gts[gi].mask, 1.0);
    }
    {
        Tensor me({2, d}), ue({2, d});
        for (int64_t k = 0; k < d; ++k) {
            me.at(0, k) = in.embeddings->value.at(0, k);
            me.at(1, k) = in.embeddings->value.at(2, k);
            ue.at(0, k) = in.embeddings->value.at(1, k);
            ue.at(1, k) = in.embeddings->value.at(3, k);
        }
        ce += losses::classification_loss_value(me, in.text_with_noobj->value,
                                                {gts[1].category_id, gts[0].category_id}, 0.25);
        ce += 0.1 * losses::classification_loss_value(ue, in.text_with_noobj->value, {cats, cats}, 0.25);
        double conf = 0.0;
        for (int64_t i = 0; i < p; ++i) {
            const double x = in.confidences[static_cast<size_t>(i)]->value[0];
            const double t = (i == 0 || i == 2) ? 1.0 : 0.0;
            conf += (std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)))) / p;
        }
        ce += 0.1 * conf;
    }
    CHECK(r.breakdown.bce == doctest::Approx(bce).epsilon(1e-9));
    CHECK(r.breakdown.dice == doctest::Approx(dice).epsilon(1e-9));
    CHECK(r.breakdown.ce == doctest::Approx(ce).epsilon(1e-9));

    SUBCASE("doubling bce moves total by 0.4*delta") {
        const double t0 = r.breakdown.total;
        CHECK(t0 - r.breakdown.dice - r.breakdown.ce == doctest::Approx(0.4 * r.breakdown.bce).epsilon(1e-9));
    }
}
