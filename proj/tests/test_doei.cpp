#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doei/doei.hpp"
#include "doei/errors.hpp"
#include "doei/rng.hpp"
#include "doei/tensor.hpp"

using namespace doei;

namespace {

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

std::vector<std::size_t> mask_columns(const Tensor& mask, std::size_t row) {
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < mask.cols(); ++c)
        if (mask(row, c) == 1.0) cols.push_back(c);
    return cols;
}

}  // namespace

TEST_CASE("config validation") {
    DoeiConfig cfg = DoeiConfig::full_on(4);
    CHECK_NOTHROW(cfg.validate(4));

    DoeiConfig bad = cfg;
    bad.alpha = 1.2;
    CHECK_THROWS_AS(bad.validate(4), ConfigError);

    bad = cfg;
    bad.af_c2c = -0.1;
    CHECK_THROWS_AS(bad.validate(4), ConfigError);

    bad = cfg;
    bad.sf_p2c = 0.2;
    CHECK_THROWS_AS(bad.validate(4), ConfigError);
    bad.allow_positive_sf = true;
    CHECK_NOTHROW(bad.validate(4));

    bad = cfg;
    bad.st_c2c = 0.0;
    CHECK_THROWS_AS(bad.validate(4), ConfigError);

    bad = cfg;
    bad.active_layers = {5};
    CHECK_THROWS_AS(bad.validate(4), ConfigError);
    CHECK_NOTHROW(bad.validate(5));

    CHECK(DoeiConfig::off().active_layers.empty());
    CHECK(cfg.layer_active(1));
    CHECK_FALSE(DoeiConfig::off().layer_active(1));
}

TEST_CASE("progressive threshold follows the layer schedule") {
    // Last layer selects nothing.
    CHECK(progressive_threshold(64, 4, 4, 0.3) == 0);
    CHECK(progressive_threshold(4, 2, 1, 0.25) == 1);
    // Saturation: 196 * 11 * 1.0 = 2156, clamped to n.
    CHECK(progressive_threshold(196, 12, 1, 1.0) == 196);

    CHECK_THROWS_AS(progressive_threshold(4, 2, 0, 0.25), ConfigError);
    CHECK_THROWS_AS(progressive_threshold(4, 2, 3, 0.25), ConfigError);
    CHECK_THROWS_AS(progressive_threshold(0, 2, 1, 0.25), ConfigError);
    CHECK_THROWS_AS(progressive_threshold(4, 2, 1, 0.0), ConfigError);

    // Non-increasing in the layer index for fixed n, L, st.
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(200);
        const std::size_t layers = 1 + rng.below(12);
        const double st = rng.uniform(0.01, 1.5);
        std::size_t prev = n + 1;
        for (std::size_t i = 1; i <= layers; ++i) {
            const std::size_t t = progressive_threshold(n, layers, i, st);
            CHECK(t <= n);
            if (prev <= n) CHECK(t <= prev);
            prev = t;
        }
        CHECK(prev == 0);  // i = L
    }
}

TEST_CASE("candidate selection worked examples") {
    Tensor scores = Tensor::zeros({1, 4});
    scores.mutable_data() = {0.9, 0.1, 0.5, 0.3};

    const CandidateMasks two = select_candidates(scores, 2, false);
    CHECK(mask_columns(two.confident, 0) == std::vector<std::size_t>{0, 2});
    CHECK(mask_columns(two.non_confident, 0) == std::vector<std::size_t>{1, 3});

    const CandidateMasks none = select_candidates(scores, 0, false);
    CHECK(mask_columns(none.confident, 0).empty());
    CHECK(mask_columns(none.non_confident, 0) == std::vector<std::size_t>{0, 1, 2, 3});

    const CandidateMasks all = select_candidates(scores, 4, false);
    CHECK(mask_columns(all.confident, 0) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(mask_columns(all.non_confident, 0).empty());

    CHECK_THROWS_AS(select_candidates(scores, 5, false), ConfigError);
}

TEST_CASE("ties break toward the lowest column index") {
    Tensor scores = Tensor::zeros({1, 4});
    scores.mutable_data() = {0.5, 0.7, 0.5, 0.5};
    const CandidateMasks masks = select_candidates(scores, 2, false);
    CHECK(mask_columns(masks.confident, 0) == std::vector<std::size_t>{0, 1});

    Tensor flat = Tensor::full({1, 5}, 0.25);
    const CandidateMasks uniform = select_candidates(flat, 3, false);
    CHECK(mask_columns(uniform.confident, 0) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("diagonal exclusion removes self-coupling from both masks") {
    Tensor scores = Tensor::zeros({3, 3});
    scores.mutable_data() = {9, 1, 2, 1, 9, 2, 2, 1, 9};  // diagonal dominates
    const CandidateMasks masks = select_candidates(scores, 1, true);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(masks.confident(r, r) == 0.0);
        CHECK(masks.non_confident(r, r) == 0.0);
    }
    CHECK(mask_columns(masks.confident, 0) == std::vector<std::size_t>{2});
    CHECK(mask_columns(masks.confident, 1) == std::vector<std::size_t>{2});
    CHECK(mask_columns(masks.confident, 2) == std::vector<std::size_t>{0});
}

TEST_CASE("selection matches a full-sort oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 250; ++trial) {
        const std::size_t rows = 1 + rng.below(8);
        const std::size_t cols = 1 + rng.below(16);
        const bool exclude = rows == cols && rng.below(2) == 1;
        Tensor scores = Tensor::zeros({rows, cols});
        for (double& v : scores.mutable_data())
            v = rng.below(4) == 0 ? static_cast<double>(rng.below(3)) : rng.uniform(-2.0, 2.0);
        const std::size_t t = rng.below(cols + 1);

        const CandidateMasks masks = select_candidates(scores, t, exclude);
        for (std::size_t r = 0; r < rows; ++r) {
            std::vector<std::size_t> eligible;
            for (std::size_t c = 0; c < cols; ++c)
                if (!(exclude && c == r)) eligible.push_back(c);
            std::sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
                if (scores(r, a) != scores(r, b)) return scores(r, a) > scores(r, b);
                return a < b;
            });
            const std::size_t take = std::min(t, eligible.size());

            std::vector<std::size_t> want_cs(eligible.begin(), eligible.begin() + take);
            std::sort(want_cs.begin(), want_cs.end());
            CHECK(mask_columns(masks.confident, r) == want_cs);

            // Partition law over the non-excluded columns.
            double min_cs = 1e300, max_ns = -1e300;
            for (std::size_t c = 0; c < cols; ++c) {
                const double in_cs = masks.confident(r, c), in_ns = masks.non_confident(r, c);
                CHECK(in_cs * in_ns == 0.0);
                if (exclude && c == r) {
                    CHECK(in_cs == 0.0);
                    CHECK(in_ns == 0.0);
                } else {
                    CHECK(in_cs + in_ns == 1.0);
                }
                if (in_cs == 1.0) min_cs = std::min(min_cs, scores(r, c));
                if (in_ns == 1.0) max_ns = std::max(max_ns, scores(r, c));
            }
            // Monotone selection: everything confident >= everything not.
            if (min_cs < 1e300 && max_ns > -1e300) CHECK(min_cs >= max_ns);
        }
    }
}

TEST_CASE("coupling scores from a head-mean matrix") {
    // 1 class, 2 patches: T = 3.
    Tensor a = Tensor::zeros({3, 3});
    a.mutable_data() = {0.1, 0.2, 0.3,
                       0.4, 0.5, 0.6,
                       0.7, 0.8, 0.9};
    const CouplingScores scores = build_coupling(a, 1);
    REQUIRE(scores.patch_to_class.shape() == Shape{1, 2});
    CHECK(scores.patch_to_class(0, 0) == doctest::Approx(0.2 + 0.4).epsilon(1e-15));
    CHECK(scores.patch_to_class(0, 1) == doctest::Approx(0.3 + 0.7).epsilon(1e-15));
    REQUIRE(scores.class_to_class.shape() == Shape{1, 1});
    CHECK(scores.class_to_class(0, 0) == doctest::Approx(0.2).epsilon(1e-15));

    Rng rng(5);
    const Tensor big = random_matrix(rng, 7, 7);
    const CouplingScores sym = build_coupling(big, 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(sym.class_to_class(i, j) == sym.class_to_class(j, i));

    CHECK_THROWS_AS(build_coupling(big, 7), ShapeError);
    CHECK_THROWS_AS(build_coupling(random_matrix(rng, 3, 4), 1), ShapeError);
}

TEST_CASE("ppdo hand example and identities") {
    DoeiConfig cfg;
    cfg.af_p2c = 0.5;
    cfg.sf_p2c = -0.5;

    Tensor patch = Tensor::zeros({2, 2});
    Tensor cls = Tensor::full({1, 2}, 2.0);
    Tensor p = Tensor::zeros({1, 2});
    p.mutable_data() = {1.0, 0.0};

    const Tensor out = ppdo(patch, cls, p, cfg, 1);
    CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(out(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(out(1, 0) == 0.0);
    CHECK(out(1, 1) == 0.0);

    SUBCASE("zero factors return the input tensor itself") {
        DoeiConfig off;
        off.af_p2c = 0.0;
        off.sf_p2c = 0.0;
        const Tensor same = ppdo(patch, cls, p, off, 1);
        CHECK(same.impl() == patch.impl());
    }

    SUBCASE("zero class tokens leave patches unchanged") {
        Rng rng(9);
        const Tensor rich = random_matrix(rng, 2, 2);
        const Tensor none = ppdo(rich, Tensor::zeros({1, 2}), p, cfg, 1);
        for (std::size_t i = 0; i < 4; ++i) CHECK(none.data()[i] == rich.data()[i]);
    }
}

TEST_CASE("cpdo hand example and identities") {
    DoeiConfig cfg;
    cfg.af_c2c = 1.0;
    cfg.sf_c2c = 0.0;

    Tensor cls = Tensor::zeros({2, 3});
    cls.mutable_data() = {1, 2, 3, 4, 5, 6};
    Tensor cmat = Tensor::zeros({2, 2});
    cmat.mutable_data() = {0.9, 1.0, 1.0, 0.9};  // diagonal excluded anyway

    const Tensor out = cpdo(cls, cmat, cfg, 1);
    // Each class token gains the other token's full embedding.
    CHECK(out(0, 0) == doctest::Approx(1 + 4).epsilon(1e-15));
    CHECK(out(0, 2) == doctest::Approx(3 + 6).epsilon(1e-15));
    CHECK(out(1, 0) == doctest::Approx(4 + 1).epsilon(1e-15));
    CHECK(out(1, 2) == doctest::Approx(6 + 3).epsilon(1e-15));

    SUBCASE("single class with excluded diagonal is a no-op") {
        Tensor solo = Tensor::full({1, 3}, 2.5);
        const Tensor same = cpdo(solo, Tensor::full({1, 1}, 9.0), cfg, 1);
        for (std::size_t i = 0; i < 3; ++i) CHECK(same.data()[i] == 2.5);
    }

    SUBCASE("zero factors return the input tensor itself") {
        DoeiConfig off;
        off.af_c2c = 0.0;
        off.sf_c2c = 0.0;
        const Tensor same = cpdo(cls, cmat, off, 1);
        CHECK(same.impl() == cls.impl());
    }
}

TEST_CASE("ppdo corrections scale linearly with the class tokens") {
    Rng rng(12);
    DoeiConfig cfg;
    cfg.af_p2c = 0.7;
    cfg.sf_p2c = -0.2;
    const Tensor patch = random_matrix(rng, 6, 4);
    const Tensor cls = random_matrix(rng, 2, 4);
    const Tensor p = random_matrix(rng, 2, 6, 0.0, 1.0);

    const double lambda = 3.5;
    Tensor scaled_cls = Tensor::zeros({2, 4});
    for (std::size_t i = 0; i < cls.numel(); ++i)
        scaled_cls.mutable_data()[i] = lambda * cls.data()[i];

    const Tensor base = ppdo(patch, cls, p, cfg, 3);
    const Tensor scaled = ppdo(patch, scaled_cls, p, cfg, 3);
    for (std::size_t i = 0; i < patch.numel(); ++i) {
        const double corr = base.data()[i] - patch.data()[i];
        const double corr_scaled = scaled.data()[i] - patch.data()[i];
        CHECK(corr_scaled == doctest::Approx(lambda * corr).epsilon(1e-12));
    }
}

TEST_CASE("apply_doei pass-through cases share the input tensor") {
    Rng rng(3);
    const Tensor tokens = random_matrix(rng, 7, 4);
    const Tensor attn = random_matrix(rng, 7, 7, 0.0, 1.0);

    DoeiConfig cfg = DoeiConfig::full_on(2);
    const Tensor inactive = apply_doei(tokens, attn, cfg, 3, 2, 3);  // layer 3 not in 1..2
    CHECK(inactive.impl() == tokens.impl());

    DoeiConfig disabled;
    disabled.active_layers = {1};
    const Tensor off = apply_doei(tokens, attn, disabled, 3, 2, 1);
    CHECK(off.impl() == tokens.impl());
}

TEST_CASE("apply_doei matches a monolithic re-implementation") {
    Rng rng(77);
    const std::size_t classes = 3, cells = 6, total = classes + cells, dim = 5;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor tokens = random_matrix(rng, total, dim);
        const Tensor attn = random_matrix(rng, total, total, 0.0, 1.0);

        DoeiConfig cfg;
        cfg.ppdo_enabled = cfg.cpdo_enabled = true;
        cfg.active_layers = {1, 2, 3};
        cfg.st_p2c = rng.uniform(0.05, 0.8);
        cfg.st_c2c = rng.uniform(0.05, 0.8);
        cfg.af_p2c = rng.uniform(0.0, 1.0);
        cfg.sf_p2c = -rng.uniform(0.0, 1.0);
        cfg.af_c2c = rng.uniform(0.0, 1.0);
        cfg.sf_c2c = -rng.uniform(0.0, 1.0);
        const std::size_t layers = 3, layer = 1 + rng.below(layers);

        const Tensor got = apply_doei(tokens, attn, cfg, classes, layers, layer);

        // Independent dense recomputation with plain loops.
        auto at = [&](const Tensor& m, std::size_t r, std::size_t c) { return m(r, c); };
        std::vector<double> p(classes * cells), cmat(classes * classes);
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t q = 0; q < cells; ++q)
                p[c * cells + q] = at(attn, c, classes + q) + at(attn, classes + q, c);
        for (std::size_t a = 0; a < classes; ++a)
            for (std::size_t b = 0; b < classes; ++b)
                cmat[a * classes + b] = at(attn, a, b) + at(attn, b, a);

        auto top_set = [&](const std::vector<double>& mat, std::size_t row, std::size_t cols,
                           std::size_t t, bool exclude) {
            std::vector<std::size_t> order;
            for (std::size_t c = 0; c < cols; ++c)
                if (!(exclude && c == row)) order.push_back(c);
            std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
                const double vx = mat[row * cols + x], vy = mat[row * cols + y];
                if (vx != vy) return vx > vy;
                return x < y;
            });
            order.resize(std::min(t, order.size()));
            return std::vector<std::size_t>(order.begin(), order.end());
        };

        const std::size_t tp = progressive_threshold(cells, layers, layer, cfg.st_p2c);
        const std::size_t tc = progressive_threshold(classes, layers, layer, cfg.st_c2c);

        std::vector<double> expect(total * dim);
        for (std::size_t r = 0; r < total; ++r)
            for (std::size_t d = 0; d < dim; ++d) expect[r * dim + d] = at(tokens, r, d);

        for (std::size_t c = 0; c < classes; ++c) {
            const auto cs = top_set(p, c, cells, tp, false);
            for (std::size_t q = 0; q < cells; ++q) {
                const bool confident = std::find(cs.begin(), cs.end(), q) != cs.end();
                const double f = (confident ? cfg.af_p2c : cfg.sf_p2c) * p[c * cells + q];
                for (std::size_t d = 0; d < dim; ++d)
                    expect[(classes + q) * dim + d] += f * at(tokens, c, d);
            }
        }
        for (std::size_t a = 0; a < classes; ++a) {
            const auto cs = top_set(cmat, a, classes, tc, true);
            for (std::size_t b = 0; b < classes; ++b) {
                if (b == a) continue;
                const bool confident = std::find(cs.begin(), cs.end(), b) != cs.end();
                const double f = (confident ? cfg.af_c2c : cfg.sf_c2c) * cmat[a * classes + b];
                for (std::size_t d = 0; d < dim; ++d)
                    expect[a * dim + d] += f * at(tokens, b, d);
            }
        }

        REQUIRE(got.shape() == tokens.shape());
        for (std::size_t i = 0; i < got.numel(); ++i)
            CHECK(got.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("gradient flows through coupling values but masks stay constant") {
    Rng rng(41);
    Tensor tokens = random_matrix(rng, 5, 3);
    Tensor attn = random_matrix(rng, 5, 5, 0.0, 1.0);
    tokens.set_requires_grad(true);
    attn.set_requires_grad(true);

    DoeiConfig cfg;
    cfg.ppdo_enabled = cfg.cpdo_enabled = true;
    cfg.active_layers = {1};
    cfg.af_p2c = 0.5;
    cfg.sf_p2c = -0.3;
    cfg.af_c2c = 0.4;
    cfg.sf_c2c = -0.2;

    Tape tape;
    {
        TapeScope scope(tape);
        const Tensor out = apply_doei(tokens, attn, cfg, 2, 2, 1);
        const Tensor loss = sum_all(mul(out, out));
        tape.backward(loss);
    }
    double token_grad = 0.0, attn_grad = 0.0;
    for (double g : tokens.grad()) token_grad += std::abs(g);
    for (double g : attn.grad()) attn_grad += std::abs(g);
    CHECK(token_grad > 0.0);
    CHECK(attn_grad > 0.0);

    const CandidateMasks masks = select_candidates(attn, 2, false);
    CHECK_FALSE(masks.confident.has_grad());
    CHECK_FALSE(masks.non_confident.has_grad());
}
