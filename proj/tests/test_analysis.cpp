#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "paqdet/analysis.hpp"
#include "paqdet/matching.hpp"
#include "paqdet/model.hpp"
#include "paqdet/ops.hpp"
#include "paqdet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

using namespace paqdet;
using analysis::ActivationRecorder;
using model::Detector;
using model::ModelConfig;
using model::Mode;

namespace {

ModelConfig tiny_config(Mode mode) {
    ModelConfig c;
    c.d = 8;
    c.image_size = 16;
    c.patch = 4;
    c.K = 4;
    c.m = 3;
    c.L = 2;
    c.H = 2;
    c.C = 3;
    c.ffn_hidden = 16;
    c.wgen_hidden = 8;
    c.mode = mode;
    return c;
}

Image random_image(int size, std::uint64_t seed) {
    Image img = make_image(size);
    Rng rng(seed);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("gini: degenerate vectors") {
    CHECK(analysis::gini({}) == 0.0);
    CHECK(analysis::gini({0.0, 0.0, 0.0}) == 0.0);
    CHECK(analysis::gini({3.7}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(analysis::gini({0.4, 0.4, 0.4, 0.4, 0.4}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gini: one-hot vector of length n scores (n-1)/n") {
    CHECK(analysis::gini({0, 0, 0, 2.5}) == doctest::Approx(0.75).epsilon(1e-12));
    std::vector<double> v(10, 0.0);
    v[3] = 1.0;
    CHECK(analysis::gini(v) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("gini: hand-computed value and permutation invariance") {
    CHECK(analysis::gini({1, 2, 3, 4}) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(analysis::gini({4, 1, 3, 2}) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gini: bounded, scale invariant, rejecting bad input") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(2 + rng.uniform_int(20));
        for (auto& x : v) x = rng.uniform(0.0, 5.0);
        double g = analysis::gini(v);
        CHECK(g >= 0.0);
        CHECK(g <= 1.0);
        std::vector<double> scaled = v;
        for (auto& x : scaled) x *= 7.0;
        CHECK(analysis::gini(scaled) == doctest::Approx(g).epsilon(1e-12));
    }
    CHECK_THROWS_AS(analysis::gini({1.0, -0.5}), std::invalid_argument);
    CHECK_THROWS_AS(analysis::gini({1.0, std::numeric_limits<double>::quiet_NaN()}),
                    std::invalid_argument);
    CHECK_THROWS_AS(analysis::gini({std::numeric_limits<double>::infinity()}),
                    std::invalid_argument);
}

TEST_CASE("recorder: every query matched once gives gini 0 and full coverage") {
    ActivationRecorder rec(4, 0, 3, 8);
    match::MatchAssignment a;
    a.pairs = {{0, 0}, {1, 1}};
    rec.record_image(a, {0, 1}, nullptr);
    match::MatchAssignment b;
    b.pairs = {{2, 0}, {3, 1}};
    rec.record_image(b, {2, 2}, nullptr);

    auto stats = rec.finish();
    CHECK(stats.match_counts == std::vector<long long>{1, 1, 1, 1});
    CHECK(stats.gini_query_matches == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(stats.matched_fraction == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(stats.gini_pattern_grads == 0.0);
    CHECK(stats.class_pattern_mass.empty());
}

TEST_CASE("recorder: one busy query out of K") {
    const int K = 8;
    ActivationRecorder rec(K, 0, 3, 8);
    match::MatchAssignment a;
    a.pairs = {{5, 0}};
    for (int i = 0; i < 3; ++i) rec.record_image(a, {1}, nullptr);

    auto stats = rec.finish();
    CHECK(stats.matched_fraction == doctest::Approx(1.0 / K).epsilon(1e-12));
    CHECK(stats.match_counts[5] == 3);
    // one-hot counts: gini = (K-1)/K
    CHECK(stats.gini_query_matches == doctest::Approx(7.0 / 8.0).epsilon(1e-12));
}

TEST_CASE("recorder: pattern grads accumulate rowwise L2 norms") {
    ActivationRecorder rec(2, 2, 3, 2);
    rec.record_pattern_grad({3.0, 4.0, 0.0, 0.0});  // norms 5, 0
    rec.record_pattern_grad({0.0, 1.0, 2.0, 0.0});  // norms 1, 2
    auto stats = rec.finish();
    REQUIRE(stats.pattern_grad_norms.size() == 2);
    CHECK(stats.pattern_grad_norms[0] == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(stats.pattern_grad_norms[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(rec.record_pattern_grad({1.0}), std::invalid_argument);
}

TEST_CASE("recorder: W^D mass lands in the matched gt's class row") {
    ActivationRecorder rec(2, 2, 3, 4);
    std::vector<double> weights = {0.25, 0.75, 0.5, 0.5};  // K=2 rows
    match::MatchAssignment a;
    a.pairs = {{1, 0}};  // query 1 matched to gt 0 with label 2
    rec.record_image(a, {2}, &weights);
    auto stats = rec.finish();
    REQUIRE(stats.class_pattern_mass.size() == 3);
    CHECK(stats.class_pattern_mass[2][0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(stats.class_pattern_mass[2][1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(stats.class_pattern_mass[0][0] == 0.0);
    CHECK(stats.class_pattern_mass[1][1] == 0.0);
}

TEST_CASE("recorder: uniform W^D with one matched query still feeds every pattern") {
    Detector det(tiny_config(Mode::paq), 515);
    for (const char* n : {"paq.wgen.1.w", "paq.wgen.1.b", "paq.wgen.2.w", "paq.wgen.2.b"})
        std::fill(det.params().at(n).values.begin(), det.params().at(n).values.end(), 0.0);

    ad::Graph g;
    auto b = det.bind(&g);
    auto fr = det.forward(random_image(16, 11), b);
    ad::Tensor one_query = ad::gather_rows(fr.queries.content, {2});
    g.backward(ad::sum(ad::mul(one_query, one_query)));

    ActivationRecorder rec(4, 3, 3, 8);
    match::MatchAssignment a;
    a.pairs = {{2, 0}};
    rec.record_image(a, {1}, &fr.queries.weights.values());
    rec.record_pattern_grad(g.grad(b("paq.patterns")));

    auto stats = rec.finish();
    CHECK(stats.matched_fraction == doctest::Approx(0.25).epsilon(1e-12));
    for (double norm : stats.pattern_grad_norms) CHECK(norm > 0.0);
    // uniform rows leave the pattern gradients nearly balanced
    CHECK(stats.gini_pattern_grads < 0.5);
}

TEST_CASE("count_params: closed form at desk-scale defaults") {
    ModelConfig cfg;  // d=64, m=8, wgen_hidden=64
    cfg.mode = Mode::paq;
    auto r = analysis::count_params(cfg);
    CHECK(r.term_patterns == 512);
    CHECK(r.term_w1 == 4096);
    CHECK(r.term_b1 == 64);
    CHECK(r.term_w2 == 512);
    CHECK(r.term_b2 == 8);
    CHECK(r.paq_params == 5192);
    CHECK(r.paq_params == r.term_patterns + r.term_w1 + r.term_b1 + r.term_w2 + r.term_b2);
    CHECK(r.total_params > r.paq_params);
}

TEST_CASE("count_params: baseline carries no paq parameters") {
    ModelConfig cfg;
    cfg.mode = Mode::baseline;
    auto r = analysis::count_params(cfg);
    CHECK(r.paq_params == 0);
    CHECK(r.term_patterns + r.term_w1 + r.term_b1 + r.term_w2 + r.term_b2 == 0);

    // paq adds exactly its closed form on top of the shared trunk
    ModelConfig pcfg = cfg;
    pcfg.mode = Mode::paq;
    auto p = analysis::count_params(pcfg);
    CHECK(p.total_params - r.total_params == p.paq_params);
}

TEST_CASE("count_params: doubling m doubles the pattern term exactly") {
    ModelConfig a;
    a.mode = Mode::paq;
    a.m = 8;
    ModelConfig b = a;
    b.m = 16;
    auto ra = analysis::count_params(a);
    auto rb = analysis::count_params(b);
    CHECK(rb.term_patterns == 2 * ra.term_patterns);
    CHECK(rb.term_w1 == ra.term_w1);  // d and hidden untouched
}

TEST_CASE("count_params: closed form matches enumeration across shapes") {
    Rng rng(4242);
    for (int trial = 0; trial < 8; ++trial) {
        ModelConfig cfg = tiny_config(Mode::paq);
        cfg.d = 4 * (1 + static_cast<int>(rng.uniform_int(4)));
        cfg.H = 2;
        cfg.m = 2 + static_cast<int>(rng.uniform_int(2));  // keep m < K
        cfg.wgen_hidden = 4 + static_cast<int>(rng.uniform_int(12));
        auto r = analysis::count_params(cfg);
        long long want = static_cast<long long>(cfg.m) * cfg.d +
                         static_cast<long long>(cfg.d) * cfg.wgen_hidden + cfg.wgen_hidden +
                         static_cast<long long>(cfg.wgen_hidden) * cfg.m + cfg.m;
        CHECK(r.paq_params == want);
    }
}

TEST_CASE("count_flops: closed form at desk-scale defaults") {
    ModelConfig cfg;  // K=30, d=64, m=8, wgen_hidden=64
    cfg.mode = Mode::paq;
    auto r = analysis::count_flops(cfg);
    CHECK(r.paq_flops == 122880 + 15360 + 15360);
    CHECK(r.paq_flops == 153600);
    CHECK(r.total_flops > r.paq_flops);
    CHECK(static_cast<double>(r.paq_flops) / static_cast<double>(r.total_flops) < 0.05);
}

TEST_CASE("count_flops: baseline carries no paq flops") {
    ModelConfig cfg;
    auto base = analysis::count_flops(cfg);
    CHECK(base.paq_flops == 0);
    ModelConfig pcfg = cfg;
    pcfg.mode = Mode::paq;
    auto paq = analysis::count_flops(pcfg);
    CHECK(paq.total_flops - base.total_flops == paq.paq_flops);
}

}  // TEST_SUITE
