#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "paqdet/matching.hpp"
#include "paqdet/model.hpp"
#include "paqdet/modelcheck.hpp"
#include "paqdet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

using namespace paqdet;
using ad::Tensor;
using model::Detector;
using model::ModelConfig;
using model::Mode;

namespace {

ModelConfig tiny_config(Mode mode) {
    ModelConfig c;
    c.d = 8;
    c.image_size = 16;
    c.patch = 4;  // M = 16
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

void zero_all_params(Detector& det) {
    for (int i = 0; i < det.params().size(); ++i)
        std::fill(det.params().at(i).values.begin(), det.params().at(i).values.end(), 0.0);
}

// layer norm of one row, straight from the formula
std::vector<double> ln_row(const std::vector<double>& x, double eps = 1e-5) {
    double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= x.size();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + eps);
    return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation names the violated constraint") {
    ModelConfig c = tiny_config(Mode::baseline);
    CHECK_NOTHROW(c.validate());

    ModelConfig bad = c;
    bad.image_size = 15;
    CHECK_THROWS_WITH_AS(bad.validate(),
                         "config: image_size 15 not divisible by patch 4", std::invalid_argument);

    bad = c;
    bad.H = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = c;
    bad.K = 17;  // M = 16
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = c;
    bad.m = 4;  // must stay below K
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = c;
    bad.d = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    CHECK(model::mode_from_string("paq") == Mode::paq);
    CHECK(model::mode_from_string("baseline") == Mode::baseline);
    CHECK_THROWS_AS((void)model::mode_from_string("vanilla"), std::invalid_argument);
}

TEST_CASE("encode token count follows image and patch size") {
    ModelConfig c;
    c.mode = Mode::baseline;  // desk defaults otherwise: 64x64, patch 8
    Detector det(c, 1);
    auto b = det.bind(nullptr);
    Image img = random_image(64, 7);
    auto enc = det.encode(img, b);
    CHECK(enc.tokens.rows() == 64);
    CHECK(enc.tokens.cols() == 64);
    CHECK(enc.token_scores.rows() == 64);
    CHECK(enc.token_scores.cols() == 6);
    CHECK(enc.token_anchors.rows() == 64);

    Image wrong = random_image(32, 7);
    CHECK_THROWS_AS((void)det.encode(wrong, b), std::invalid_argument);
}

TEST_CASE("anchors form the patch-center grid") {
    Detector det(tiny_config(Mode::baseline), 3);
    auto b = det.bind(nullptr);
    auto enc = det.encode(random_image(16, 1), b);
    const auto& a = enc.token_anchors.values();
    // token 0 is the top-left patch: center (2, 2) of a 16px image
    CHECK(a[0] == doctest::Approx(0.125));
    CHECK(a[1] == doctest::Approx(0.125));
    CHECK(a[2] == doctest::Approx(0.2));
    CHECK(a[3] == doctest::Approx(0.2));
    // token 3 ends the first row: cx = (3 + 0.5) * 4 / 16
    CHECK(a[3 * 4 + 0] == doctest::Approx(0.875));
    CHECK(a[3 * 4 + 1] == doctest::Approx(0.125));
    for (std::size_t i = 0; i < a.size(); i += 4) {
        CHECK(a[i] > 0);
        CHECK(a[i] < 1);
    }
}

TEST_CASE("zero image with only a patch bias broadcasts that bias") {
    Detector det(tiny_config(Mode::baseline), 5);
    zero_all_params(det);
    std::vector<double> bias = {0.5, -1.0, 2.0, 0.25, -0.75, 1.5, -0.25, 0.1};
    det.params().at("enc.patch.b").values = bias;

    auto b = det.bind(nullptr);
    auto enc = det.encode(make_image(16, 0.0), b);
    // attention and FFN contribute nothing, so each token is LN(LN(bias))
    std::vector<double> expected = ln_row(ln_row(bias));
    const auto& t = enc.tokens.values();
    for (int r = 0; r < enc.tokens.rows(); ++r)
        for (int c = 0; c < 8; ++c)
            CHECK(t[r * 8 + c] == doctest::Approx(expected[c]).epsilon(1e-12));
}

TEST_CASE("encode is deterministic for a fixed seed") {
    Image img = random_image(16, 42);
    Detector d1(tiny_config(Mode::baseline), 99);
    Detector d2(tiny_config(Mode::baseline), 99);
    auto e1 = d1.encode(img, d1.bind(nullptr));
    auto e2 = d2.encode(img, d2.bind(nullptr));
    CHECK(e1.tokens.values() == e2.tokens.values());
    CHECK(e1.token_scores.values() == e2.token_scores.values());
}

TEST_CASE("select_topk ordering and tie-breaks") {
    ModelConfig c = tiny_config(Mode::baseline);
    c.K = 2;
    c.m = 1;
    Detector det(c, 1);

    model::EncoderOutput enc;
    enc.tokens = ad::make_constant({3, 8}, std::vector<double>(24, 0.5));
    enc.token_scores = ad::make_constant({3, 1}, {0.1, 0.9, 0.5});
    enc.token_anchors = ad::make_constant({3, 4}, {0.1, 0.1, 0.2, 0.2, 0.5, 0.5, 0.2, 0.2, 0.9, 0.9, 0.2, 0.2});
    auto q = det.select_topk(enc, det.bind(nullptr));
    CHECK(q.selected_indices == std::vector<int>{1, 2});
    CHECK(q.references.values()[0] == doctest::Approx(0.5));

    // equal scores: lowest indices win, in order
    ModelConfig c3 = tiny_config(Mode::baseline);
    c3.K = 3;
    c3.m = 2;
    Detector det3(c3, 1);
    model::EncoderOutput tied;
    tied.tokens = ad::make_constant({5, 8}, std::vector<double>(40, 0.0));
    tied.token_scores = ad::make_constant({5, 2}, std::vector<double>(10, 0.7));
    tied.token_anchors = ad::make_constant({5, 4}, std::vector<double>(20, 0.3));
    CHECK(det3.select_topk(tied, det3.bind(nullptr)).selected_indices == std::vector<int>{0, 1, 2});

    // K = M: a permutation of all tokens
    ModelConfig cm = tiny_config(Mode::baseline);
    cm.K = 16;
    Detector detm(cm, 2);
    auto encm = detm.encode(random_image(16, 8), detm.bind(nullptr));
    auto qm = detm.select_topk(encm, detm.bind(nullptr));
    std::set<int> uniq(qm.selected_indices.begin(), qm.selected_indices.end());
    CHECK(uniq.size() == 16);
    CHECK(*uniq.begin() == 0);
    CHECK(*uniq.rbegin() == 15);
}

TEST_CASE("generate_weights produces convex rows") {
    ModelConfig c = tiny_config(Mode::paq);
    Detector det(c, 11);

    SUBCASE("zero MLP gives uniform rows") {
        for (const char* n : {"paq.wgen.1.w", "paq.wgen.1.b", "paq.wgen.2.w", "paq.wgen.2.b"})
            std::fill(det.params().at(n).values.begin(), det.params().at(n).values.end(), 0.0);
        auto b = det.bind(nullptr);
        Tensor z = ad::make_constant({4, 8}, std::vector<double>(32, 0.3));
        auto w = det.generate_weights(z, b);
        for (double v : w.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }

    SUBCASE("a dominant logit saturates to one-hot") {
        for (const char* n : {"paq.wgen.1.w", "paq.wgen.1.b", "paq.wgen.2.w"})
            std::fill(det.params().at(n).values.begin(), det.params().at(n).values.end(), 0.0);
        det.params().at("paq.wgen.2.b").values = {1000.0, 0.0, 0.0};
        auto b = det.bind(nullptr);
        Tensor z = ad::make_constant({4, 8}, std::vector<double>(32, 0.1));
        auto w = det.generate_weights(z, b);
        for (int r = 0; r < 4; ++r) {
            CHECK(std::abs(w.values()[r * 3 + 0] - 1.0) <= 1e-12);
            CHECK(std::abs(w.values()[r * 3 + 1]) <= 1e-12);
            CHECK(std::abs(w.values()[r * 3 + 2]) <= 1e-12);
        }
    }

    SUBCASE("random inputs stay on the simplex") {
        auto b = det.bind(nullptr);
        Rng rng(77);
        std::vector<double> zv(32);
        for (auto& v : zv) v = rng.uniform(-3, 3);
        auto w = det.generate_weights(ad::make_constant({4, 8}, zv), b);
        for (int r = 0; r < 4; ++r) {
            double s = 0;
            for (int j = 0; j < 3; ++j) {
                CHECK(w.values()[r * 3 + j] >= 0);
                s += w.values()[r * 3 + j];
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("compose_queries is the convex mix of patterns") {
    Detector det(tiny_config(Mode::paq), 13);
    Tensor patterns = ad::make_constant({2, 2}, {1, 0, 0, 1});
    Tensor w = ad::make_constant({1, 2}, {0.25, 0.75});
    auto q = det.compose_queries(w, patterns);
    CHECK(q.values()[0] == doctest::Approx(0.25));
    CHECK(q.values()[1] == doctest::Approx(0.75));

    Tensor onehot = ad::make_constant({1, 2}, {1.0, 0.0});
    auto q2 = det.compose_queries(onehot, patterns);
    CHECK(q2.values()[0] == 1.0);
    CHECK(q2.values()[1] == 0.0);

    // identical patterns: every query equals that pattern
    Tensor same = ad::make_constant({3, 2}, {0.4, -0.7, 0.4, -0.7, 0.4, -0.7});
    Tensor anyw = ad::make_constant({2, 3}, {0.2, 0.3, 0.5, 0.9, 0.05, 0.05});
    auto q3 = det.compose_queries(anyw, same);
    for (int r = 0; r < 2; ++r) {
        CHECK(q3.values()[r * 2 + 0] == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(q3.values()[r * 2 + 1] == doctest::Approx(-0.7).epsilon(1e-12));
    }

    CHECK_THROWS_AS((void)det.compose_queries(ad::make_constant({1, 3}, {1, 0, 0}), patterns),
                    std::invalid_argument);
}

TEST_CASE("decode zero-update path keeps references") {
    ModelConfig c = tiny_config(Mode::baseline);
    c.L = 1;
    Detector det(c, 21);
    zero_all_params(det);
    auto b = det.bind(nullptr);
    auto fr = det.forward(random_image(16, 5), b);

    REQUIRE(fr.out.per_layer_boxes.size() == 1);
    const auto& boxes = fr.out.per_layer_boxes[0].values();
    const auto& refs = fr.queries.references.values();
    for (std::size_t i = 0; i < boxes.size(); ++i)
        CHECK(boxes[i] == doctest::Approx(refs[i]).epsilon(1e-9));
    for (double v : fr.out.per_layer_logits[0].values()) CHECK(v == 0.0);
}

TEST_CASE("per-layer output count equals L") {
    Detector det(tiny_config(Mode::paq), 31);
    auto fr = det.forward(random_image(16, 6), det.bind(nullptr));
    CHECK(fr.out.per_layer_logits.size() == 2);
    CHECK(fr.out.per_layer_boxes.size() == 2);
    for (const auto& t : fr.out.per_layer_logits) {
        CHECK(t.rows() == 4);
        CHECK(t.cols() == 3);
    }
    for (const auto& t : fr.out.per_layer_boxes) {
        CHECK(t.rows() == 4);
        CHECK(t.cols() == 4);
        for (double v : t.values()) {
            CHECK(v > 0);
            CHECK(v < 1);
        }
    }
}

TEST_CASE("forward is deterministic across instances") {
    Image img = random_image(16, 123);
    Detector d1(tiny_config(Mode::paq), 55);
    Detector d2(tiny_config(Mode::paq), 55);
    auto f1 = d1.forward(img, d1.bind(nullptr));
    auto f2 = d2.forward(img, d2.bind(nullptr));
    for (std::size_t l = 0; l < f1.out.per_layer_boxes.size(); ++l) {
        CHECK(f1.out.per_layer_boxes[l].values() == f2.out.per_layer_boxes[l].values());
        CHECK(f1.out.per_layer_logits[l].values() == f2.out.per_layer_logits[l].values());
    }
}

TEST_CASE("identical patterns collapse every paq query") {
    Detector det(tiny_config(Mode::paq), 61);
    std::vector<double> p0 = {0.3, -0.2, 0.8, 0.0, -0.5, 0.1, 0.9, -0.4};
    auto& bank = det.params().at("paq.patterns").values;
    for (int j = 0; j < 3; ++j) std::copy(p0.begin(), p0.end(), bank.begin() + j * 8);

    auto fr = det.forward(random_image(16, 9), det.bind(nullptr));
    const auto& content = fr.queries.content.values();
    for (int r = 0; r < 4; ++r)
        for (int cidx = 0; cidx < 8; ++cidx)
            CHECK(content[r * 8 + cidx] == doctest::Approx(p0[cidx]).epsilon(1e-12));
}

TEST_CASE("baseline content copies the selected encoder rows") {
    Detector det(tiny_config(Mode::baseline), 71);
    auto b = det.bind(nullptr);
    auto fr = det.forward(random_image(16, 10), b);
    const auto& tokens = fr.enc.tokens.values();
    const auto& content = fr.queries.content.values();
    for (int r = 0; r < 4; ++r) {
        int src = fr.queries.selected_indices[r];
        for (int cidx = 0; cidx < 8; ++cidx)
            CHECK(content[r * 8 + cidx] == tokens[src * 8 + cidx]);
    }
}

TEST_CASE("both modes share references for the same seed") {
    Image img = random_image(16, 202);
    Detector db(tiny_config(Mode::baseline), 88);
    Detector dp(tiny_config(Mode::paq), 88);
    auto fb = db.forward(img, db.bind(nullptr));
    auto fp = dp.forward(img, dp.bind(nullptr));
    CHECK(fb.queries.selected_indices == fp.queries.selected_indices);
    CHECK(fb.queries.references.values() == fp.queries.references.values());
    CHECK_FALSE(fb.queries.weights.defined());
    CHECK(fp.queries.weights.defined());
}

TEST_CASE("convexity holds over random paq forwards") {
    Detector det(tiny_config(Mode::paq), 404);
    const auto& bank = det.params().at("paq.patterns").values;
    std::vector<double> lo(8, 1e300), hi(8, -1e300);
    for (int j = 0; j < 3; ++j)
        for (int c = 0; c < 8; ++c) {
            lo[c] = std::min(lo[c], bank[j * 8 + c]);
            hi[c] = std::max(hi[c], bank[j * 8 + c]);
        }
    auto b = det.bind(nullptr);
    for (int trial = 0; trial < 50; ++trial) {
        auto fr = det.forward(random_image(16, 1000 + trial), b);
        const auto& w = fr.queries.weights.values();
        for (int r = 0; r < 4; ++r) {
            double s = 0;
            for (int j = 0; j < 3; ++j) {
                CHECK(w[r * 3 + j] >= 0);
                s += w[r * 3 + j];
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
        const auto& content = fr.queries.content.values();
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 8; ++c) {
                CHECK(content[r * 8 + c] >= lo[c] - 1e-12);
                CHECK(content[r * 8 + c] <= hi[c] + 1e-12);
            }
    }
}

TEST_CASE("gradient sharing reaches every pattern") {
    Detector det(tiny_config(Mode::paq), 515);
    // uniform rows: zero the weight generator
    for (const char* n : {"paq.wgen.1.w", "paq.wgen.1.b", "paq.wgen.2.w", "paq.wgen.2.b"})
        std::fill(det.params().at(n).values.begin(), det.params().at(n).values.end(), 0.0);

    ad::Graph g;
    auto b = det.bind(&g);
    auto fr = det.forward(random_image(16, 11), b);
    // a loss that touches exactly one composed query
    Tensor one_query = ad::gather_rows(fr.queries.content, {2});
    g.backward(ad::sum(ad::mul(one_query, one_query)));

    const auto& pg = g.grad(b("paq.patterns"));
    for (int j = 0; j < 3; ++j) {
        double norm = 0;
        for (int c = 0; c < 8; ++c) norm += pg[j * 8 + c] * pg[j * 8 + c];
        CHECK(std::sqrt(norm) > 0.0);
    }
}

TEST_CASE("baseline loss on one query only reaches its own token row") {
    Detector det(tiny_config(Mode::baseline), 616);
    CHECK(det.params().index_of("paq.patterns") == -1);

    ad::Graph g;
    auto b = det.bind(&g);
    auto fr = det.forward(random_image(16, 12), b);
    Tensor one_query = ad::gather_rows(fr.queries.content, {1});
    g.backward(ad::sum(ad::mul(one_query, one_query)));

    const auto& tg = g.grad(fr.enc.tokens);
    int hot_row = fr.queries.selected_indices[1];
    for (int r = 0; r < 16; ++r) {
        double norm = 0;
        for (int c = 0; c < 8; ++c) norm += std::abs(tg[r * 8 + c]);
        if (r == hot_row)
            CHECK(norm > 0.0);
        else
            CHECK(norm == 0.0);
    }
}

TEST_CASE("whole-model gradients agree with finite differences") {
    match::GroundTruthSet gt;
    gt.boxes = {{0.3, 0.35, 0.25, 0.3}, {0.7, 0.6, 0.2, 0.25}};
    gt.labels = {0, 2};
    Image img = random_image(16, 314);

    for (Mode mode : {Mode::baseline, Mode::paq}) {
        CAPTURE(to_string(mode));
        Detector det(tiny_config(mode), 2718);
        auto report = model_gradient_check(det, img, gt, 8, 1e-5, 7);
        CAPTURE(report.worst_param);
        CHECK(report.coords_checked == 8);
        CHECK(report.max_rel_err <= 1e-4);

        // negative control: corrupted analytic gradients must fail loudly
        auto bad = model_gradient_check(det, img, gt, 8, 1e-5, 7, 0.5);
        CHECK(bad.max_rel_err > 1e-4);
    }
}

}  // TEST_SUITE
