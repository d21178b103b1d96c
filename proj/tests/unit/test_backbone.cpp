#include <doctest.h>

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "homa/backbone.hpp"
#include "homa/rng.hpp"

using namespace homa;
using namespace homa::backbone;
using codec::TokenIndex;

namespace {

BackboneConfig tiny() {
    BackboneConfig c;
    c.d_model = 32;
    c.n_heads = 2;
    c.n_layers = 2;
    c.text_dim = 16;
    return c;
}

Array random_array(Rng& rng, Shape s) { return rng.normal_array(std::move(s)); }

double dot(const double* a, const double* b, std::int64_t n) {
    double s = 0;
    for (std::int64_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("rope phases") {
    const std::int64_t dh = 16;
    const double theta = 1e4;
    SUBCASE("origin has zero phase") {
        for (double p : rope_phases({0, 0, 0}, dh, theta)) CHECK(p == 0.0);
    }
    SUBCASE("split is 2:1:1 over channel pairs") {
        auto s = rope_split(dh);
        CHECK(s.frame == 4);
        CHECK(s.row == 2);
        CHECK(s.col == 2);
        CHECK_THROWS(rope_split(15));
    }
    SUBCASE("frame -1 is frame 0 minus one frame step") {
        auto p0 = rope_phases({0, 3, 2}, dh, theta), pm = rope_phases({-1, 3, 2}, dh, theta);
        // Frame pairs use theta^(-i/4); row and column pairs are unaffected.
        for (int i = 0; i < 4; ++i) CHECK(pm[i] == doctest::Approx(p0[i] - std::pow(theta, -i / 4.0)).epsilon(1e-15));
        for (int i = 4; i < 8; ++i) CHECK(pm[i] == p0[i]);
        auto pm2 = rope_phases({-2, 3, 2}, dh, theta);
        for (int i = 0; i < 4; ++i) CHECK(pm2[i] == doctest::Approx(2 * pm[i] - p0[i]).epsilon(1e-12));
    }
    SUBCASE("phases are linear in each coordinate") {
        auto a = rope_phases({1, 2, 3}, dh, theta), b = rope_phases({2, 4, 6}, dh, theta);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(2 * a[i]));
    }
}

TEST_CASE("rotation followed by its inverse restores the vector") {
    Rng rng(1);
    const std::int64_t d = 32, heads = 2;
    Array x = random_array(rng, {5, d});
    std::vector<TokenIndex> idx{{0, 0, 0}, {-1, 1, 2}, {-2, 3, 0}, {7, 2, 2}, {3, 0, 5}};
    auto [c, s] = rope_tables(idx, d / heads, 1e4);
    Array neg = s;
    for (auto& v : neg.vec()) v = -v;
    auto y = ag::rope(ag::rope(ag::Var::constant(x), c, s, heads), c, neg, heads).value();
    CHECK(max_abs_diff(x, y) < 1e-12);
    auto r = ag::rope(ag::Var::constant(x), c, s, heads).value();
    for (std::int64_t i = 0; i < 5; ++i)
        CHECK(std::sqrt(dot(r.ptr() + i * d, r.ptr() + i * d, d)) ==
              doctest::Approx(std::sqrt(dot(x.ptr() + i * d, x.ptr() + i * d, d))));
}

TEST_CASE("attention logits depend only on frame differences") {
    Rng rng(2);
    const std::int64_t dh = 16;
    Array q = random_array(rng, {1, dh}), k = random_array(rng, {1, dh});
    auto logit = [&](std::int64_t fa, std::int64_t fb) {
        auto [ca, sa] = rope_tables({{fa, 1, 2}}, dh, 1e4);
        auto [cb, sb] = rope_tables({{fb, 1, 2}}, dh, 1e4);
        auto rq = ag::rope(ag::Var::constant(q), ca, sa, 1).value();
        auto rk = ag::rope(ag::Var::constant(k), cb, sb, 1).value();
        return dot(rq.ptr(), rk.ptr(), dh);
    };
    for (std::int64_t shift : {-2, -1, 1, 5}) {
        CHECK(logit(0, 3) == doctest::Approx(logit(shift, 3 + shift)).epsilon(1e-10));
        CHECK(logit(-1, 2) == doctest::Approx(logit(-1 + shift, 2 + shift)).epsilon(1e-10));
    }
    CHECK(std::abs(logit(0, 3) - logit(0, 4)) > 1e-6);
}

TEST_CASE("timestep embedding") {
    ParameterStore store;
    Rng rng(3);
    auto cfg = tiny();
    init_backbone(store, cfg, rng);
    SUBCASE("range checks") {
        CHECK_THROWS_AS(timestep_features(-0.01), std::invalid_argument);
        CHECK_THROWS_AS(timestep_features(1.01), std::invalid_argument);
        CHECK_THROWS_AS(timestep_features(std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
        CHECK_NOTHROW(timestep_features(0.0));
        CHECK_NOTHROW(timestep_features(1.0));
    }
    SUBCASE("deterministic and non-degenerate") {
        auto e0 = timestep_embed(store, 0.0).value(), e1 = timestep_embed(store, 1.0).value();
        CHECK(e0.shape() == Shape{1, 32});
        CHECK(max_abs_diff(e0, e1) > 1e-3);
        CHECK(timestep_embed(store, 0.37).value() == timestep_embed(store, 0.37).value());
    }
    SUBCASE("Lipschitz bound from the weights") {
        // |d features/dt| = 1000 * sqrt(sum of squared frequencies); SiLU has slope at most 1.1.
        double freq2 = 0;
        for (int i = 0; i < kTimeFeatures / 2; ++i) {
            const double w = 1000.0 * std::exp(-std::log(10000.0) * i / (kTimeFeatures / 2));
            freq2 += w * w;
        }
        auto fro = [](const Array& a) { return std::sqrt(dot(a.ptr(), a.ptr(), a.numel())); };
        const double K = std::sqrt(freq2) * fro(store.get("time.fc1.w").value()) * 1.1 *
                         fro(store.get("time.fc2.w").value());
        const double h = 1e-4;
        for (double t = 0.0; t + h <= 1.0; t += 0.0371) {
            auto a = timestep_embed(store, t).value(), b = timestep_embed(store, t + h).value();
            double n = 0;
            for (std::int64_t i = 0; i < a.numel(); ++i) n += (a[i] - b[i]) * (a[i] - b[i]);
            CHECK(std::sqrt(n) <= K * h);
        }
    }
}

TEST_CASE("config validation and parameter count") {
    auto cfg = tiny();
    CHECK_NOTHROW(cfg.validate());
    auto bad = cfg;
    bad.n_heads = 3;
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.n_layers = 3;
    CHECK_THROWS(bad.validate());

    // Independent tally: a linear layer holds in*out + out scalars.
    auto oracle = [](const BackboneConfig& c) {
        const std::int64_t d = c.d_model, pd = c.patch_size * c.patch_size * 3 * c.latent_channels;
        const std::int64_t od = c.patch_size * c.patch_size * c.latent_channels;
        const std::int64_t stream = (6 * d * d + 6 * d) + (3 * d * d + 3 * d) + (d * d + d) + (4 * d * d + 4 * d) +
                                    (4 * d * d + d);
        return (pd + 1) * d + (c.text_dim + 1) * d + (256 + 1) * d + (d + 1) * d + 2 * c.n_layers * stream +
               (2 * d * d + 2 * d) + (d * od + od);
    };
    for (std::int64_t d : {32, 64}) {
        auto c = cfg;
        c.d_model = d;
        ParameterStore store;
        Rng rng(4);
        init_backbone(store, c, rng);
        CHECK(store.count() == oracle(c));
        CHECK(backbone_parameter_count(c) == oracle(c));
    }
    auto c2 = cfg;
    c2.d_model = 2 * cfg.d_model;
    // Doubling d: quadratic terms grow 4x, linear terms 2x.
    const std::int64_t d = cfg.d_model, L = cfg.n_layers, pd = cfg.patch_dim(), od = cfg.out_dim();
    const std::int64_t quad = 2 * L * 18 * d * d + d * d + 2 * d * d;
    const std::int64_t lin = (pd + 1) * d + (cfg.text_dim + 1) * d + 257 * d + d + 2 * L * 15 * d + 2 * d + d * od;
    CHECK(backbone_parameter_count(c2) - backbone_parameter_count(cfg) == 3 * quad + lin);
}

TEST_CASE("double-stream block") {
    auto cfg = tiny();
    ParameterStore store;
    Rng rng(5);
    init_backbone(store, cfg, rng);
    Array img = random_array(rng, {8, 32}), txt = random_array(rng, {3, 32});
    auto idx = codec::grid_index(2, 2, 2);
    auto [c, s] = rope_tables(idx, cfg.d_head(), cfg.rope_theta);
    ag::Var vec = timestep_embed(store, 0.4);
    Streams in{ag::Var::constant(img), ag::Var::constant(txt)};

    SUBCASE("shapes preserved and deterministic") {
        auto o1 = double_stream_block(store, cfg, 0, in, vec, c, s);
        auto o2 = double_stream_block(store, cfg, 0, in, vec, c, s);
        CHECK(o1.img.shape() == Shape{8, 32});
        CHECK(o1.txt.shape() == Shape{3, 32});
        CHECK(o1.img.value() == o2.img.value());
        CHECK(max_abs_diff(o1.img.value(), img) > 1e-3);
    }
    SUBCASE("zero output projections give the identity") {
        for (const char* s1 : {"img", "txt"})
            for (const char* s2 : {"_proj", "_fc2"})
                for (const char* s3 : {".w", ".b"}) {
                    const std::string n = std::string("blocks.0.") + s1 + s2 + s3;
                    store.assign(n, Array(store.get(n).value().shape()));
                }
        auto o = double_stream_block(store, cfg, 0, in, vec, c, s);
        CHECK(o.img.value() == img);
        CHECK(o.txt.value() == txt);
    }
    SUBCASE("sample order does not matter") {
        Array img2 = random_array(rng, {8, 32});
        Streams in2{ag::Var::constant(img2), in.txt};
        auto a1 = double_stream_block(store, cfg, 1, in, vec, c, s).img.value();
        auto b1 = double_stream_block(store, cfg, 1, in2, vec, c, s).img.value();
        auto b2 = double_stream_block(store, cfg, 1, in2, vec, c, s).img.value();
        auto a2 = double_stream_block(store, cfg, 1, in, vec, c, s).img.value();
        CHECK(a1 == a2);
        CHECK(b1 == b2);
    }
    SUBCASE("text tokens carry no position") {
        // Swapping two text tokens swaps their outputs exactly up to rounding.
        Array swapped = txt;
        std::swap_ranges(swapped.ptr(), swapped.ptr() + 32, swapped.ptr() + 32);
        auto o = double_stream_block(store, cfg, 0, in, vec, c, s);
        auto p = double_stream_block(store, cfg, 0, {in.img, ag::Var::constant(swapped)}, vec, c, s);
        CHECK(max_abs_diff(o.img.value(), p.img.value()) < 1e-12);
        for (int k = 0; k < 32; ++k) CHECK(o.txt.value()[k] == doctest::Approx(p.txt.value()[32 + k]).epsilon(1e-12));
    }
    SUBCASE("dimension mismatch") {
        Streams bad{ag::Var::constant(random_array(rng, {8, 16})), in.txt};
        CHECK_THROWS_AS(double_stream_block(store, cfg, 0, bad, vec, c, s), std::invalid_argument);
    }
}

TEST_CASE("new input channels of the patch embedding start at zero") {
    auto cfg = tiny();
    ParameterStore store;
    Rng rng(6);
    init_backbone(store, cfg, rng);
    const auto& w = store.get("patch_embed.w").value();
    const std::int64_t in = cfg.in_channels(), c = cfg.latent_channels;
    double live = 0, dead = 0;
    for (std::int64_t r = 0; r < cfg.patch_dim(); ++r)
        for (std::int64_t k = 0; k < cfg.d_model; ++k) (r % in < c ? live : dead) += std::abs(w[r * cfg.d_model + k]);
    CHECK(dead == 0.0);
    CHECK(live > 0.0);
    CHECK(store.get("final.proj.w").value().max_abs() == 0.0);
}

TEST_CASE("config json round trip") {
    auto cfg = tiny();
    cfg.rope_theta = 500;
    nlohmann::json j = cfg;
    auto back = j.get<BackboneConfig>();
    CHECK(back.d_model == 32);
    CHECK(back.n_heads == 2);
    CHECK(back.rope_theta == 500);
    j["n_layers"] = 5;
    CHECK_THROWS(j.get<BackboneConfig>());
}
