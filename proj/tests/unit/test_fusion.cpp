#include <doctest.h>

#include <set>

#include "homa/fusion.hpp"
#include "homa/rng.hpp"

using namespace homa;
using namespace homa::fusion;

namespace {

Array randn(Rng& rng, Shape s) { return rng.normal_array(std::move(s)); }

std::set<std::pair<std::int64_t, std::int64_t>> support(const Array& z, std::int64_t frame) {
    const std::int64_t h = z.dim(2), w = z.dim(3), c = z.dim(4);
    std::set<std::pair<std::int64_t, std::int64_t>> out;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t k = 0; k < c; ++k)
                if (z[(((frame * h) + y) * w + x) * c + k] != 0.0) out.insert({y, x});
    return out;
}

PasteSpec spec_at(std::vector<std::pair<std::int64_t, std::int64_t>> centers, std::int64_t hp, std::int64_t wp) {
    PasteSpec s;
    s.centers = std::move(centers);
    s.h_p = hp;
    s.w_p = wp;
    return s;
}

Array positive(Rng& rng, Shape s) {
    Array a(std::move(s));
    for (auto& v : a.vec()) v = rng.uniform(0.5, 1.5);
    return a;
}

}  // namespace

TEST_CASE("channel concat of appearance latents") {
    Rng rng(1);
    for (auto [b, f, h, w, c] : std::vector<std::array<std::int64_t, 5>>{{1, 2, 8, 8, 4}, {2, 3, 4, 6, 8}, {1, 1, 2, 2, 1}}) {
        CAPTURE(c);
        Array z = randn(rng, {b, f, h, w, c}), ref = randn(rng, {b, f, h, w, c}), obj = randn(rng, {b, f, h, w, c});
        Array cat = channel_concat_appearance(z, ref, obj);
        CHECK(cat.shape() == Shape{b, f, h, w, 3 * c});
        auto parts = split_appearance(cat, c);
        CHECK(parts.z == z);
        CHECK(parts.z_ref == ref);
        CHECK(parts.z_objd == obj);
    }
    SUBCASE("c = 4 gives 12 channels and zero side inputs stay zero") {
        Array z = randn(rng, {1, 2, 4, 4, 4});
        Array cat = channel_concat_appearance(z, Array(Shape{1, 2, 4, 4, 4}), Array(Shape{1, 2, 4, 4, 4}));
        CHECK(cat.dim(-1) == 12);
        CHECK(slice_last(cat, 0, 4) == z);
        CHECK(slice_last(cat, 4, 12).max_abs() == 0.0);
    }
    SUBCASE("single reference frame is repeated") {
        Array z = randn(rng, {1, 3, 2, 2, 2}), ref = randn(rng, {1, 1, 2, 2, 2});
        auto parts = split_appearance(channel_concat_appearance(z, ref, Array(Shape{1, 3, 2, 2, 2})), 2);
        for (std::int64_t j = 0; j < 3; ++j) CHECK(slice_axis1(parts.z_ref, j, j + 1) == ref);
    }
    SUBCASE("shape mismatch") {
        Array z(Shape{1, 2, 4, 4, 4});
        CHECK_THROWS_AS(channel_concat_appearance(z, Array(Shape{1, 2, 4, 2, 4}), z), std::invalid_argument);
        CHECK_THROWS_AS(channel_concat_appearance(z, z, Array(Shape{1, 1, 4, 4, 4})), std::invalid_argument);
        CHECK_THROWS_AS(channel_concat_appearance(z, z, Array(Shape{1, 2, 4, 4, 3})), std::invalid_argument);
    }
}

TEST_CASE("object paste along a trajectory") {
    Rng rng(2);
    Array obj = positive(rng, {1, 1, 8, 8, 4});

    SUBCASE("fixed midpoint, 2x2 paste on 8x8 -> 4 cells per frame") {
        auto out = paste_object_along_trajectory(obj, spec_at({{4, 4}, {4, 4}}, 2, 2), 2, 8, 8);
        for (std::int64_t j = 0; j < 2; ++j) {
            auto s = support(out, j);
            CHECK(s.size() == 4);
            CHECK(s == std::set<std::pair<std::int64_t, std::int64_t>>{{3, 3}, {3, 4}, {4, 3}, {4, 4}});
        }
    }
    SUBCASE("clipping at the corner") {
        auto out = paste_object_along_trajectory(obj, spec_at({{0, 0}}, 4, 4), 1, 8, 8);
        // Placement rows/cols [-2, 2) clipped to [0, 2).
        CHECK(support(out, 0) == std::set<std::pair<std::int64_t, std::int64_t>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
        // The visible cells are the lower-right quarter of the resized object.
        Array small = resize_latent_bilinear(obj.reshaped({8, 8, 4}), 4, 4);
        for (std::int64_t k = 0; k < 4; ++k) CHECK(out.at({0, 0, 0, 0, k}) == small.at({2, 2, k}));
    }
    SUBCASE("paste sizes 2x2 and 4x4 have area ratio 1:4") {
        auto a = paste_object_along_trajectory(obj, spec_at({{4, 4}}, 2, 2), 1, 8, 8);
        auto b = paste_object_along_trajectory(obj, spec_at({{4, 4}}, 4, 4), 1, 8, 8);
        CHECK(4 * support(a, 0).size() == support(b, 0).size());
    }
    SUBCASE("support equals the rectangle sequence") {
        auto spec = spec_at({{1, 6}, {5, 2}, {7, 7}}, 3, 2);
        auto out = paste_object_along_trajectory(obj, spec, 3, 8, 8);
        for (std::int64_t j = 0; j < 3; ++j) {
            const Rect r = spec.rect(j, 8, 8);
            std::set<std::pair<std::int64_t, std::int64_t>> expect;
            for (auto y = r.top; y < r.bottom; ++y)
                for (auto x = r.left; x < r.right; ++x) expect.insert({y, x});
            CHECK(support(out, j) == expect);
        }
    }
    SUBCASE("start frame leaves earlier frames empty") {
        auto spec = spec_at({{4, 4}, {4, 4}, {4, 4}}, 2, 2);
        spec.start_frame = 2;
        auto out = paste_object_along_trajectory(obj, spec, 3, 8, 8);
        CHECK(support(out, 0).empty());
        CHECK(support(out, 1).empty());
        CHECK(support(out, 2).size() == 4);
        CHECK(spec.slice(1, 3).start_frame == 1);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(paste_object_along_trajectory(obj, spec_at({{4, 4}}, 0, 2), 1, 8, 8), std::invalid_argument);
        CHECK_THROWS_AS(paste_object_along_trajectory(obj, spec_at({{4, 4}}, 2, 2), 2, 8, 8), std::invalid_argument);
        CHECK_THROWS_AS(paste_object_along_trajectory(Array(Shape{1, 2, 8, 8, 4}), spec_at({{4, 4}}, 2, 2), 1, 8, 8),
                        std::invalid_argument);
    }
}

TEST_CASE("paste spec from the condition clip") {
    conditions::ConditionClip clip;
    clip.skeleton.frames.resize(9);
    clip.object_motion.frames.resize(9);
    for (int i = 0; i < 9; ++i) clip.object_motion.frames[i] = {0.1 * i, 0.05 * i};
    clip.paste_w = 0.25;
    clip.paste_h = 0.5;
    auto spec = make_paste_spec(clip, {64, 64});
    CHECK(spec.frames() == 3);
    CHECK(spec.h_p == 4);
    CHECK(spec.w_p == 2);
    // Latent frames read pixel frames 0, 1, 5; centre = round(p * 63 / 8).
    CHECK(spec.centers[0] == std::pair<std::int64_t, std::int64_t>{0, 0});
    CHECK(spec.centers[1] == std::pair<std::int64_t, std::int64_t>{std::lround(0.05 * 63 / 8), std::lround(0.1 * 63 / 8)});
    CHECK(spec.centers[2] == std::pair<std::int64_t, std::int64_t>{std::lround(0.25 * 63 / 8), std::lround(0.5 * 63 / 8)});
    auto fixed = make_paste_spec(clip, {64, 64}, true);
    for (auto c : fixed.centers) CHECK(c == std::pair<std::int64_t, std::int64_t>{4, 4});
    clip.paste_w = 0.01;
    CHECK_THROWS_AS(make_paste_spec(clip, {64, 64}), std::invalid_argument);
}

TEST_CASE("temporal token concat") {
    Rng rng(3);
    codec::TokenGrid h;
    h.frames = 2;
    h.rows = h.cols = 4;
    h.index = codec::grid_index(2, 4, 4);
    h.data = randn(rng, {1, 32, 16});
    codec::TokenGrid o;
    o.frames = 1;
    o.rows = o.cols = 4;
    o.index = codec::grid_index(1, 4, 4);
    o.data = randn(rng, {1, 16, 16});

    auto out = token_temporal_concat(h, o, true);
    CHECK(out.length() == 48);
    CHECK(out.data.shape() == Shape{1, 48, 16});
    CHECK(out.frame_offset == -1);
    for (int i = 0; i < 16; ++i) CHECK(out.index[i].frame == -1);
    for (int i = 0; i < 32; ++i) CHECK(out.index[16 + i] == h.index[i]);
    // De-concatenation is lossless.
    CHECK(std::equal(o.data.vec().begin(), o.data.vec().end(), out.data.vec().begin()));
    CHECK(std::equal(h.data.vec().begin(), h.data.vec().end(), out.data.vec().begin() + 16 * 16));

    auto off = token_temporal_concat(h, o, false);
    CHECK(off.data == h.data);
    CHECK(off.index == h.index);

    auto two = o;
    two.frames = 2;
    CHECK_THROWS_AS(token_temporal_concat(h, two, true), std::invalid_argument);
}

TEST_CASE("motion fusion") {
    Rng rng(4);
    const std::int64_t f = 2, h = 4, w = 4, c = 2, N = f * h * w;
    Array zcat = randn(rng, {N, 3 * c}), pose = randn(rng, {1, f, h, w, c}), traj = randn(rng, {1, f, h, w, c});
    ParameterStore store;
    add_conv3x3(store, "motion.pose", c, 3 * c, rng, true);
    add_conv3x3(store, "motion.traj", c, 3 * c, rng, true);

    SUBCASE("zero encoders are the identity") {
        auto z = motion_fuse(store, ag::Var::constant(zcat), pose, traj, f, h, w, false).value();
        CHECK(z == zcat);
    }
    Rng wr(5);
    for (const char* p : {"motion.pose", "motion.traj"}) {
        store.assign(std::string(p) + ".w", randn(wr, {9 * c, 3 * c}));
        store.assign(std::string(p) + ".b", randn(wr, {3 * c}));
    }
    // Direct zero-padded 3x3 convolution with taps ordered (dy, dx) row-major.
    auto conv = [&](const std::string& p, const Array& x) {
        const auto& W = store.get(p + ".w").value();
        const auto& B = store.get(p + ".b").value();
        Array out(Shape{N, 3 * c});
        for (std::int64_t fr = 0; fr < f; ++fr)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx) {
                    const std::int64_t row = (fr * h + y) * w + xx;
                    for (std::int64_t o = 0; o < 3 * c; ++o) {
                        double s = B[o];
                        int tap = 0;
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx, ++tap) {
                                const std::int64_t yy = y + dy, xs = xx + dx;
                                if (yy < 0 || yy >= h || xs < 0 || xs >= w) continue;
                                for (std::int64_t k = 0; k < c; ++k)
                                    s += x[((fr * h + yy) * w + xs) * c + k] * W[(tap * c + k) * 3 * c + o];
                            }
                        out[row * 3 * c + o] = s;
                    }
                }
        return out;
    };
    SUBCASE("sum of separate encoder terms") {
        auto z = motion_fuse(store, ag::Var::constant(zcat), pose, traj, f, h, w, false).value();
        Array ep = conv("motion.pose", pose), et = conv("motion.traj", traj);
        for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == doctest::Approx(zcat[i] + ep[i] + et[i]).epsilon(1e-12));
        auto z_pose_only = motion_fuse(store, ag::Var::constant(zcat), pose, Array(), f, h, w, false).value();
        for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(z_pose_only[i] == doctest::Approx(zcat[i] + ep[i]).epsilon(1e-12));
    }
    SUBCASE("swapping inputs changes the output") {
        auto a = motion_fuse(store, ag::Var::constant(zcat), pose, traj, f, h, w, false).value();
        auto b = motion_fuse(store, ag::Var::constant(zcat), traj, pose, f, h, w, false).value();
        CHECK(max_abs_diff(a, b) > 1e-6);
    }
    SUBCASE("single encoder uses only the pose branch") {
        auto a = motion_fuse(store, ag::Var::constant(zcat), pose, traj, f, h, w, true).value();
        auto b = motion_fuse(store, ag::Var::constant(zcat), pose, Array(), f, h, w, false).value();
        CHECK(a == b);
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(motion_fuse(store, ag::Var::constant(zcat), Array(Shape{1, 1, h, w, c}), traj, f, h, w, false),
                        std::invalid_argument);
    }
}

TEST_CASE("semantic token fusion") {
    Rng rng(6);
    auto text = text_token_embeddings("A red person lifts a BLUE ball", 16);
    CHECK(text.shape() == Shape{7, 16});
    CHECK(text == text_token_embeddings("a red person, lifts a blue ball!", 16));
    // Repeated words share one embedding.
    CHECK(std::equal(text.ptr(), text.ptr() + 16, text.ptr() + 4 * 16));
    CHECK(text_token_embeddings("one two three", 8, 2).dim(0) == 2);
    CHECK(text_token_embeddings("", 8).dim(0) == 0);

    ag::Var hs = ag::Var::constant(randn(rng, {1, 16})), os = ag::Var::constant(randn(rng, {1, 16}));
    auto seq = semantic_token_fusion(ag::Var::constant(text), hs, os).value();
    CHECK(seq.dim(0) == 7 + 2);
    CHECK(std::equal(os.value().ptr(), os.value().ptr() + 16, seq.ptr() + 8 * 16));
    auto no_text = semantic_token_fusion(ag::Var::constant(text_token_embeddings("", 16)), hs, os).value();
    CHECK(no_text.dim(0) == 2);
    CHECK(std::equal(hs.value().ptr(), hs.value().ptr() + 16, no_text.ptr()));
    auto other = semantic_token_fusion(ag::Var::constant(text), hs, ag::Var::constant(randn(rng, {1, 16}))).value();
    CHECK(max_abs_diff(seq, other) > 0);
    CHECK_THROWS(semantic_token_fusion(ag::Var(), ag::Var(), ag::Var()));
}

TEST_CASE("pooled colour features") {
    PooledColorEncoder enc;
    Frame red(32, 32), split(32, 32);
    for (std::int64_t r = 0; r < 32; ++r)
        for (std::int64_t c = 0; c < 32; ++c) {
            red.px(r, c)[0] = 255;
            split.px(r, c)[2] = c < 16 ? 255 : 0;
        }
    auto a = enc.features(red);
    CHECK(a.shape() == Shape{1, 48});
    for (int cell = 0; cell < 16; ++cell) {
        CHECK(a[cell * 3] == 1.0);
        CHECK(a[cell * 3 + 1] == -1.0);
    }
    auto b = enc.features(split);
    CHECK(b[2] == 1.0);
    CHECK(b[3 * 3 + 2] == -1.0);
}

TEST_CASE("latent bilinear resize") {
    Array z(Shape{2, 2, 1}, std::vector<double>{0, 1, 2, 3});
    CHECK(resize_latent_bilinear(z, 2, 2) == z);
    auto up = resize_latent_bilinear(z, 4, 4);
    CHECK(up.at({0, 0, 0}) == 0.0);
    CHECK(up.at({3, 3, 0}) == 3.0);
    CHECK(up.at({1, 1, 0}) == doctest::Approx(0.75 * 0.75 * 0 + 0.75 * 0.25 * 1 + 0.25 * 0.75 * 2 + 0.25 * 0.25 * 3));
    auto one = resize_latent_bilinear(z, 1, 1);
    CHECK(one[0] == doctest::Approx(1.5));
    CHECK_THROWS(resize_latent_bilinear(z, 0, 1));
}
