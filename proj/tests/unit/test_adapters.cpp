#include <doctest.h>

#include <cmath>

#include "homa/adapters.hpp"
#include "homa/rng.hpp"

using namespace homa;
using namespace homa::adapters;
using ag::Var;

namespace {

backbone::BackboneConfig tiny() {
    backbone::BackboneConfig c;
    c.d_model = 32;
    c.n_heads = 2;
    c.n_layers = 4;
    c.text_dim = 16;
    return c;
}

void randomize(ParameterStore& store, const std::string& prefix, Rng& rng, double scale = 0.3) {
    for (const auto& n : store.names(prefix)) store.assign(n, rng.normal_array(store.get(n).value().shape(), scale));
}

fusion::PasteSpec spec_at(std::vector<std::pair<std::int64_t, std::int64_t>> centers, std::int64_t hp, std::int64_t wp) {
    fusion::PasteSpec s;
    s.centers = std::move(centers);
    s.h_p = hp;
    s.w_p = wp;
    return s;
}

struct Fixture {
    backbone::BackboneConfig cfg = tiny();
    ParameterStore store;
    Rng rng{11};
    Fixture() {
        backbone::init_backbone(store, cfg, rng);
        attach_hoi_adapters(store, cfg, even_layers(cfg.n_layers), rng);
        attach_audio_adapters(store, cfg, even_layers(cfg.n_layers), 16, rng);
    }
};

std::shared_ptr<std::vector<std::uint8_t>> random_mask(Rng& rng, std::int64_t n, double p) {
    auto m = std::make_shared<std::vector<std::uint8_t>>(n);
    for (auto& v : *m) v = rng.uniform() < p;
    return m;
}

}  // namespace

TEST_CASE("object mask construction") {
    SUBCASE("one aligned 2x2 paste -> one core token plus its ring") {
        auto m = build_object_mask(spec_at({{3, 3}}, 2, 2), 8, 8, 2);
        // Rect [2,4) x [2,4) is exactly token (1,1); dilation adds its 8 neighbours.
        CHECK(m.count() == 9);
        for (std::int64_t r = 0; r < 4; ++r)
            for (std::int64_t c = 0; c < 4; ++c) CHECK(m.at(0, r, c) == (r <= 2 && c <= 2 ? 1 : 0));
        auto core = build_object_mask(spec_at({{3, 3}}, 2, 2), 8, 8, 2, 0);
        CHECK(core.count() == 1);
        CHECK(core.at(0, 1, 1) == 1);
    }
    SUBCASE("misaligned pastes touch several tokens") {
        // Cells [3,5) x [3,5) straddle token boundaries in both axes.
        auto core = build_object_mask(spec_at({{4, 4}}, 2, 2), 8, 8, 2, 0);
        CHECK(core.count() == 4);
        auto off = build_object_mask(spec_at({{3, 4}}, 1, 2), 8, 8, 2, 0);
        CHECK(off.count() == 2);
        auto odd = build_object_mask(spec_at({{4, 4}}, 3, 3), 8, 8, 2, 0);
        // Cells [3,6) x [3,6) meet tokens 1..2 in each axis.
        CHECK(odd.count() == 4);
    }
    SUBCASE("absent object -> all zero") {
        auto spec = spec_at({{4, 4}, {4, 4}}, 2, 2);
        spec.start_frame = 2;
        CHECK(build_object_mask(spec, 8, 8, 2).count() == 0);
    }
    SUBCASE("full frame paste -> all ones") {
        auto m = build_object_mask(spec_at({{4, 4}, {4, 4}}, 8, 8), 8, 8, 2);
        CHECK(m.count() == m.size());
        CHECK(m.size() == 2 * 16);
    }
    SUBCASE("rows mask with leading zeros and frame slicing") {
        auto m = build_object_mask(spec_at({{0, 0}, {7, 7}}, 2, 2), 8, 8, 2, 0);
        auto rows = m.rows_mask(3);
        CHECK(rows->size() == 35);
        CHECK((*rows)[0] == 0);
        CHECK((*rows)[3] == 1);
        auto s = m.slice_frames(1, 2);
        CHECK(s.frames == 1);
        CHECK(s.at(0, 3, 3) == 1);
        CHECK(s.count() == 1);
    }
}

TEST_CASE("face mask construction") {
    std::vector<conditions::Box> boxes{{0.0, 0.0, 0.25, 0.25}, {0.5, 0.5, 0.51, 0.51}, {0, 0, 0, 0}};
    auto m = build_face_mask(boxes, 8, 8, 2);
    CHECK(m.frames == 3);
    // Token (r, c) spans [r/4, (r+1)/4); a box edge on a token boundary does not include the next token.
    CHECK(m.slice_frames(0, 1).count() == 1);
    CHECK(m.at(0, 0, 0) == 1);
    CHECK(m.slice_frames(1, 2).count() == 1);
    CHECK(m.at(1, 2, 2) == 1);
    CHECK(m.slice_frames(2, 3).count() == 0);

    std::vector<conditions::Box> px(9);
    for (int i = 0; i < 9; ++i) px[i] = {0.01 * i, 0, 0.5, 0.5};
    auto lat = latent_face_boxes(px);
    CHECK(lat.size() == 3);
    CHECK(lat[1].x0 == 0.01);
    CHECK(lat[2].x0 == 0.05);
}

TEST_CASE("adapter placement and weight reuse") {
    CHECK(even_layers(8) == std::vector<std::int64_t>{0, 2, 4, 6});
    CHECK(parse_variant("cross_attn") == AdapterVariant::cross_attn);
    CHECK(variant_name(AdapterVariant::none) == "none");
    CHECK_THROWS(parse_variant("lora"));

    auto cfg = tiny();
    cfg.n_layers = 8;
    ParameterStore store;
    Rng rng(1);
    backbone::init_backbone(store, cfg, rng);
    attach_hoi_adapters(store, cfg, even_layers(8), rng);
    for (std::int64_t l = 0; l < 8; ++l) CHECK(has_hoi_adapter(store, l) == (l % 2 == 0));

    SUBCASE("clones equal their source and are independent") {
        const auto& q = store.get("adapters.hoi.4.img_qkv.w").value();
        CHECK(q == store.get("blocks.4.img_qkv.w").value());
        CHECK(store.get("adapters.hoi.4.obj_qkv.b").value() == store.get("blocks.4.txt_qkv.b").value());
        store.get("adapters.hoi.4.img_qkv.w").mutable_value()[0] += 1.0;
        CHECK(store.get("adapters.hoi.4.img_qkv.w").value()[0] != store.get("blocks.4.img_qkv.w").value()[0]);
    }
    SUBCASE("provenance resolves to a backbone parameter of the same shape") {
        std::int64_t traced = 0;
        for (const auto& n : store.names("adapters.hoi.")) {
            auto src = store.source_of(n);
            if (!src) continue;
            ++traced;
            REQUIRE(store.contains(*src));
            CHECK(src->rfind("blocks.", 0) == 0);
            CHECK(store.get(*src).value().shape() == store.get(n).value().shape());
            CHECK(store.get(*src).value() == store.get(n).value());
        }
        CHECK(traced == 4 * 6);
    }
    SUBCASE("modulation output starts at zero") {
        CHECK(store.get("adapters.hoi.0.mod2.w").value().max_abs() == 0.0);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(attach_hoi_adapters(store, cfg, {2}, rng), std::invalid_argument);
        CHECK_THROWS_AS(attach_hoi_adapters(store, cfg, {9}, rng), std::invalid_argument);
        CHECK_THROWS_AS(attach_audio_adapters(store, cfg, {-1}, 16, rng), std::invalid_argument);
    }
}

TEST_CASE("HOI adapter forward") {
    Fixture fx;
    const std::int64_t d = 32, L = 2 * 4 * 4;
    auto idx = codec::grid_index(2, 4, 4);
    Var video = Var::constant(fx.rng.normal_array({L, d}));
    Var obj = Var::constant(fx.rng.normal_array({16, d}));
    Var sem = Var::constant(fx.rng.normal_array({1, 16}));
    Var temb = backbone::timestep_embed(fx.store, 0.3);
    auto mask = random_mask(fx.rng, L, 0.4);

    SUBCASE("zero-initialized modulation -> identity for any mask") {
        auto all = std::make_shared<std::vector<std::uint8_t>>(L, 1);
        HoiInputs in{video, idx, obj, 4, 4, all, sem, temb};
        CHECK(hoi_adapter_forward(fx.store, fx.cfg, 0, in, AdapterVariant::self_attn).value() == video.value());
        CHECK(hoi_adapter_forward(fx.store, fx.cfg, 0, in, AdapterVariant::cross_attn).value() == video.value());
    }
    randomize(fx.store, "adapters.hoi.", fx.rng);
    SUBCASE("zero mask -> identity") {
        auto zero = std::make_shared<std::vector<std::uint8_t>>(L, 0);
        HoiInputs in{video, idx, obj, 4, 4, zero, sem, temb};
        CHECK(hoi_adapter_forward(fx.store, fx.cfg, 2, in, AdapterVariant::self_attn).value() == video.value());
    }
    SUBCASE("unmasked rows are bit-identical, masked rows change") {
        for (auto variant : {AdapterVariant::self_attn, AdapterVariant::cross_attn}) {
            HoiInputs in{video, idx, obj, 4, 4, mask, sem, temb};
            auto out = hoi_adapter_forward(fx.store, fx.cfg, 0, in, variant).value();
            for (std::int64_t r = 0; r < L; ++r) {
                const bool same = std::equal(out.ptr() + r * d, out.ptr() + (r + 1) * d, video.value().ptr() + r * d);
                CHECK(same == !(*mask)[r]);
            }
        }
    }
    SUBCASE("object tokens sit at frame -2") {
        // Recompute the self-attention variant with explicit index tables.
        const std::string p = hoi_prefix(0);
        const int heads = 2;
        Var cond = ag::add(apply_linear(fx.store, p + "sem_proj", sem), temb);
        Var mod = apply_linear(fx.store, p + "mod2", ag::silu(apply_linear(fx.store, p + "mod1", ag::silu(cond))));
        Var shift = ag::slice_cols(mod, 0, d), scale = ag::slice_cols(mod, d, 2 * d), gate = ag::slice_cols(mod, 2 * d, 3 * d);
        auto run = [&](std::int64_t obj_frame) {
            Var qv = apply_linear(fx.store, p + "img_qkv", backbone::modulate(video, shift, scale));
            Var qo = apply_linear(fx.store, p + "obj_qkv", backbone::modulate(obj, shift, scale));
            auto [vc, vs] = backbone::rope_tables(idx, 16, 1e4);
            auto [oc, os] = backbone::rope_tables(codec::grid_index(1, 4, 4, obj_frame), 16, 1e4);
            Var q = ag::rope(ag::slice_cols(qv, 0, d), vc, vs, heads);
            Var k = ag::concat_rows({ag::rope(ag::slice_cols(qv, d, 2 * d), vc, vs, heads),
                                     ag::rope(ag::slice_cols(qo, d, 2 * d), oc, os, heads)});
            Var v = ag::concat_rows({ag::slice_cols(qv, 2 * d, 3 * d), ag::slice_cols(qo, 2 * d, 3 * d)});
            Var upd = ag::mul_row(apply_linear(fx.store, p + "img_proj", ag::attention(q, k, v, heads)), gate);
            return ag::masked_add(video, upd, mask).value();
        };
        HoiInputs in{video, idx, obj, 4, 4, mask, sem, temb};
        auto out = hoi_adapter_forward(fx.store, fx.cfg, 0, in, AdapterVariant::self_attn).value();
        CHECK(max_abs_diff(out, run(-2)) < 1e-12);
        CHECK(max_abs_diff(out, run(-1)) > 1e-9);
    }
    SUBCASE("variant none returns the input") {
        HoiInputs in{video, idx, obj, 4, 4, mask, sem, temb};
        CHECK(hoi_adapter_forward(fx.store, fx.cfg, 0, in, AdapterVariant::none).value() == video.value());
    }
    SUBCASE("mask shape mismatch") {
        auto short_mask = std::make_shared<std::vector<std::uint8_t>>(L - 1, 1);
        HoiInputs in{video, idx, obj, 4, 4, short_mask, sem, temb};
        CHECK_THROWS_AS(hoi_adapter_forward(fx.store, fx.cfg, 0, in, AdapterVariant::self_attn), std::invalid_argument);
        HoiInputs bad_obj{video, idx, obj, 4, 2, mask, sem, temb};
        CHECK_THROWS_AS(hoi_adapter_forward(fx.store, fx.cfg, 0, bad_obj, AdapterVariant::self_attn),
                        std::invalid_argument);
    }
}

TEST_CASE("audio projection") {
    Fixture fx;
    SUBCASE("window means") {
        Array a(Shape{5, 2});
        for (int i = 0; i < 5; ++i) {
            a[i * 2] = i;
            a[i * 2 + 1] = i * i;
        }
        auto m = audio_window_means(a);
        CHECK(m.shape() == Shape{2, 2});
        CHECK(m[0] == 0.0);
        CHECK(m[2] == 2.5);
        CHECK(m[3] == (1 + 4 + 9 + 16) / 4.0);
        CHECK_THROWS(audio_window_means(Array(Shape{6, 2})));
    }
    SUBCASE("silence through zero-bias projection is zero") {
        auto tok = project_audio(fx.store, Array(Shape{5, 16}));
        CHECK(tok.shape() == Shape{2, 32});
        CHECK(tok.value().max_abs() == 0.0);
    }
    SUBCASE("deterministic, window-mean invariant") {
        Array a = fx.rng.normal_array({9, 16});
        auto t1 = project_audio(fx.store, a).value();
        CHECK(t1 == project_audio(fx.store, a).value());
        Array p = a;
        // Swap frames 1 and 3 inside window {1..4}.
        std::swap_ranges(p.ptr() + 16, p.ptr() + 32, p.ptr() + 48);
        CHECK(max_abs_diff(t1, project_audio(fx.store, p).value()) < 1e-12);
    }
    SUBCASE("width mismatch") { CHECK_THROWS_AS(project_audio(fx.store, Array(Shape{5, 8})), std::invalid_argument); }
}

TEST_CASE("face cross attention") {
    Fixture fx;
    const std::int64_t d = 32, L = 3 * 4;
    auto idx = codec::grid_index(3, 2, 2);
    Var video = Var::constant(fx.rng.normal_array({L, d}));
    Array audio = fx.rng.normal_array({9, 16});
    auto mask = random_mask(fx.rng, L, 0.5);
    Var tokens = project_audio(fx.store, audio);

    SUBCASE("zero value projection -> identity") {
        auto all = std::make_shared<std::vector<std::uint8_t>>(L, 1);
        CHECK(face_cross_attention(fx.store, fx.cfg, 0, video, idx, tokens, all).value() == video.value());
    }
    randomize(fx.store, "adapters.audio.", fx.rng);
    SUBCASE("zero mask -> identity") {
        auto zero = std::make_shared<std::vector<std::uint8_t>>(L, 0);
        CHECK(face_cross_attention(fx.store, fx.cfg, 2, video, idx, tokens, zero).value() == video.value());
    }
    SUBCASE("frame-diagonal attention has the single-key closed form") {
        // Each video token sees only its own frame's audio token, so softmax is 1.
        auto out = face_cross_attention(fx.store, fx.cfg, 0, video, idx, tokens, mask).value();
        const auto& W = fx.store.get("adapters.audio.0.v.w").value();
        const auto& B = fx.store.get("adapters.audio.0.v.b").value();
        for (std::int64_t r = 0; r < L; ++r) {
            const std::int64_t fr = idx[r].frame;
            for (std::int64_t k = 0; k < d; ++k) {
                double v = B[k];
                for (std::int64_t i = 0; i < d; ++i) v += tokens.value()[fr * d + i] * W[i * d + k];
                const double expect = video.value()[r * d + k] + ((*mask)[r] ? v : 0.0);
                if ((*mask)[r])
                    CHECK(out[r * d + k] == doctest::Approx(expect).epsilon(1e-12));
                else
                    CHECK(out[r * d + k] == expect);
            }
        }
    }
    SUBCASE("cross-window permutation only touches the matching frames") {
        Array p = audio;
        // Swap pixel frame 2 (latent frame 1) with pixel frame 6 (latent frame 2).
        std::swap_ranges(p.ptr() + 2 * 16, p.ptr() + 3 * 16, p.ptr() + 6 * 16);
        auto full = std::make_shared<std::vector<std::uint8_t>>(L, 1);
        auto a = face_cross_attention(fx.store, fx.cfg, 0, video, idx, tokens, full).value();
        auto b = face_cross_attention(fx.store, fx.cfg, 0, video, idx, project_audio(fx.store, p), full).value();
        for (std::int64_t r = 0; r < L; ++r) {
            const bool same = std::equal(a.ptr() + r * d, a.ptr() + (r + 1) * d, b.ptr() + r * d);
            CHECK(same == (idx[r].frame == 0));
        }
    }
    SUBCASE("errors") {
        auto short_mask = std::make_shared<std::vector<std::uint8_t>>(L - 1, 1);
        CHECK_THROWS_AS(face_cross_attention(fx.store, fx.cfg, 0, video, idx, tokens, short_mask), std::invalid_argument);
        auto too_few = ag::slice_rows(tokens, 0, 2);
        CHECK_THROWS_AS(face_cross_attention(fx.store, fx.cfg, 0, video, idx, too_few, mask), std::invalid_argument);
    }
}

TEST_CASE("masked locality over random weights and inputs") {
    Fixture fx;
    randomize(fx.store, "adapters.", fx.rng);
    const std::int64_t d = 32;
    for (int trial = 0; trial < 100; ++trial) {
        const std::int64_t f = 1 + trial % 3, L = f * 4;
        auto idx = codec::grid_index(f, 2, 2);
        Var video = Var::constant(fx.rng.normal_array({L, d}, 2.0));
        Var obj = Var::constant(fx.rng.normal_array({4, d}));
        Var sem = Var::constant(fx.rng.normal_array({1, 16}));
        Var temb = backbone::timestep_embed(fx.store, fx.rng.uniform());
        auto mask = random_mask(fx.rng, L, fx.rng.uniform());
        HoiInputs in{video, idx, obj, 2, 2, mask, sem, temb};
        const auto layer = 2 * (trial % 2);
        auto h = hoi_adapter_forward(fx.store, fx.cfg, layer, in, trial % 3 ? AdapterVariant::self_attn
                                                                            : AdapterVariant::cross_attn);
        auto a = face_cross_attention(fx.store, fx.cfg, layer, video, idx,
                                      Var::constant(fx.rng.normal_array({f, d})), mask);
        for (std::int64_t r = 0; r < L; ++r) {
            if ((*mask)[r]) continue;
            CHECK(std::equal(h.value().ptr() + r * d, h.value().ptr() + (r + 1) * d, video.value().ptr() + r * d));
            CHECK(std::equal(a.value().ptr() + r * d, a.value().ptr() + (r + 1) * d, video.value().ptr() + r * d));
        }
    }
}
