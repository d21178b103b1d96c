#include "homa/backbone.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace homa::backbone {

using ag::Var;

void BackboneConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
        throw std::invalid_argument("d_model must be a positive multiple of n_heads");
    if (d_head() % 2 != 0 || d_head() < 8) throw std::invalid_argument("head width must be even and at least 8");
    if (n_layers < 2 || n_layers % 2 != 0) throw std::invalid_argument("n_layers must be even and at least 2");
    if (patch_size <= 0 || text_dim <= 0 || latent_channels <= 0 || mlp_ratio <= 0)
        throw std::invalid_argument("backbone sizes must be positive");
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = {{"d_model", c.d_model},       {"n_heads", c.n_heads},   {"n_layers", c.n_layers},
         {"patch_size", c.patch_size}, {"text_dim", c.text_dim}, {"latent_channels", c.latent_channels},
         {"max_frames", c.max_frames}, {"mlp_ratio", c.mlp_ratio}, {"rope_theta", c.rope_theta}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
    BackboneConfig d;
    c.d_model = j.value("d_model", d.d_model);
    c.n_heads = j.value("n_heads", d.n_heads);
    c.n_layers = j.value("n_layers", d.n_layers);
    c.patch_size = j.value("patch_size", d.patch_size);
    c.text_dim = j.value("text_dim", d.text_dim);
    c.latent_channels = j.value("latent_channels", d.latent_channels);
    c.max_frames = j.value("max_frames", d.max_frames);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
    c.rope_theta = j.value("rope_theta", d.rope_theta);
    c.validate();
}

RopeSplit rope_split(std::int64_t d_head) {
    if (d_head % 2 != 0) throw std::invalid_argument("rope: head width must be even");
    const std::int64_t pairs = d_head / 2;
    const std::int64_t frame = pairs / 2, row = pairs / 4;
    return {frame, row, pairs - frame - row};
}

std::vector<double> rope_phases(const codec::TokenIndex& idx, std::int64_t d_head, double theta) {
    const auto split = rope_split(d_head);
    std::vector<double> out;
    out.reserve(d_head / 2);
    auto axis = [&](std::int64_t pos, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i)
            out.push_back(static_cast<double>(pos) * std::pow(theta, -static_cast<double>(i) / static_cast<double>(n)));
    };
    axis(idx.frame, split.frame);
    axis(idx.row, split.row);
    axis(idx.col, split.col);
    return out;
}

std::pair<Array, Array> rope_tables(const std::vector<codec::TokenIndex>& idx, std::int64_t d_head, double theta) {
    const auto half = d_head / 2, L = static_cast<std::int64_t>(idx.size());
    Array cos(Shape{L, half}), sin(Shape{L, half});
    for (std::int64_t r = 0; r < L; ++r) {
        auto ph = rope_phases(idx[r], d_head, theta);
        for (std::int64_t i = 0; i < half; ++i) {
            cos[r * half + i] = std::cos(ph[i]);
            sin[r * half + i] = std::sin(ph[i]);
        }
    }
    return {std::move(cos), std::move(sin)};
}

Array timestep_features(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0,1]");
    const std::int64_t half = kTimeFeatures / 2;
    Array f(Shape{1, kTimeFeatures});
    for (std::int64_t i = 0; i < half; ++i) {
        const double arg = t * 1000.0 * std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        f[i] = std::cos(arg);
        f[half + i] = std::sin(arg);
    }
    return f;
}

Var timestep_embed(const ParameterStore& store, double t) {
    Var h = ag::silu(apply_linear(store, "time.fc1", Var::constant(timestep_features(t))));
    return apply_linear(store, "time.fc2", h);
}

void init_backbone(ParameterStore& store, const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::int64_t d = cfg.d_model, hid = cfg.mlp_ratio * d;
    add_linear(store, "patch_embed", cfg.patch_dim(), d, rng);
    // Rows fed by the reference and pasted-object channels start at zero so
    // the embedding initially depends on the noisy latent alone.
    {
        auto& w = store.get("patch_embed.w").mutable_value();
        const std::int64_t c = cfg.latent_channels, in = cfg.in_channels();
        for (std::int64_t r = 0; r < cfg.patch_dim(); ++r)
            if (r % in >= c)
                for (std::int64_t k = 0; k < d; ++k) w[r * d + k] = 0.0;
    }
    add_linear(store, "text_in", cfg.text_dim, d, rng);
    add_linear(store, "time.fc1", kTimeFeatures, d, rng);
    add_linear(store, "time.fc2", d, d, rng);
    for (std::int64_t i = 0; i < cfg.n_layers; ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        for (const char* s : {"img", "txt"}) {
            const std::string q = p + s;
            add_linear(store, q + "_mod", d, 6 * d, rng);
            add_linear(store, q + "_qkv", d, 3 * d, rng);
            add_linear(store, q + "_proj", d, d, rng);
            add_linear(store, q + "_fc1", d, hid, rng);
            add_linear(store, q + "_fc2", hid, d, rng);
        }
    }
    add_linear(store, "final.mod", d, 2 * d, rng);
    add_linear(store, "final.proj", d, cfg.out_dim(), rng, true);
}

std::int64_t backbone_parameter_count(const BackboneConfig& cfg) {
    const std::int64_t d = cfg.d_model, r = cfg.mlp_ratio;
    auto lin = [](std::int64_t in, std::int64_t out) { return in * out + out; };
    const std::int64_t per_stream = lin(d, 6 * d) + lin(d, 3 * d) + lin(d, d) + lin(d, r * d) + lin(r * d, d);
    return lin(cfg.patch_dim(), d) + lin(cfg.text_dim, d) + lin(kTimeFeatures, d) + lin(d, d) +
           cfg.n_layers * 2 * per_stream + lin(d, 2 * d) + lin(d, cfg.out_dim());
}

Var modulate(const Var& x, const Var& shift, const Var& scale) {
    return ag::add_row(ag::mul_row(ag::layer_norm(x), ag::add_scalar(scale, 1.0)), shift);
}

namespace {

struct Mod {
    Var shift1, scale1, gate1, shift2, scale2, gate2;
};

Mod split_mod(const Var& m, std::int64_t d) {
    return {ag::slice_cols(m, 0, d),     ag::slice_cols(m, d, 2 * d),     ag::slice_cols(m, 2 * d, 3 * d),
            ag::slice_cols(m, 3 * d, 4 * d), ag::slice_cols(m, 4 * d, 5 * d), ag::slice_cols(m, 5 * d, 6 * d)};
}

}  // namespace

Streams double_stream_block(const ParameterStore& store, const BackboneConfig& cfg, std::int64_t layer,
                            const Streams& in, const Var& vec, const Array& rope_cos, const Array& rope_sin) {
    const std::int64_t d = cfg.d_model;
    if (in.img.cols() != d || in.txt.cols() != d)
        throw std::invalid_argument("double_stream_block: token width " + std::to_string(in.img.cols()) + "/" +
                                    std::to_string(in.txt.cols()) + " != d_model " + std::to_string(d));
    if (vec.rows() != 1 || vec.cols() != d) throw std::invalid_argument("double_stream_block: bad conditioning vector");
    const std::string p = "blocks." + std::to_string(layer) + ".";
    const int heads = static_cast<int>(cfg.n_heads);
    Var svec = ag::silu(vec);
    Mod mi = split_mod(apply_linear(store, p + "img_mod", svec), d);
    Mod mt = split_mod(apply_linear(store, p + "txt_mod", svec), d);

    Var qkv_i = apply_linear(store, p + "img_qkv", modulate(in.img, mi.shift1, mi.scale1));
    Var qkv_t = apply_linear(store, p + "txt_qkv", modulate(in.txt, mt.shift1, mt.scale1));
    Var q_i = ag::rope(ag::slice_cols(qkv_i, 0, d), rope_cos, rope_sin, heads);
    Var k_i = ag::rope(ag::slice_cols(qkv_i, d, 2 * d), rope_cos, rope_sin, heads);
    Var v_i = ag::slice_cols(qkv_i, 2 * d, 3 * d);
    Var q = ag::concat_rows({q_i, ag::slice_cols(qkv_t, 0, d)});
    Var k = ag::concat_rows({k_i, ag::slice_cols(qkv_t, d, 2 * d)});
    Var v = ag::concat_rows({v_i, ag::slice_cols(qkv_t, 2 * d, 3 * d)});
    Var att = ag::attention(q, k, v, heads);
    const std::int64_t li = in.img.rows(), lt = in.txt.rows();

    auto finish = [&](const Var& x, const Var& a, const Mod& m, const std::string& s) {
        Var h = ag::add(x, ag::mul_row(apply_linear(store, p + s + "_proj", a), m.gate1));
        Var mlp = apply_linear(store, p + s + "_fc2",
                               ag::gelu(apply_linear(store, p + s + "_fc1", modulate(h, m.shift2, m.scale2))));
        return ag::add(h, ag::mul_row(mlp, m.gate2));
    };
    return {finish(in.img, ag::slice_rows(att, 0, li), mi, "img"),
            finish(in.txt, ag::slice_rows(att, li, li + lt), mt, "txt")};
}

Var final_layer(const ParameterStore& store, const Var& img, const Var& vec) {
    const std::int64_t d = img.cols();
    Var m = apply_linear(store, "final.mod", ag::silu(vec));
    return apply_linear(store, "final.proj", modulate(img, ag::slice_cols(m, 0, d), ag::slice_cols(m, d, 2 * d)));
}

}  // namespace homa::backbone
