#include "homa/adapters.hpp"

#include <algorithm>

#include "homa/geometry.hpp"

namespace homa::adapters {

using ag::Var;

std::int64_t MaskVolume::count() const {
    return std::count_if(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; });
}

MaskVolume MaskVolume::slice_frames(std::int64_t begin, std::int64_t end) const {
    if (begin < 0 || end > frames || begin >= end) throw std::out_of_range("mask frame slice out of range");
    MaskVolume out(end - begin, rows, cols);
    std::copy(values.begin() + begin * rows * cols, values.begin() + end * rows * cols, out.values.begin());
    return out;
}

std::shared_ptr<const std::vector<std::uint8_t>> MaskVolume::rows_mask(std::int64_t leading_zeros) const {
    auto m = std::make_shared<std::vector<std::uint8_t>>(leading_zeros, 0);
    m->insert(m->end(), values.begin(), values.end());
    return m;
}

MaskVolume build_object_mask(const fusion::PasteSpec& spec, std::int64_t h, std::int64_t w, std::int64_t p,
                             std::int64_t dilation) {
    if (h % p != 0 || w % p != 0) throw std::invalid_argument("latent size not divisible by patch size");
    const std::int64_t f = spec.frames(), hp = h / p, wp = w / p;
    MaskVolume core(f, hp, wp), out(f, hp, wp);
    for (std::int64_t j = 0; j < f; ++j) {
        const fusion::Rect r = spec.rect(j, h, w);
        if (r.empty()) continue;
        for (std::int64_t tr = 0; tr < hp; ++tr)
            for (std::int64_t tc = 0; tc < wp; ++tc)
                if (tr * p < r.bottom && (tr + 1) * p > r.top && tc * p < r.right && (tc + 1) * p > r.left)
                    core.at(j, tr, tc) = 1;
        for (std::int64_t tr = 0; tr < hp; ++tr)
            for (std::int64_t tc = 0; tc < wp; ++tc) {
                if (!core.at(j, tr, tc)) continue;
                for (std::int64_t dr = -dilation; dr <= dilation; ++dr)
                    for (std::int64_t dc = -dilation; dc <= dilation; ++dc) {
                        const std::int64_t rr = tr + dr, cc = tc + dc;
                        if (rr >= 0 && cc >= 0 && rr < hp && cc < wp) out.at(j, rr, cc) = 1;
                    }
            }
    }
    return out;
}

MaskVolume build_face_mask(const std::vector<conditions::Box>& boxes, std::int64_t h, std::int64_t w, std::int64_t p) {
    if (h % p != 0 || w % p != 0) throw std::invalid_argument("latent size not divisible by patch size");
    const std::int64_t f = static_cast<std::int64_t>(boxes.size()), hp = h / p, wp = w / p;
    MaskVolume m(f, hp, wp);
    for (std::int64_t j = 0; j < f; ++j) {
        const auto& b = boxes[j];
        for (std::int64_t tr = 0; tr < hp; ++tr)
            for (std::int64_t tc = 0; tc < wp; ++tc) {
                const double y0 = static_cast<double>(tr * p) / h, y1 = static_cast<double>((tr + 1) * p) / h;
                const double x0 = static_cast<double>(tc * p) / w, x1 = static_cast<double>((tc + 1) * p) / w;
                if (y0 < b.y1 && y1 > b.y0 && x0 < b.x1 && x1 > b.x0) m.at(j, tr, tc) = 1;
            }
    }
    return m;
}

std::vector<conditions::Box> latent_face_boxes(const std::vector<conditions::Box>& pixel_boxes) {
    const std::int64_t f = latent_frame_count(static_cast<std::int64_t>(pixel_boxes.size()));
    std::vector<conditions::Box> out;
    for (std::int64_t j = 0; j < f; ++j) out.push_back(pixel_boxes[latent_window(j).first]);
    return out;
}

std::string variant_name(AdapterVariant v) {
    switch (v) {
        case AdapterVariant::self_attn: return "self_attn";
        case AdapterVariant::cross_attn: return "cross_attn";
        case AdapterVariant::none: return "none";
    }
    return "none";
}

AdapterVariant parse_variant(const std::string& s) {
    if (s == "self_attn") return AdapterVariant::self_attn;
    if (s == "cross_attn") return AdapterVariant::cross_attn;
    if (s == "none") return AdapterVariant::none;
    throw std::invalid_argument("unknown adapter variant '" + s + "' (self_attn, cross_attn, none)");
}

std::vector<std::int64_t> even_layers(std::int64_t n_layers) {
    std::vector<std::int64_t> out;
    for (std::int64_t i = 0; i < n_layers; i += 2) out.push_back(i);
    return out;
}

bool has_hoi_adapter(const ParameterStore& store, std::int64_t layer) {
    return store.contains(hoi_prefix(layer) + "img_qkv.w");
}

bool has_audio_adapter(const ParameterStore& store, std::int64_t layer) {
    return store.contains(audio_prefix(layer) + "q.w");
}

void attach_hoi_adapters(ParameterStore& store, const backbone::BackboneConfig& cfg,
                         const std::vector<std::int64_t>& layers, Rng& rng) {
    const std::int64_t d = cfg.d_model;
    for (auto layer : layers) {
        if (layer < 0 || layer >= cfg.n_layers)
            throw std::invalid_argument("adapter layer " + std::to_string(layer) + " outside the backbone");
        if (has_hoi_adapter(store, layer))
            throw std::invalid_argument("HOI adapter already attached at layer " + std::to_string(layer));
    }
    for (auto layer : layers) {
        const std::string host = "blocks." + std::to_string(layer) + ".", p = hoi_prefix(layer);
        for (const char* part : {"w", "b"}) {
            store.clone(host + "img_qkv." + part, p + "img_qkv." + part);
            store.clone(host + "img_proj." + part, p + "img_proj." + part);
            store.clone(host + "txt_qkv." + part, p + "obj_qkv." + part);
        }
        add_linear(store, p + "sem_proj", cfg.text_dim, d, rng);
        add_linear(store, p + "mod1", d, d, rng);
        add_linear(store, p + "mod2", d, 3 * d, rng, true);
    }
}

Var hoi_adapter_forward(const ParameterStore& store, const backbone::BackboneConfig& cfg, std::int64_t layer,
                        const HoiInputs& in, AdapterVariant variant) {
    if (variant == AdapterVariant::none) return in.video;
    const std::int64_t d = cfg.d_model, L = in.video.rows();
    const int heads = static_cast<int>(cfg.n_heads);
    if (!in.mask || static_cast<std::int64_t>(in.mask->size()) != L)
        throw std::invalid_argument("object mask covers " + std::to_string(in.mask ? in.mask->size() : 0) +
                                    " tokens, video has " + std::to_string(L));
    if (static_cast<std::int64_t>(in.video_index.size()) != L) throw std::invalid_argument("video index size mismatch");
    if (in.object.rows() != in.object_rows * in.object_cols)
        throw std::invalid_argument("object tokens must form a single frame");
    const std::string p = hoi_prefix(layer);

    Var cond = ag::add(apply_linear(store, p + "sem_proj", in.object_sem), in.temb);
    Var mod = apply_linear(store, p + "mod2", ag::silu(apply_linear(store, p + "mod1", ag::silu(cond))));
    Var shift = ag::slice_cols(mod, 0, d), scale = ag::slice_cols(mod, d, 2 * d), gate = ag::slice_cols(mod, 2 * d, 3 * d);

    Var qkv_v = apply_linear(store, p + "img_qkv", backbone::modulate(in.video, shift, scale));
    Var qkv_o = apply_linear(store, p + "obj_qkv", backbone::modulate(in.object, shift, scale));
    const auto [vcos, vsin] = backbone::rope_tables(in.video_index, cfg.d_head(), cfg.rope_theta);
    const auto [ocos, osin] =
        backbone::rope_tables(codec::grid_index(1, in.object_rows, in.object_cols, -2), cfg.d_head(), cfg.rope_theta);
    Var q_v = ag::rope(ag::slice_cols(qkv_v, 0, d), vcos, vsin, heads);
    Var k_v = ag::rope(ag::slice_cols(qkv_v, d, 2 * d), vcos, vsin, heads);
    Var v_v = ag::slice_cols(qkv_v, 2 * d, 3 * d);
    Var k_o = ag::rope(ag::slice_cols(qkv_o, d, 2 * d), ocos, osin, heads);
    Var v_o = ag::slice_cols(qkv_o, 2 * d, 3 * d);

    // Only video rows are written back, so only video queries are evaluated.
    Var att = variant == AdapterVariant::self_attn
                  ? ag::attention(q_v, ag::concat_rows({k_v, k_o}), ag::concat_rows({v_v, v_o}), heads)
                  : ag::attention(q_v, k_o, v_o, heads);
    Var update = ag::mul_row(apply_linear(store, p + "img_proj", att), gate);
    return ag::masked_add(in.video, update, in.mask);
}

void attach_audio_adapters(ParameterStore& store, const backbone::BackboneConfig& cfg,
                           const std::vector<std::int64_t>& layers, std::int64_t audio_dim, Rng& rng) {
    const std::int64_t d = cfg.d_model;
    for (auto layer : layers) {
        if (layer < 0 || layer >= cfg.n_layers)
            throw std::invalid_argument("adapter layer " + std::to_string(layer) + " outside the backbone");
        if (has_audio_adapter(store, layer))
            throw std::invalid_argument("audio adapter already attached at layer " + std::to_string(layer));
    }
    if (!store.contains("audio_proj.fc1.w")) {
        add_linear(store, "audio_proj.fc1", audio_dim, d, rng);
        add_linear(store, "audio_proj.fc2", d, d, rng);
    }
    for (auto layer : layers) {
        const std::string p = audio_prefix(layer);
        add_linear(store, p + "q", d, d, rng);
        add_linear(store, p + "k", d, d, rng);
        add_linear(store, p + "v", d, d, rng, true);
    }
}

Array audio_window_means(const Array& features) {
    if (features.rank() != 2) throw std::invalid_argument("audio features must be [n, dim]");
    const std::int64_t n = features.dim(0), a = features.dim(1), f = latent_frame_count(n);
    Array out(Shape{f, a});
    for (std::int64_t j = 0; j < f; ++j) {
        const auto [lo, hi] = latent_window(j);
        for (std::int64_t i = lo; i <= hi; ++i)
            for (std::int64_t k = 0; k < a; ++k) out[j * a + k] += features[i * a + k];
        for (std::int64_t k = 0; k < a; ++k) out[j * a + k] /= static_cast<double>(hi - lo + 1);
    }
    return out;
}

Var project_audio_windows(const ParameterStore& store, const Array& means) {
    const auto& w = store.get("audio_proj.fc1.w").value();
    if (means.rank() != 2 || means.dim(1) != w.dim(0))
        throw std::invalid_argument("audio feature width " + std::to_string(means.dim(-1)) + " != " +
                                    std::to_string(w.dim(0)));
    Var h = ag::silu(apply_linear(store, "audio_proj.fc1", Var::constant(means)));
    return apply_linear(store, "audio_proj.fc2", h);
}

Var project_audio(const ParameterStore& store, const Array& features) {
    return project_audio_windows(store, audio_window_means(features));
}

Var face_cross_attention(const ParameterStore& store, const backbone::BackboneConfig& cfg, std::int64_t layer,
                         const Var& video, const std::vector<codec::TokenIndex>& video_index, const Var& audio_tokens,
                         std::shared_ptr<const std::vector<std::uint8_t>> mask) {
    const std::int64_t L = video.rows(), f = audio_tokens.rows();
    if (!mask || static_cast<std::int64_t>(mask->size()) != L)
        throw std::invalid_argument("face mask does not cover the video tokens");
    if (static_cast<std::int64_t>(video_index.size()) != L) throw std::invalid_argument("video index size mismatch");
    if (audio_tokens.cols() != cfg.d_model) throw std::invalid_argument("audio token width mismatch");
    auto allow = std::make_shared<std::vector<std::uint8_t>>(L * f, 0);
    for (std::int64_t i = 0; i < L; ++i) {
        const std::int64_t fr = video_index[i].frame;
        if (fr < 0 || fr >= f)
            throw std::invalid_argument("video frame " + std::to_string(fr) + " has no audio token (" +
                                        std::to_string(f) + " available)");
        (*allow)[i * f + fr] = 1;
    }
    const std::string p = audio_prefix(layer);
    Var q = apply_linear(store, p + "q", ag::layer_norm(video));
    Var k = apply_linear(store, p + "k", audio_tokens);
    Var v = apply_linear(store, p + "v", audio_tokens);
    Var att = ag::attention(q, k, v, static_cast<int>(cfg.n_heads), allow);
    return ag::masked_add(video, att, mask);
}

}  // namespace homa::adapters
