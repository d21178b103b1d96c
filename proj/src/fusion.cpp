#include "homa/fusion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "homa/geometry.hpp"

namespace homa::fusion {

using ag::Var;

Rect PasteSpec::placement(std::int64_t j) const {
    const auto [cr, cc] = centers.at(j);
    const std::int64_t top = cr - h_p / 2, left = cc - w_p / 2;
    return {top, left, top + h_p, left + w_p};
}

Rect PasteSpec::rect(std::int64_t j, std::int64_t h, std::int64_t w) const {
    if (j < start_frame) return {};
    Rect r = placement(j);
    r.top = std::clamp<std::int64_t>(r.top, 0, h);
    r.bottom = std::clamp<std::int64_t>(r.bottom, 0, h);
    r.left = std::clamp<std::int64_t>(r.left, 0, w);
    r.right = std::clamp<std::int64_t>(r.right, 0, w);
    return r.empty() ? Rect{} : r;
}

PasteSpec PasteSpec::slice(std::int64_t begin, std::int64_t end) const {
    if (begin < 0 || end > frames() || begin >= end) throw std::out_of_range("paste spec slice out of range");
    PasteSpec s = *this;
    s.centers.assign(centers.begin() + begin, centers.begin() + end);
    s.start_frame = std::max<std::int64_t>(0, start_frame - begin);
    return s;
}

PasteSpec make_paste_spec(const conditions::ConditionClip& clip, conditions::Resolution res, bool fix_copy,
                          std::int64_t start_frame) {
    if (res.height % kSpatialFactor != 0 || res.width % kSpatialFactor != 0)
        throw std::invalid_argument("resolution not divisible by the codec spatial factor");
    const std::int64_t h = res.height / kSpatialFactor, w = res.width / kSpatialFactor;
    const std::int64_t f = latent_frame_count(clip.n());
    PasteSpec spec;
    spec.h_p = std::lround(clip.paste_h * static_cast<double>(h));
    spec.w_p = std::lround(clip.paste_w * static_cast<double>(w));
    if (spec.h_p < 1 || spec.w_p < 1)
        throw std::invalid_argument("object paste size " + std::to_string(clip.paste_w) + "x" +
                                    std::to_string(clip.paste_h) + " rounds below one latent cell");
    spec.start_frame = start_frame;
    for (std::int64_t j = 0; j < f; ++j) {
        if (fix_copy) {
            spec.centers.emplace_back(h / 2, w / 2);
            continue;
        }
        const auto& s = clip.object_motion.frames.at(latent_window(j).first);
        const double py = s.cy * static_cast<double>(res.height - 1), px = s.cx * static_cast<double>(res.width - 1);
        spec.centers.emplace_back(std::lround(py / kSpatialFactor), std::lround(px / kSpatialFactor));
    }
    return spec;
}

Array resize_latent_bilinear(const Array& z, std::int64_t h2, std::int64_t w2) {
    if (z.rank() != 3) throw std::invalid_argument("resize_latent_bilinear expects [h,w,c]");
    if (h2 < 1 || w2 < 1) throw std::invalid_argument("resize target must be at least 1x1");
    const std::int64_t h = z.dim(0), w = z.dim(1), c = z.dim(2);
    Array out(Shape{h2, w2, c});
    const double sy = static_cast<double>(h) / h2, sx = static_cast<double>(w) / w2;
    for (std::int64_t r = 0; r < h2; ++r) {
        const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const auto y0 = static_cast<std::int64_t>(y);
        const std::int64_t y1 = std::min(y0 + 1, h - 1);
        const double fy = y - y0;
        for (std::int64_t col = 0; col < w2; ++col) {
            const double x = std::clamp((col + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const auto x0 = static_cast<std::int64_t>(x);
            const std::int64_t x1 = std::min(x0 + 1, w - 1);
            const double fx = x - x0;
            for (std::int64_t k = 0; k < c; ++k)
                out[(r * w2 + col) * c + k] = (1 - fy) * ((1 - fx) * z[(y0 * w + x0) * c + k] + fx * z[(y0 * w + x1) * c + k]) +
                                              fy * ((1 - fx) * z[(y1 * w + x0) * c + k] + fx * z[(y1 * w + x1) * c + k]);
        }
    }
    return out;
}

Array paste_object_along_trajectory(const Array& z_obj, const PasteSpec& spec, std::int64_t f, std::int64_t h,
                                    std::int64_t w) {
    if (z_obj.rank() != 5 || z_obj.dim(1) != 1)
        throw std::invalid_argument("object latent must be [b,1,h,w,c], got " + shape_str(z_obj.shape()));
    if (spec.frames() != f) throw std::invalid_argument("paste spec covers " + std::to_string(spec.frames()) +
                                                        " frames, latent has " + std::to_string(f));
    if (spec.h_p < 1 || spec.w_p < 1) throw std::invalid_argument("degenerate paste size");
    const std::int64_t b = z_obj.dim(0), c = z_obj.dim(4);
    Array out(Shape{b, f, h, w, c});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        Array item = take_batch(z_obj, bi).reshaped({z_obj.dim(2), z_obj.dim(3), c});
        Array small = resize_latent_bilinear(item, spec.h_p, spec.w_p);
        for (std::int64_t j = 0; j < f; ++j) {
            const Rect r = spec.rect(j, h, w);
            if (r.empty()) continue;
            const Rect full = spec.placement(j);
            for (std::int64_t y = r.top; y < r.bottom; ++y)
                for (std::int64_t x = r.left; x < r.right; ++x)
                    std::copy_n(small.ptr() + ((y - full.top) * spec.w_p + (x - full.left)) * c, c,
                                out.ptr() + (((bi * f + j) * h + y) * w + x) * c);
        }
    }
    return out;
}

Array channel_concat_appearance(const Array& z, const Array& z_ref, const Array& z_objd) {
    if (z.rank() != 5) throw std::invalid_argument("Z must be [b,f,h,w,c]");
    const std::int64_t b = z.dim(0), f = z.dim(1), h = z.dim(2), w = z.dim(3), c = z.dim(4);
    auto check = [&](const Array& a, const char* name, bool allow_single) {
        if (a.rank() != 5 || a.dim(0) != b || a.dim(2) != h || a.dim(3) != w || a.dim(4) != c ||
            !(a.dim(1) == f || (allow_single && a.dim(1) == 1)))
            throw std::invalid_argument(std::string(name) + " shape " + shape_str(a.shape()) + " incompatible with Z " +
                                        shape_str(z.shape()));
    };
    check(z_ref, "Z_ref", true);
    check(z_objd, "Z_obj|D", false);
    Array out(Shape{b, f, h, w, 3 * c});
    const std::int64_t cells = h * w;
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t j = 0; j < f; ++j)
            for (std::int64_t p = 0; p < cells; ++p) {
                const std::int64_t row = (bi * f + j) * cells + p;
                const std::int64_t ref_row = (bi * z_ref.dim(1) + (z_ref.dim(1) == 1 ? 0 : j)) * cells + p;
                double* o = out.ptr() + row * 3 * c;
                std::copy_n(z.ptr() + row * c, c, o);
                std::copy_n(z_ref.ptr() + ref_row * c, c, o + c);
                std::copy_n(z_objd.ptr() + row * c, c, o + 2 * c);
            }
    return out;
}

AppearanceParts split_appearance(const Array& z_cat, std::int64_t c) {
    if (z_cat.dim(-1) != 3 * c) throw std::invalid_argument("channel count is not 3c");
    return {slice_last(z_cat, 0, c), slice_last(z_cat, c, 2 * c), slice_last(z_cat, 2 * c, 3 * c)};
}

codec::TokenGrid token_temporal_concat(const codec::TokenGrid& h, const codec::TokenGrid& h_obj, bool use) {
    if (!use) return h;
    if (h_obj.frames != 1) throw std::invalid_argument("object token grid must have exactly one frame");
    if (h_obj.rows != h.rows || h_obj.cols != h.cols || h_obj.data.dim(0) != h.data.dim(0) ||
        h_obj.data.dim(2) != h.data.dim(2))
        throw std::invalid_argument("object token grid geometry does not match the video tokens");
    codec::TokenGrid out;
    out.frames = h.frames + 1;
    out.rows = h.rows;
    out.cols = h.cols;
    out.frame_offset = h.frame_offset - 1;
    out.index = codec::grid_index(1, h.rows, h.cols, -1);
    out.index.insert(out.index.end(), h.index.begin(), h.index.end());
    const std::int64_t b = h.data.dim(0), d = h.data.dim(2), lo = h_obj.length(), lv = h.length();
    out.data = Array(Shape{b, lo + lv, d});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        std::copy_n(h_obj.data.ptr() + bi * lo * d, lo * d, out.data.ptr() + bi * (lo + lv) * d);
        std::copy_n(h.data.ptr() + bi * lv * d, lv * d, out.data.ptr() + (bi * (lo + lv) + lo) * d);
    }
    return out;
}

void add_conv3x3(ParameterStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, Rng& rng,
                 bool zero) {
    add_linear(store, prefix, 9 * in, out, rng, zero);
}

Var conv3x3(const ParameterStore& store, const std::string& prefix, const Var& rows, std::int64_t f, std::int64_t h,
            std::int64_t w) {
    if (rows.rows() != f * h * w) throw std::invalid_argument("conv3x3: row count does not match f*h*w");
    std::vector<Var> taps;
    taps.reserve(9);
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) taps.push_back(ag::gather_rows(rows, codec::neighbour_index(f, h, w, dy, dx)));
    return apply_linear(store, prefix, ag::concat_cols(taps));
}

Var motion_fuse(const ParameterStore& store, const Var& z_cat, const Array& pose, const Array& traj, std::int64_t f,
                std::int64_t h, std::int64_t w, bool single_motion_encoder) {
    Var z = z_cat;
    auto branch = [&](const Array& lat, const std::string& prefix) {
        if (lat.empty()) return;
        if (lat.numel() * 3 != z_cat.value().numel())
            throw std::invalid_argument("motion latent " + shape_str(lat.shape()) + " does not match Z_cat");
        Var rows = Var::constant(lat.reshaped({f * h * w, lat.dim(-1)}));
        z = ag::add(z, conv3x3(store, prefix, rows, f, h, w));
    };
    branch(pose, "motion.pose");
    if (!single_motion_encoder) branch(traj, "motion.traj");
    return z;
}

Array PooledColorEncoder::features(const Frame& image) const {
    Array out(Shape{1, 48});
    std::array<double, 48> sum{};
    std::array<std::int64_t, 16> count{};
    for (std::int64_t r = 0; r < image.height; ++r)
        for (std::int64_t c = 0; c < image.width; ++c) {
            const std::int64_t cell = (r * 4 / image.height) * 4 + c * 4 / image.width;
            ++count[cell];
            for (int ch = 0; ch < 3; ++ch) sum[cell * 3 + ch] += image.px(r, c)[ch];
        }
    for (int i = 0; i < 48; ++i) out[i] = count[i / 3] ? sum[i] / count[i / 3] / 127.5 - 1.0 : 0.0;
    return out;
}

Array text_token_embeddings(const std::string& text, std::int64_t dim, std::int64_t max_tokens) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text + " ") {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (static_cast<std::int64_t>(words.size()) > max_tokens) words.resize(max_tokens);
    Array out(Shape{static_cast<std::int64_t>(words.size()), dim});
    for (std::size_t i = 0; i < words.size(); ++i) {
        std::uint64_t hash = 1469598103934665603ULL;
        for (unsigned char ch : words[i]) hash = (hash ^ ch) * 1099511628211ULL;
        Rng rng(hash);
        for (std::int64_t k = 0; k < dim; ++k) out[static_cast<std::int64_t>(i) * dim + k] = rng.normal();
    }
    return out;
}

Var semantic_token_fusion(const Var& text, const Var& human_sem, const Var& object_sem) {
    std::vector<Var> parts;
    for (const Var* v : {&text, &human_sem, &object_sem})
        if (v->defined() && v->value().numel() > 0) parts.push_back(*v);
    if (parts.empty()) throw std::invalid_argument("text branch would be empty");
    return parts.size() == 1 ? parts[0] : ag::concat_rows(parts);
}

}  // namespace homa::fusion
