#pragma once

#include <memory>
#include <string>
#include <vector>

#include "homa/autograd.hpp"
#include "homa/backbone.hpp"
#include "homa/conditions.hpp"
#include "homa/fusion.hpp"
#include "homa/params.hpp"

namespace homa::adapters {

/// Binary mask over a token grid [frames, rows, cols].
struct MaskVolume {
    std::int64_t frames = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> values;

    MaskVolume() = default;
    MaskVolume(std::int64_t f, std::int64_t r, std::int64_t c) : frames(f), rows(r), cols(c), values(f * r * c, 0) {}
    std::uint8_t& at(std::int64_t f, std::int64_t r, std::int64_t c) { return values[(f * rows + r) * cols + c]; }
    std::uint8_t at(std::int64_t f, std::int64_t r, std::int64_t c) const { return values[(f * rows + r) * cols + c]; }
    std::int64_t count() const;
    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    MaskVolume slice_frames(std::int64_t begin, std::int64_t end) const;
    /// Row mask for masked_add, optionally preceded by `leading_zeros` unmasked rows.
    std::shared_ptr<const std::vector<std::uint8_t>> rows_mask(std::int64_t leading_zeros = 0) const;
};

/// Token (f, r, c) is set iff its latent patch intersects frame f's paste
/// rectangle, then dilated by `dilation` tokens (Chebyshev).
MaskVolume build_object_mask(const fusion::PasteSpec& spec, std::int64_t h, std::int64_t w, std::int64_t patch,
                             std::int64_t dilation = 1);

/// Token is set iff its patch (in normalized image coordinates) intersects the
/// face box of that latent frame.
MaskVolume build_face_mask(const std::vector<conditions::Box>& latent_boxes, std::int64_t h, std::int64_t w,
                           std::int64_t patch);
/// Face box per latent frame: the box of the first pixel frame of its window.
std::vector<conditions::Box> latent_face_boxes(const std::vector<conditions::Box>& pixel_boxes);

enum class AdapterVariant { self_attn, cross_attn, none };
std::string variant_name(AdapterVariant v);
AdapterVariant parse_variant(const std::string& s);

/// Even layers 0, 2, 4, ... below n_layers.
std::vector<std::int64_t> even_layers(std::int64_t n_layers);

inline std::string hoi_prefix(std::int64_t layer) { return "adapters.hoi." + std::to_string(layer) + "."; }
inline std::string audio_prefix(std::int64_t layer) { return "adapters.audio." + std::to_string(layer) + "."; }

/// Clone the host layer's image-stream attention weights (video tokens) and
/// text-stream qkv (object tokens) into adapter slots, and add the semantic
/// modulation MLP whose last layer starts at zero.
void attach_hoi_adapters(ParameterStore& store, const backbone::BackboneConfig& cfg,
                         const std::vector<std::int64_t>& layers, Rng& rng);
bool has_hoi_adapter(const ParameterStore& store, std::int64_t layer);

struct HoiInputs {
    const ag::Var& video;  // [L, d]
    const std::vector<codec::TokenIndex>& video_index;
    const ag::Var& object;  // [Lo, d], one token frame
    std::int64_t object_rows, object_cols;
    std::shared_ptr<const std::vector<std::uint8_t>> mask;  // one entry per video token
    const ag::Var& object_sem;  // [1, text_dim]
    const ag::Var& temb;        // [1, d]
};

/// H + mask * gate * Proj(Attn(video queries; [video, object + RoPE(-2)] keys)).
ag::Var hoi_adapter_forward(const ParameterStore& store, const backbone::BackboneConfig& cfg, std::int64_t layer,
                            const HoiInputs& in, AdapterVariant variant);

void attach_audio_adapters(ParameterStore& store, const backbone::BackboneConfig& cfg,
                           const std::vector<std::int64_t>& layers, std::int64_t audio_dim, Rng& rng);
bool has_audio_adapter(const ParameterStore& store, std::int64_t layer);

/// Window means of per-frame features [n, a] -> [f, a].
Array audio_window_means(const Array& features);
/// Two-layer projection of window means to per-latent-frame tokens [f, d].
ag::Var project_audio_windows(const ParameterStore& store, const Array& window_means);
ag::Var project_audio(const ParameterStore& store, const Array& features);

/// Frame-diagonal cross attention from video tokens to their latent frame's
/// audio token, written back inside the face mask.
ag::Var face_cross_attention(const ParameterStore& store, const backbone::BackboneConfig& cfg, std::int64_t layer,
                             const ag::Var& video, const std::vector<codec::TokenIndex>& video_index,
                             const ag::Var& audio_tokens, std::shared_ptr<const std::vector<std::uint8_t>> mask);

}  // namespace homa::adapters
