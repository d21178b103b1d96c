#pragma once

#include <memory>
#include <string>
#include <vector>

#include "homa/autograd.hpp"
#include "homa/codec.hpp"
#include "homa/conditions.hpp"
#include "homa/params.hpp"

namespace homa::fusion {

struct AblationFlags {
    bool use_token_concat = true;
    bool use_channel_paste = true;
    bool fix_copy = false;
    bool single_motion_encoder = false;
};

/// Inclusive-exclusive latent-cell rectangle.
struct Rect {
    std::int64_t top = 0, left = 0, bottom = 0, right = 0;
    bool empty() const { return bottom <= top || right <= left; }
    std::int64_t area() const { return empty() ? 0 : (bottom - top) * (right - left); }
};

/// Per-latent-frame paste centre (latent row, col) plus the paste size.
struct PasteSpec {
    std::vector<std::pair<std::int64_t, std::int64_t>> centers;
    std::int64_t h_p = 1, w_p = 1;
    /// Latent frames before this index carry no object.
    std::int64_t start_frame = 0;

    std::int64_t frames() const { return static_cast<std::int64_t>(centers.size()); }
    /// Unclipped placement for latent frame j.
    Rect placement(std::int64_t j) const;
    /// Placement clipped to an h x w latent; empty before start_frame.
    Rect rect(std::int64_t j, std::int64_t h, std::int64_t w) const;
    PasteSpec slice(std::int64_t begin, std::int64_t end) const;
};

/// Centres from the object track: each latent frame uses the first pixel
/// frame of its temporal window, pixel position / 8 rounded. fix_copy pins
/// the centre to the latent grid midpoint.
PasteSpec make_paste_spec(const conditions::ConditionClip& clip, conditions::Resolution res, bool fix_copy = false,
                          std::int64_t start_frame = 0);

/// Bilinear resize of a [h, w, c] latent.
Array resize_latent_bilinear(const Array& z, std::int64_t h2, std::int64_t w2);

/// Z_obj [b,1,h_o,w_o,c] resized to the paste size and placed per frame -> [b,f,h,w,c].
Array paste_object_along_trajectory(const Array& z_obj, const PasteSpec& spec, std::int64_t f, std::int64_t h,
                                    std::int64_t w);

/// concat over channels of (Z, Z_ref, Z_objD). Z_ref with a single frame is
/// repeated over all frames.
Array channel_concat_appearance(const Array& z, const Array& z_ref, const Array& z_objd);
struct AppearanceParts {
    Array z, z_ref, z_objd;
};
AppearanceParts split_appearance(const Array& z_cat, std::int64_t c);

/// Prepend a single-frame object token grid at frame index -1.
codec::TokenGrid token_temporal_concat(const codec::TokenGrid& h, const codec::TokenGrid& h_obj, bool use_token_concat);

/// One-layer 3x3 convolution encoders for the motion branch (c -> 3c).
void add_conv3x3(ParameterStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, Rng& rng,
                 bool zero);
/// rows [f*h*w, in] -> [f*h*w, out], zero padding, applied per frame.
ag::Var conv3x3(const ParameterStore& store, const std::string& prefix, const ag::Var& rows, std::int64_t f,
                std::int64_t h, std::int64_t w);

/// Z = Z_cat + E_pose(pose) + E_traj(traj). Empty inputs skip their branch.
/// With single_motion_encoder only `pose` (holding the composite) is used.
ag::Var motion_fuse(const ParameterStore& store, const ag::Var& z_cat, const Array& pose, const Array& traj,
                    std::int64_t f, std::int64_t h, std::int64_t w, bool single_motion_encoder);

/// Pluggable image summarizer standing in for a multimodal captioner.
class ImageSemanticEncoder {
public:
    virtual ~ImageSemanticEncoder() = default;
    virtual std::int64_t feature_dim() const = 0;
    /// [1, feature_dim]
    virtual Array features(const Frame& image) const = 0;
};

/// Mean colour over a 4x4 grid of cells (48 values in [-1,1]).
class PooledColorEncoder final : public ImageSemanticEncoder {
public:
    std::int64_t feature_dim() const override { return 48; }
    Array features(const Frame& image) const override;
};

/// Frozen hashed word embeddings [n_words, dim] (at most max_tokens words).
Array text_token_embeddings(const std::string& text, std::int64_t dim, std::int64_t max_tokens = 16);

/// [text; human_sem; object_sem]; empty parts (zero rows or undefined) are skipped.
ag::Var semantic_token_fusion(const ag::Var& text, const ag::Var& human_sem, const ag::Var& object_sem);

}  // namespace homa::fusion
