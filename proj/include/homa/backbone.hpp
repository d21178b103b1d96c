#pragma once

#include <nlohmann/json_fwd.hpp>
#include <vector>

#include "homa/autograd.hpp"
#include "homa/codec.hpp"
#include "homa/params.hpp"

namespace homa::backbone {

struct BackboneConfig {
    std::int64_t d_model = 128;
    std::int64_t n_heads = 4;
    std::int64_t n_layers = 8;
    std::int64_t patch_size = 2;
    std::int64_t text_dim = 64;
    std::int64_t latent_channels = 8;
    std::int64_t max_frames = 64;
    std::int64_t mlp_ratio = 4;
    double rope_theta = 10000.0;

    std::int64_t d_head() const { return d_model / n_heads; }
    /// Latent channels entering the patch embedding (video, reference, pasted object).
    std::int64_t in_channels() const { return 3 * latent_channels; }
    std::int64_t patch_dim() const { return patch_size * patch_size * in_channels(); }
    std::int64_t out_dim() const { return patch_size * patch_size * latent_channels; }
    void validate() const;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

inline constexpr std::int64_t kTimeFeatures = 256;

/// Channel-pair split of one head across (frame, row, col), 2:1:1.
struct RopeSplit {
    std::int64_t frame, row, col;
};
RopeSplit rope_split(std::int64_t d_head);
/// Rotation angle for every channel pair of a head at this index.
std::vector<double> rope_phases(const codec::TokenIndex& idx, std::int64_t d_head, double theta);
/// cos/sin tables [L, d_head/2] for a token sequence.
std::pair<Array, Array> rope_tables(const std::vector<codec::TokenIndex>& idx, std::int64_t d_head, double theta);

/// Sinusoidal features of t * 1000; t must lie in [0, 1].
Array timestep_features(double t);
/// features -> Linear -> SiLU -> Linear, as a [1, d_model] row.
ag::Var timestep_embed(const ParameterStore& store, double t);

void init_backbone(ParameterStore& store, const BackboneConfig& cfg, Rng& rng);
/// Closed-form count of the scalars created by init_backbone.
std::int64_t backbone_parameter_count(const BackboneConfig& cfg);

struct Streams {
    ag::Var img, txt;
};

/// One double-stream block: per-stream modulated LayerNorm, joint attention
/// over [img; txt] with rotary phases on the image stream, gated residuals.
Streams double_stream_block(const ParameterStore& store, const BackboneConfig& cfg, std::int64_t layer,
                            const Streams& in, const ag::Var& vec, const Array& rope_cos, const Array& rope_sin);

/// Modulated LayerNorm and projection of video tokens to per-patch velocity.
ag::Var final_layer(const ParameterStore& store, const ag::Var& img, const ag::Var& vec);

/// Shift/scale/gate modulation helpers shared with the adapters.
ag::Var modulate(const ag::Var& x, const ag::Var& shift, const ag::Var& scale);

}  // namespace homa::backbone
