#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "homa/codec.hpp"
#include "homa/model.hpp"

namespace homa::inference {

struct SamplerConfig {
    std::int64_t steps = 50;
    std::uint64_t seed = 0;
    /// Text guidance scale; 1 disables the unconditional pass.
    double guidance = 1.0;
};

/// Velocity field v(z, t).
using VelocityFn = std::function<Array(const Array& z, double t)>;

/// Explicit Euler from t = 1 to t = 0 over `steps` uniform steps:
/// z <- z - (1/T) v(z, t_k), t_k = 1 - k/T. Throws on a non-finite state.
Array euler_integrate(const Array& noise, std::int64_t steps, const VelocityFn& v);

/// Standard normal latent of the given shape from a seed.
Array initial_noise(const Shape& shape, std::uint64_t seed);

/// Velocity of the model, with optional text guidance.
VelocityFn model_velocity(const model::HomaModel& model, const model::LatentConditions& cond, double guidance);

/// Single-window sampling of a [1,f,h,w,c] latent.
Array sample(const model::HomaModel& model, const model::LatentConditions& cond, const Shape& latent_shape,
             const SamplerConfig& cfg);

struct SegmentPlan {
    std::int64_t total = 0;
    std::int64_t segment_len = 0;
    std::int64_t overlap = 0;
    /// Latent-frame windows [begin, end).
    std::vector<std::pair<std::int64_t, std::int64_t>> windows;
    /// weights[s][k]: blend weight of local frame k of window s.
    std::vector<std::vector<double>> weights;

    /// Windows covering a global frame, with their weights.
    std::vector<std::pair<std::size_t, double>> contributors(std::int64_t frame) const;
};

/// Stride segment_len - overlap, last window right-aligned. Raw weight of local
/// frame k in a window of length L is min(k + 1, L - k); per global frame the
/// weights are normalized, the last contributor taking the remainder so they
/// sum to exactly 1.
SegmentPlan plan_segments(std::int64_t f_total, std::int64_t segment_len, std::int64_t overlap);

/// Merge per-window latents [b, len_s, h, w, c] into [b, total, h, w, c].
Array blend_segments(const SegmentPlan& plan, const std::vector<Array>& segments);

enum class BlendMode { per_step, final_merge };

/// Denoise overlapping windows with their sliced conditions, fusing overlapping
/// latent frames after every step (or once at the end).
Array long_video_sample(const model::HomaModel& model, const model::LatentConditions& cond, const Shape& latent_shape,
                        const SegmentPlan& plan, const SamplerConfig& cfg, BlendMode mode = BlendMode::per_step);

struct GenerateOptions {
    SamplerConfig sampler;
    std::int64_t segment_len = 6;
    std::int64_t overlap = 2;
    BlendMode blend = BlendMode::per_step;
    model::ConditionSwitches switches;
};

struct GenerateResult {
    Video video;
    Array latent;
    SegmentPlan plan;
};

/// Encode the conditions, sample (segmented when longer than one window) and decode.
GenerateResult generate(const codec::VideoCodec& codec, const model::HomaModel& model,
                        const conditions::ConditionClip& clip, const Frame& human, const Frame* object,
                        const Array* audio_features, conditions::Resolution res, const GenerateOptions& opt);

}  // namespace homa::inference
