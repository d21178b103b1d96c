#include "homa/inference.hpp"

#include <cmath>

#include "homa/rng.hpp"
#include "homa/training.hpp"

namespace homa::inference {

Array euler_integrate(const Array& noise, std::int64_t steps, const VelocityFn& v) {
    if (steps < 1) throw std::invalid_argument("sampler needs at least one step");
    Array z = noise;
    const double dt = 1.0 / static_cast<double>(steps);
    for (std::int64_t k = 0; k < steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) * dt;
        Array vel = v(z, t);
        if (vel.numel() != z.numel()) throw std::invalid_argument("velocity shape does not match the latent");
        for (std::int64_t i = 0; i < z.numel(); ++i) z[i] -= dt * vel[i];
        if (!z.all_finite()) throw training::NonFiniteError("non-finite latent at sampler step " + std::to_string(k));
    }
    return z;
}

Array initial_noise(const Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    return rng.normal_array(shape);
}

VelocityFn model_velocity(const model::HomaModel& model, const model::LatentConditions& cond, double guidance) {
    if (guidance == 1.0) return [&model, cond](const Array& z, double t) { return model.predict(z, t, cond); };
    model::LatentConditions uncond = cond;
    uncond.text = Array(Shape{0, model.config().backbone.text_dim});
    return [&model, cond, uncond, guidance](const Array& z, double t) {
        Array c = model.predict(z, t, cond), u = model.predict(z, t, uncond);
        for (std::int64_t i = 0; i < c.numel(); ++i) c[i] = u[i] + guidance * (c[i] - u[i]);
        return c;
    };
}

Array sample(const model::HomaModel& model, const model::LatentConditions& cond, const Shape& latent_shape,
             const SamplerConfig& cfg) {
    return euler_integrate(initial_noise(latent_shape, cfg.seed), cfg.steps, model_velocity(model, cond, cfg.guidance));
}

std::vector<std::pair<std::size_t, double>> SegmentPlan::contributors(std::int64_t frame) const {
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t s = 0; s < windows.size(); ++s)
        if (frame >= windows[s].first && frame < windows[s].second)
            out.emplace_back(s, weights[s][frame - windows[s].first]);
    return out;
}

SegmentPlan plan_segments(std::int64_t f_total, std::int64_t segment_len, std::int64_t overlap) {
    if (f_total < 1) throw std::invalid_argument("nothing to plan: f_total < 1");
    if (!(segment_len > overlap && overlap >= 1))
        throw std::invalid_argument("segment plan needs segment_len > overlap >= 1");
    SegmentPlan plan;
    plan.total = f_total;
    plan.segment_len = segment_len;
    plan.overlap = overlap;
    if (f_total <= segment_len) {
        plan.windows.emplace_back(0, f_total);
    } else {
        const std::int64_t stride = segment_len - overlap;
        for (std::int64_t b = 0;; b += stride) {
            if (b + segment_len >= f_total) {
                plan.windows.emplace_back(f_total - segment_len, f_total);
                break;
            }
            plan.windows.emplace_back(b, b + segment_len);
        }
    }
    std::vector<std::vector<double>> raw;
    for (auto [b, e] : plan.windows) {
        const std::int64_t len = e - b;
        std::vector<double> w(len);
        for (std::int64_t k = 0; k < len; ++k) w[k] = static_cast<double>(std::min(k + 1, len - k));
        raw.push_back(std::move(w));
    }
    plan.weights.assign(plan.windows.size(), {});
    for (std::size_t s = 0; s < plan.windows.size(); ++s) plan.weights[s].assign(raw[s].size(), 0.0);
    for (std::int64_t g = 0; g < f_total; ++g) {
        std::vector<std::size_t> cover;
        double sum = 0.0;
        for (std::size_t s = 0; s < plan.windows.size(); ++s)
            if (g >= plan.windows[s].first && g < plan.windows[s].second) {
                cover.push_back(s);
                sum += raw[s][g - plan.windows[s].first];
            }
        double assigned = 0.0;
        for (std::size_t i = 0; i < cover.size(); ++i) {
            const std::size_t s = cover[i];
            const std::int64_t k = g - plan.windows[s].first;
            const double w = i + 1 == cover.size() ? 1.0 - assigned : raw[s][k] / sum;
            plan.weights[s][k] = w;
            assigned += w;
        }
    }
    return plan;
}

Array blend_segments(const SegmentPlan& plan, const std::vector<Array>& segments) {
    if (segments.size() != plan.windows.size())
        throw std::invalid_argument("got " + std::to_string(segments.size()) + " segments for a plan of " +
                                    std::to_string(plan.windows.size()));
    const Array& first = segments.front();
    if (first.rank() != 5) throw std::invalid_argument("segment latents must be [b,f,h,w,c]");
    const std::int64_t b = first.dim(0), cell = first.dim(2) * first.dim(3) * first.dim(4);
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const auto& a = segments[s];
        if (a.rank() != 5 || a.dim(0) != b || a.dim(1) != plan.windows[s].second - plan.windows[s].first ||
            a.dim(2) * a.dim(3) * a.dim(4) != cell)
            throw std::invalid_argument("segment " + std::to_string(s) + " shape " + shape_str(a.shape()) +
                                        " does not match its window");
    }
    Array out(Shape{b, plan.total, first.dim(2), first.dim(3), first.dim(4)});
    for (std::int64_t g = 0; g < plan.total; ++g) {
        const auto contrib = plan.contributors(g);
        for (std::int64_t bi = 0; bi < b; ++bi) {
            double* dst = out.ptr() + (bi * plan.total + g) * cell;
            if (contrib.size() == 1) {
                // Frames owned by one window are copied, not rescaled.
                const auto s = contrib[0].first;
                const std::int64_t len = segments[s].dim(1), k = g - plan.windows[s].first;
                std::copy_n(segments[s].ptr() + (bi * len + k) * cell, cell, dst);
                continue;
            }
            for (auto [s, w] : contrib) {
                const std::int64_t len = segments[s].dim(1), k = g - plan.windows[s].first;
                const double* src = segments[s].ptr() + (bi * len + k) * cell;
                for (std::int64_t i = 0; i < cell; ++i) dst[i] += w * src[i];
            }
        }
    }
    return out;
}

Array long_video_sample(const model::HomaModel& model, const model::LatentConditions& cond, const Shape& latent_shape,
                        const SegmentPlan& plan, const SamplerConfig& cfg, BlendMode mode) {
    if (latent_shape.size() != 5 || latent_shape[1] != plan.total)
        throw std::invalid_argument("plan covers " + std::to_string(plan.total) + " latent frames, latent shape is " +
                                    shape_str(latent_shape));
    if (!cond.pose.empty() && cond.pose.dim(1) != plan.total)
        throw std::invalid_argument("conditions cover " + std::to_string(cond.pose.dim(1)) + " latent frames, plan " +
                                    std::to_string(plan.total));
    if (cond.has_object() && cond.paste.frames() != plan.total)
        throw std::invalid_argument("object trajectory does not cover the plan");
    if (cfg.steps < 1) throw std::invalid_argument("sampler needs at least one step");

    std::vector<model::LatentConditions> seg_cond;
    std::vector<VelocityFn> fields;
    for (auto [b, e] : plan.windows) seg_cond.push_back(cond.slice(b, e));
    for (const auto& c : seg_cond) fields.push_back(model_velocity(model, c, cfg.guidance));

    Array z = initial_noise(latent_shape, cfg.seed);
    const double dt = 1.0 / static_cast<double>(cfg.steps);
    std::vector<Array> segs;
    for (auto [b, e] : plan.windows) segs.push_back(slice_axis1(z, b, e));
    for (std::int64_t k = 0; k < cfg.steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) * dt;
        for (std::size_t s = 0; s < segs.size(); ++s) {
            Array v = fields[s](segs[s], t);
            for (std::int64_t i = 0; i < v.numel(); ++i) segs[s][i] -= dt * v[i];
            if (!segs[s].all_finite())
                throw training::NonFiniteError("non-finite latent at sampler step " + std::to_string(k) + ", segment " +
                                               std::to_string(s));
        }
        if (mode == BlendMode::per_step && segs.size() > 1) {
            z = blend_segments(plan, segs);
            for (std::size_t s = 0; s < segs.size(); ++s)
                segs[s] = slice_axis1(z, plan.windows[s].first, plan.windows[s].second);
        }
    }
    return blend_segments(plan, segs);
}

GenerateResult generate(const codec::VideoCodec& codec, const model::HomaModel& model,
                        const conditions::ConditionClip& clip, const Frame& human, const Frame* object,
                        const Array* audio_features, conditions::Resolution res, const GenerateOptions& opt) {
    auto cond = model::encode_conditions(codec, model.config(), clip, human, object, audio_features, res, opt.switches);
    const auto& bb = model.config().backbone;
    const Shape shape{1, latent_frame_count(clip.n()), res.height / kSpatialFactor, res.width / kSpatialFactor,
                      bb.latent_channels};
    GenerateResult out;
    out.plan = plan_segments(shape[1], opt.segment_len, opt.overlap);
    out.latent = long_video_sample(model, cond, shape, out.plan, opt.sampler, opt.blend);
    out.video = tensor_to_video(codec.decode(out.latent));
    return out;
}

}  // namespace homa::inference
