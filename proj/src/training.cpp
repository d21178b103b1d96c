#include "homa/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "homa/fusion.hpp"

namespace homa::training {

using ag::Var;

Array interpolate_path(const Array& z0, const Array& noise, double t) {
    if (z0.shape() != noise.shape()) throw std::invalid_argument("noise must be shaped like Z0");
    Array out(z0.shape());
    for (std::int64_t i = 0; i < z0.numel(); ++i) out[i] = (1.0 - t) * z0[i] + t * noise[i];
    return out;
}

Array target_velocity(const Array& z0, const Array& noise) {
    if (z0.shape() != noise.shape()) throw std::invalid_argument("noise must be shaped like Z0");
    Array out(z0.shape());
    for (std::int64_t i = 0; i < z0.numel(); ++i) out[i] = noise[i] - z0[i];
    return out;
}

Var flow_match_loss(const model::HomaModel& model, const Array& z0, const model::LatentConditions& cond, double t,
                    const Array& noise) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("flow matching t must lie in (0,1), got " + std::to_string(t));
    Var v = model.velocity(interpolate_path(z0, noise, t), t, cond);
    Var loss = ag::mse(v, target_velocity(z0, noise).reshaped(v.shape()));
    if (!v.value().all_finite() || !std::isfinite(loss.value()[0]))
        throw NonFiniteError("non-finite flow loss at t=" + std::to_string(t) + " (|Z0|max=" +
                             std::to_string(z0.max_abs()) + ", |noise|max=" + std::to_string(noise.max_abs()) +
                             ", |v|max=" + std::to_string(v.value().max_abs()) + ")");
    return loss;
}

double sample_timestep(Rng& rng) { return rng.uniform_open(); }

AugmentParams sample_augment(Rng& rng) {
    AugmentParams p;
    p.scale = rng.uniform(0.8, 1.2);
    p.rotation_deg = rng.uniform(-15.0, 15.0);
    p.shift_x = rng.uniform(-0.1, 0.1);
    p.shift_y = rng.uniform(-0.1, 0.1);
    return p;
}

Frame apply_augment(const Frame& image, const AugmentParams& p) {
    if (p.scale == 1.0 && p.rotation_deg == 0.0 && p.shift_x == 0.0 && p.shift_y == 0.0) return image;
    Frame out(image.height, image.width);
    const double cy = (image.height - 1) / 2.0, cx = (image.width - 1) / 2.0;
    const double a = p.rotation_deg * std::numbers::pi / 180.0, ca = std::cos(a), sa = std::sin(a);
    const double ty = p.shift_y * image.height, tx = p.shift_x * image.width;
    for (std::int64_t r = 0; r < image.height; ++r)
        for (std::int64_t c = 0; c < image.width; ++c) {
            // Inverse map: undo the shift, rotation and scale about the centre.
            const double dy = r - cy - ty, dx = c - cx - tx;
            const double sy = (ca * dy - sa * dx) / p.scale + cy, sx = (sa * dy + ca * dx) / p.scale + cx;
            if (sy < -0.5 || sx < -0.5 || sy > image.height - 0.5 || sx > image.width - 0.5) continue;
            const double yy = std::clamp(sy, 0.0, image.height - 1.0), xx = std::clamp(sx, 0.0, image.width - 1.0);
            const auto y0 = static_cast<std::int64_t>(yy), x0 = static_cast<std::int64_t>(xx);
            const std::int64_t y1 = std::min(y0 + 1, image.height - 1), x1 = std::min(x0 + 1, image.width - 1);
            const double fy = yy - y0, fx = xx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                const double v = (1 - fy) * ((1 - fx) * image.px(y0, x0)[ch] + fx * image.px(y0, x1)[ch]) +
                                 fy * ((1 - fx) * image.px(y1, x0)[ch] + fx * image.px(y1, x1)[ch]);
                out.px(r, c)[ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    return out;
}

Frame augment_object(const Frame& image, Rng& rng) { return apply_augment(image, sample_augment(rng)); }

void to_json(nlohmann::json& j, const StageSpec& s) {
    j = {{"name", s.name},
         {"resolution", std::to_string(s.resolution.height) + "x" + std::to_string(s.resolution.width)},
         {"steps", s.steps},
         {"conditions", {{"pose", s.conditions.pose}, {"object", s.conditions.object}, {"audio", s.conditions.audio}}},
         {"lr", s.lr},
         {"batch", s.batch}};
}

void from_json(const nlohmann::json& j, StageSpec& s) {
    s.name = j.at("name").get<std::string>();
    s.resolution = conditions::parse_resolution(j.value("resolution", std::string("64x64")));
    s.steps = j.value("steps", s.steps);
    if (j.contains("conditions")) {
        const auto& c = j.at("conditions");
        s.conditions.pose = c.value("pose", true);
        s.conditions.object = c.value("object", true);
        s.conditions.audio = c.value("audio", true);
    }
    s.lr = j.value("lr", s.lr);
    s.batch = j.value("batch", s.batch);
    if (s.steps <= 0 || s.batch <= 0) throw std::invalid_argument("stage '" + s.name + "': steps and batch must be positive");
    if (s.resolution.height % kSpatialFactor != 0 || s.resolution.width % kSpatialFactor != 0)
        throw std::invalid_argument("stage '" + s.name + "': resolution must be divisible by 8");
}

std::vector<StageSpec> default_schedule(const std::string& profile) {
    std::int64_t s1 = 500, s2 = 200, s3 = 200;
    if (profile == "full") {
        s1 = 16000;
        s2 = 2000;
        s3 = 5000;
    } else if (profile != "ci") {
        throw std::invalid_argument("unknown training profile '" + profile + "' (ci, full)");
    }
    return {{"stage1", {64, 64}, s1, {true, false, false}, 1e-4, 2},
            {"stage2", {64, 64}, s2, {true, true, true}, 1e-4, 2},
            {"stage3", {112, 64}, s3, {true, true, true}, 1e-4, 2}};
}

nlohmann::json to_json(const RunConfig& c) {
    return {{"seed", c.seed},
            {"model", model::to_json(c.model)},
            {"stages", c.stages},
            {"data",
          {{"clips", c.clips}, {"frames", c.frames}, {"seed", c.data_seed}, {"encoding", conditions::encoding_name(c.encoding)}}},
            {"codec_steps", c.codec_steps},
            {"augment_object", c.augment_object},
            {"grad_clip", c.grad_clip}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {"seed",   "model", "stages",         "data", "codec_steps",
                                                   "profile", "augment_object", "grad_clip"};
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw std::invalid_argument("run config: unknown key '" + k + "'");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
    if (j.contains("stages"))
        c.stages = j.at("stages").get<std::vector<StageSpec>>();
    else if (j.contains("profile"))
        c.stages = default_schedule(j.at("profile").get<std::string>());
    if (c.stages.empty()) throw std::invalid_argument("run config: no stages");
    if (j.contains("data")) {
        const auto& d = j.at("data");
        c.clips = d.value("clips", c.clips);
        c.frames = d.value("frames", c.frames);
        c.data_seed = d.value("seed", c.data_seed);
        if (d.contains("encoding")) c.encoding = conditions::parse_encoding(d.at("encoding").get<std::string>());
    }
    latent_frame_count(c.frames);
    if (c.clips <= 0) throw std::invalid_argument("run config: data.clips must be positive");
    c.codec_steps = j.value("codec_steps", c.codec_steps);
    c.augment_object = j.value("augment_object", c.augment_object);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    return c;
}

std::vector<TrainSample> prepare_samples(const codec::VideoCodec& codec, const model::ModelConfig& cfg,
                                         const std::vector<synth::SyntheticClip>& clips, const StageSpec& stage) {
    std::vector<TrainSample> out;
    for (const auto& clip : clips) {
        if (clip.video.empty() || clip.video[0].height != stage.resolution.height ||
            clip.video[0].width != stage.resolution.width)
            throw std::invalid_argument("stage '" + stage.name + "' expects " + std::to_string(stage.resolution.height) +
                                        "x" + std::to_string(stage.resolution.width) + " clips");
        TrainSample s;
        s.clip = clip;
        s.switches = stage.conditions;
        s.resolution = stage.resolution;
        s.z0 = codec.encode(video_to_tensor(clip.video));
        s.cond = model::encode_conditions(codec, cfg, clip.conditions, clip.human_ref, &clip.object_image, &clip.audio,
                                          stage.resolution, stage.conditions);
        out.push_back(std::move(s));
    }
    return out;
}

void begin_hoi_stage(model::HomaModel& model, std::uint64_t seed) {
    model.copy_pose_encoder_to_traj();
    Rng rng(seed ^ 0x5eed0fadab7e5ULL);
    model.attach_adapters(rng);
}

namespace {

model::LatentConditions augmented(const codec::VideoCodec& codec, const TrainSample& s, Rng& rng) {
    model::LatentConditions c = s.cond;
    if (!c.has_object()) return c;
    Frame obj = augment_object(s.clip.object_image, rng);
    const auto& res = s.resolution;
    Frame fit = (obj.height == res.height && obj.width == res.width) ? obj : io::resize_bilinear(obj, res.height, res.width);
    c.z_obj = codec.encode(video_to_tensor({fit}));
    c.object_feat = fusion::PooledColorEncoder().features(obj);
    return c;
}

}  // namespace

StageResult run_stage(const StageSpec& stage, const codec::VideoCodec& codec, const std::vector<TrainSample>& data,
                      model::HomaModel& model, const StageOptions& opt) {
    if (data.empty()) throw std::invalid_argument("stage '" + stage.name + "' has no training data");
    if (opt.stage_index > 0) {
        if (!opt.prior_checkpoint || !std::filesystem::exists(*opt.prior_checkpoint))
            throw std::runtime_error("stage '" + stage.name + "' requires the previous stage checkpoint" +
                                     (opt.prior_checkpoint ? " (" + *opt.prior_checkpoint + " not found)" : ""));
        model = model::HomaModel::load(*opt.prior_checkpoint);
    }
    if (stage.conditions.object && !model.adapters_attached()) begin_hoi_stage(model, opt.seed);

    std::ofstream csv;
    if (opt.loss_csv) {
        const bool fresh = !std::filesystem::exists(*opt.loss_csv);
        csv.open(*opt.loss_csv, std::ios::app);
        if (!csv) throw std::runtime_error("cannot write loss log " + *opt.loss_csv);
        if (fresh) csv << "step,loss,stage\n";
    }

    Adam adam({.lr = stage.lr, .grad_clip = opt.grad_clip});
    Rng rng(opt.seed);
    StageResult result;
    const auto n = static_cast<std::int64_t>(data.size());
    for (std::int64_t step = 0; step < stage.steps; ++step) {
        model.params().zero_grad();
        Var total;
        for (std::int64_t b = 0; b < stage.batch; ++b) {
            const auto& s = data[rng.integer(0, n - 1)];
            const double t = sample_timestep(rng);
            Array noise = rng.normal_array(s.z0.shape());
            auto cond = opt.augment_object ? augmented(codec, s, rng) : s.cond;
            Var l = ag::scale(flow_match_loss(model, s.z0, cond, t, noise), 1.0 / static_cast<double>(stage.batch));
            total = total.defined() ? ag::add(total, l) : l;
        }
        ag::backward(total);
        adam.step(model.params());
        const double loss = total.value()[0];
        result.losses.push_back(loss);
        if (csv) csv << step << ',' << loss << ',' << stage.name << '\n';
        if (opt.on_step) opt.on_step(step, loss);
    }
    if (opt.out_checkpoint) {
        model.save(*opt.out_checkpoint, {{"stage", stage.name}, {"stage_index", opt.stage_index}, {"steps", stage.steps}});
        result.checkpoint = opt.out_checkpoint;
    }
    return result;
}

double evaluate_loss(const model::HomaModel& model, const std::vector<TrainSample>& data, std::int64_t draws,
                     std::uint64_t seed) {
    ag::NoGradGuard guard;
    Rng rng(seed);
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& s : data)
        for (std::int64_t k = 0; k < draws; ++k) {
            const double t = sample_timestep(rng);
            Array noise = rng.normal_array(s.z0.shape());
            sum += flow_match_loss(model, s.z0, s.cond, t, noise).value()[0];
            ++count;
        }
    return sum / static_cast<double>(count);
}

}  // namespace homa::training
