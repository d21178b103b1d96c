#include "homa/app.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "homa/audio.hpp"
#include "homa/curation.hpp"
#include "homa/synthetic.hpp"

namespace homa::app {

namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return nlohmann::json::parse(is);
}

}  // namespace

std::vector<synth::SyntheticClip> stage_clips(const training::RunConfig& cfg, const training::StageSpec& stage) {
    synth::ClipSpec spec;
    spec.n = cfg.frames;
    spec.res = stage.resolution;
    spec.encoding = cfg.encoding;
    return synth::make_set(cfg.clips, spec, cfg.data_seed);
}

TrainReport run_training(const training::RunConfig& cfg, const std::string& out_dir,
                         const std::optional<std::string>& codec_path, const Logger& log) {
    if (cfg.stages.empty()) throw std::invalid_argument("run config has no stages");
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    write_json(dir / "config.json", training::to_json(cfg));
    fs::remove(dir / "losses.csv");
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };

    TrainReport report;
    const auto first = stage_clips(cfg, cfg.stages.front());
    std::vector<Array> videos;
    for (const auto& c : first) videos.push_back(video_to_tensor(c.video));
    codec::VideoCodec codec;
    if (codec_path) {
        codec = codec::VideoCodec::load(*codec_path);
    } else {
        codec = codec::VideoCodec({}, cfg.seed);
        codec::VideoCodec::TrainOptions to;
        to.steps = cfg.codec_steps;
        to.seed = cfg.seed;
        codec.train(videos, to);
    }
    for (const auto& v : videos) report.codec_psnr += codec::psnr(codec.decode(codec.encode(v)), v);
    report.codec_psnr /= static_cast<double>(videos.size());
    codec.save((dir / "codec.ckpt").string());
    say("codec psnr " + std::to_string(report.codec_psnr));
    io::write_png((dir / "reference_human.png").string(), first.front().human_ref);
    io::write_png((dir / "reference_object.png").string(), first.front().object_image);

    model::HomaModel m(cfg.model, cfg.seed);
    std::optional<std::string> prior;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
        const auto& stage = cfg.stages[i];
        const auto data = training::prepare_samples(codec, cfg.model, stage_clips(cfg, stage), stage);
        training::StageOptions opt;
        opt.seed = cfg.seed + 1000 * (i + 1);
        opt.augment_object = cfg.augment_object;
        opt.grad_clip = cfg.grad_clip;
        opt.stage_index = static_cast<std::int64_t>(i);
        opt.prior_checkpoint = prior;
        opt.out_checkpoint = (dir / ("stage_" + stage.name + ".ckpt")).string();
        opt.loss_csv = (dir / "losses.csv").string();
        opt.on_step = [&](std::int64_t step, double loss) {
            if (step % 50 == 0 || step + 1 == stage.steps)
                say(stage.name + " step " + std::to_string(step) + " loss " + std::to_string(loss));
        };
        auto res = training::run_stage(stage, codec, data, m, opt);
        report.stage_losses.push_back(std::move(res.losses));
        report.stage_checkpoints.push_back(*res.checkpoint);
        prior = res.checkpoint;
    }
    fs::copy_file(*prior, dir / "model.ckpt", fs::copy_options::overwrite_existing);
    return report;
}

Bundle load_bundle(const std::string& dir) {
    const fs::path d(dir);
    if (!fs::exists(d / "model.ckpt")) throw std::runtime_error("no model.ckpt in '" + dir + "'");
    Bundle b;
    b.dir = dir;
    b.config = training::run_config_from_json(read_json(d / "config.json"));
    b.codec = codec::VideoCodec::load((d / "codec.ckpt").string());
    b.model = model::HomaModel::load((d / "model.ckpt").string());
    b.human_ref = io::read_png((d / "reference_human.png").string());
    b.object_image = io::read_png((d / "reference_object.png").string());
    return b;
}

std::string model_dir_from_env(const std::string& fallback) {
    const char* env = std::getenv("HOMA_MODEL_DIR");
    return env && *env ? std::string(env) : fallback;
}

InferResult run_inference(const Bundle& bundle, const InferRequest& req, const std::string& out_dir) {
    conditions::validate(req.clip);
    const auto res = req.resolution.value_or(bundle.config.stages.back().resolution);
    const Frame& human = req.human ? *req.human : bundle.human_ref;
    const Frame& object = req.object ? *req.object : bundle.object_image;
    std::optional<Array> audio = req.audio;
    if (!audio && req.clip.audio_path) audio = audio::load_audio(*req.clip.audio_path, req.clip.n(), req.fps);

    const auto gen = inference::generate(bundle.codec, bundle.model, req.clip, human, &object, audio ? &*audio : nullptr,
                                         res, req.options);
    InferResult out;
    out.video = gen.video;
    nlohmann::json windows = nlohmann::json::array();
    for (auto [b, e] : gen.plan.windows) windows.push_back({b, e});
    const auto& o = req.options;
    out.metadata = {{"n", static_cast<std::int64_t>(gen.video.size())},
                    {"fps", req.fps},
                    {"height", res.height},
                    {"width", res.width},
                    {"steps", o.sampler.steps},
                    {"seed", o.sampler.seed},
                    {"guidance", o.sampler.guidance},
                    {"segment_len", o.segment_len},
                    {"overlap", o.overlap},
                    {"blend", o.blend == inference::BlendMode::per_step ? "per_step" : "final_merge"},
                    {"latent_windows", windows},
                    {"audio", audio.has_value()},
                    {"condition_hash", condition_hash(req.clip)},
                    {"model_dir", bundle.dir}};
    if (!out_dir.empty()) {
        write_frames(out_dir, out.video);
        write_json(fs::path(out_dir) / "metadata.json", out.metadata);
    }
    return out;
}

Video rasterize_preview(const conditions::ConditionClip& clip, conditions::Resolution res) {
    conditions::validate(clip);
    return conditions::composite(conditions::rasterize_pose(clip.skeleton, res),
                                 conditions::rasterize_object_motion(clip.object_motion, res));
}

void write_frames(const std::string& dir, const Video& v) {
    fs::create_directories(dir);
    char name[32];
    for (std::size_t k = 0; k < v.size(); ++k) {
        std::snprintf(name, sizeof name, "frame_%04zu.png", k);
        io::write_png((fs::path(dir) / name).string(), v[k]);
    }
}

std::string condition_hash(const conditions::ConditionClip& clip) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : conditions::to_json(clip).dump()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

conditions::ConditionClip midpoint_fixture(std::int64_t n) {
    if (n < 3) throw std::invalid_argument("midpoint fixture needs n >= 3");
    synth::ClipSpec spec;
    spec.n = n;
    auto clip = synth::make_clip(spec).conditions;
    // Keyframes at both ends; the frames between repeat the first keyframe until interpolated.
    for (std::int64_t i = 1; i + 1 < n; ++i) clip.skeleton.frames[i] = clip.skeleton.frames[0];
    clip.object_motion.frames.front().cx = 0.2;
    clip.object_motion.frames.front().cy = 0.3;
    clip.object_motion.frames.back().cx = 0.8;
    clip.object_motion.frames.back().cy = 0.7;
    for (std::int64_t i = 1; i + 1 < n; ++i) clip.object_motion.frames[i] = clip.object_motion.frames[0];
    return clip;
}

conditions::ConditionClip write_fixtures(const std::string& dir, std::uint64_t seed) {
    const fs::path d(dir);
    fs::create_directories(d);
    synth::ClipSpec spec;
    spec.seed = seed;
    spec.n = 9;
    const auto clip = synth::make_clip(spec);
    auto cond = clip.conditions;
    cond.audio_path.reset();
    conditions::save_condition_file((d / "conditions.json").string(), cond);
    conditions::save_condition_file((d / "midpoint.json").string(), midpoint_fixture(5));
    io::write_png((d / "human.png").string(), clip.human_ref);
    io::write_png((d / "object.png").string(), clip.object_image);
    audio::write_feature_file((d / "features.json").string(), clip.audio);
    std::vector<double> loud;
    for (std::int64_t i = 0; i < clip.audio.dim(0); ++i) loud.push_back(0.5 + 0.5 * clip.audio[i * clip.audio.dim(1)]);
    audio::write_wav((d / "audio.wav").string(), audio::synth_speech(loud, kDefaultFps, seed));
    curation::write_depth_fixture((d / "curation").string(), seed);
    return cond;
}

}  // namespace homa::app
