#include <cstdlib>
#include <filesystem>
#include <set>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "homa/app.hpp"
#include "homa/audio.hpp"
#include "homa/curation.hpp"
#include "homa/invariants.hpp"
#include "homa/service.hpp"

using namespace homa;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int fail(const std::string& type, const std::string& message, int code, const std::string& path = "") {
    json err = {{"type", type}, {"message", message}};
    if (!path.empty()) err["path"] = path;
    std::cerr << json{{"error", err}}.dump() << '\n';
    return code;
}

json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    return json::parse(is);
}

/// Splice `--key value` pairs from a JSON --config file in front of the
/// explicit arguments, skipping flags already given. train reads its config itself.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "train") return args;
    std::optional<std::string> cfg;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) cfg = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) cfg = args[i].substr(9);
    }
    if (!cfg) return args;
    const json j = read_json_file(*cfg);
    if (!j.is_object()) throw std::invalid_argument(*cfg + ": expected a JSON object of flag values");
    std::vector<std::string> extra;
    for (const auto& [k, v] : j.items()) {
        const std::string flag = "--" + k;
        bool given = false;
        for (const auto& a : args) given = given || a == flag || a.rfind(flag + "=", 0) == 0;
        if (given) continue;
        if (v.is_boolean()) {
            if (v.get<bool>()) extra.push_back(flag);
            continue;
        }
        extra.push_back(flag);
        extra.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
    args.insert(args.begin() + 1, extra.begin(), extra.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Weakly conditioned human-object interaction video generation at desk scale"};
    cli.require_subcommand(1);
    cli.set_help_all_flag("--help-all");

    std::uint64_t seed = 0;
    std::string config_path;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "Random seed");
        sub->add_option("--config", config_path, "JSON config file");
    };

    // train
    auto* train = cli.add_subcommand("train", "Train the codec and all stages into a model directory");
    std::string train_out, train_profile = "ci", train_codec;
    train->add_option("--out", train_out, "Output model directory")->required();
    train->add_option("--profile", train_profile, "Stage schedule when the config has none (ci, full)");
    train->add_option("--codec", train_codec, "Reuse a trained codec checkpoint");
    common(train);

    // infer
    auto* infer = cli.add_subcommand("infer", "Generate a video from a condition file");
    std::string model_dir, cond_path, human_path, object_path, audio_path, infer_out, res_str, blend = "per_step";
    std::int64_t steps = 50, segment_len = 6, overlap = 2;
    double guidance = 1.0, fps = app::kDefaultFps;
    infer->add_option("--model", model_dir, "Model directory (default $HOMA_MODEL_DIR)");
    infer->add_option("--conditions", cond_path, "Condition file")->required();
    infer->add_option("--human", human_path, "Reference human image (PNG)");
    infer->add_option("--object", object_path, "Object image (PNG)");
    infer->add_option("--audio", audio_path, "Mono 16 kHz PCM16 WAV or JSON feature file");
    infer->add_option("--steps", steps, "Denoising steps")->check(CLI::PositiveNumber);
    infer->add_option("--segment-len", segment_len, "Latent frames per segment")->check(CLI::Range(2, 1 << 20));
    infer->add_option("--overlap", overlap, "Overlapping latent frames")->check(CLI::PositiveNumber);
    infer->add_option("--blend", blend, "Segment fusion timing")->check(CLI::IsMember({"per_step", "final_merge"}));
    infer->add_option("--guidance", guidance, "Text guidance scale (1 disables)");
    infer->add_option("--fps", fps, "Frame rate used for audio alignment");
    infer->add_option("--res", res_str, "Output resolution HxW (default: last training stage)");
    infer->add_option("--out", infer_out, "Output directory")->required();
    common(infer);

    // rasterize
    auto* rast = cli.add_subcommand("rasterize", "Render the pose and object conditions to PNG frames");
    std::string rast_cond, rast_out, rast_res = "64x64";
    rast->add_option("--conditions", rast_cond, "Condition file")->required();
    rast->add_option("--res", rast_res, "Resolution HxW");
    rast->add_option("--out", rast_out, "Output directory")->required();
    common(rast);

    // curate
    auto* cur = cli.add_subcommand("curate", "Depth-aware HOI clip filtering");
    std::string clips_dir, manifest, rule = "relative";
    double tau = 0.15;
    std::int64_t workers = 1, sample_frames = 5, limit = -1;
    cur->add_option("--clips", clips_dir, "Directory of clip folders")->required();
    cur->add_option("--manifest", manifest, "Output JSONL manifest (appended, resumable)")->required();
    cur->add_option("--tau", tau, "Depth threshold")->check(CLI::NonNegativeNumber);
    cur->add_option("--rule", rule, "Depth comparison")->check(CLI::IsMember({"relative", "absolute"}));
    cur->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    cur->add_option("--sample-frames", sample_frames, "Frames sampled per clip")->check(CLI::PositiveNumber);
    cur->add_option("--limit", limit, "Stop after this many new clips");
    common(cur);

    // eval-invariants
    auto* inv = cli.add_subcommand("eval-invariants", "Run the masked-locality, RoPE and blend-weight suites");
    std::int64_t trials = 100;
    inv->add_option("--trials", trials, "Masked-locality trials")->check(CLI::PositiveNumber);
    common(inv);

    // serve
    auto* serve = cli.add_subcommand("serve", "HTTP service for the condition editor");
    std::string host = "127.0.0.1", jobs_dir = "homa_jobs", serve_model;
    int port = 8080;
    serve->add_option("--host", host);
    serve->add_option("--port", port);
    serve->add_option("--model", serve_model, "Model directory (default $HOMA_MODEL_DIR)");
    serve->add_option("--jobs", jobs_dir, "Job output directory");
    common(serve);

    // fixtures
    auto* fix = cli.add_subcommand("fixtures", "Write example condition, image, audio and curation fixtures");
    std::string fix_out;
    fix->add_option("--out", fix_out, "Output directory")->required();
    common(fix);

    try {
        auto args = expand_config(argc, argv);
        std::reverse(args.begin(), args.end());
        cli.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return cli.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return cli.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << cli.help() << '\n';
        return fail("usage", e.what(), 2);
    } catch (const std::exception& e) {
        return fail("config", e.what(), 2);
    }

    try {
        if (*train) {
            training::RunConfig cfg;
            if (!config_path.empty()) cfg = training::run_config_from_json(read_json_file(config_path));
            else cfg.stages = training::default_schedule(train_profile);
            if (train->count("--seed")) cfg.seed = seed;
            const auto rep = app::run_training(cfg, train_out,
                                               train_codec.empty() ? std::nullopt : std::optional(train_codec),
                                               [](const std::string& s) { std::cerr << s << '\n'; });
            json losses = json::array();
            for (const auto& l : rep.stage_losses) losses.push_back({{"first", l.front()}, {"last", l.back()}});
            std::cout << json{{"out", train_out}, {"checkpoints", rep.stage_checkpoints}, {"codec_psnr", rep.codec_psnr},
                              {"losses", losses}}
                             .dump()
                      << '\n';
        } else if (*infer) {
            const auto dir = model_dir.empty() ? app::model_dir_from_env() : model_dir;
            if (dir.empty()) return fail("usage", "no model: pass --model or set HOMA_MODEL_DIR", 2, "--model");
            const auto bundle = app::load_bundle(dir);
            app::InferRequest req;
            req.clip = conditions::load_condition_file(cond_path);
            if (!human_path.empty()) req.human = io::read_png(human_path);
            if (!object_path.empty()) req.object = io::read_png(object_path);
            req.fps = fps;
            if (!audio_path.empty()) {
                req.audio = audio::load_audio(audio_path, req.clip.n(), fps);
            } else if (req.clip.audio_path) {
                // Relative audio paths in a condition file are relative to that file.
                fs::path p(*req.clip.audio_path);
                if (p.is_relative()) p = fs::path(cond_path).parent_path() / p;
                req.audio = audio::load_audio(p.string(), req.clip.n(), fps);
            }
            if (!res_str.empty()) req.resolution = conditions::parse_resolution(res_str);
            req.options.sampler.steps = steps;
            req.options.sampler.seed = seed;
            req.options.sampler.guidance = guidance;
            req.options.segment_len = segment_len;
            req.options.overlap = overlap;
            req.options.blend = blend == "per_step" ? inference::BlendMode::per_step : inference::BlendMode::final_merge;
            const auto out = app::run_inference(bundle, req, infer_out);
            std::cout << out.metadata.dump() << '\n';
        } else if (*rast) {
            const auto clip = conditions::load_condition_file(rast_cond);
            const auto v = app::rasterize_preview(clip, conditions::parse_resolution(rast_res));
            app::write_frames(rast_out, v);
            std::cout << json{{"n", v.size()}, {"out", rast_out}}.dump() << '\n';
        } else if (*cur) {
            curation::CurateOptions opt;
            opt.tau = tau;
            opt.rule = rule == "relative" ? curation::DepthRule::relative : curation::DepthRule::absolute;
            opt.workers = workers;
            opt.sample_frames = sample_frames;
            if (limit >= 0) opt.limit = limit;
            std::set<std::string> prior;
            for (const auto& r : curation::load_manifest(manifest)) prior.insert(r.clip_id);
            const auto recs =
                curation::curate(curation::discover_clips(clips_dir), curation::fixture_backends(), opt, manifest);
            std::int64_t kept = 0;
            std::size_t fresh = 0;
            for (const auto& r : recs) kept += r.keep, fresh += !prior.count(r.clip_id);
            std::cout << json{{"processed", fresh}, {"records", recs.size()}, {"kept", kept}, {"manifest", manifest}}.dump()
                      << '\n';
        } else if (*inv) {
            auto results = invariants::run_all(seed);
            results[0] = invariants::masked_locality(trials, seed);
            bool ok = true;
            for (const auto& r : results) {
                std::cout << invariants::to_json(r).dump() << '\n';
                ok = ok && r.passed();
            }
            return ok ? 0 : 1;
        } else if (*serve) {
            service::ServiceOptions opt;
            opt.model_dir = serve_model.empty() ? app::model_dir_from_env() : serve_model;
            opt.jobs_dir = jobs_dir;
            service::Service svc(opt);
            std::cerr << json{{"listening", host + ":" + std::to_string(port)}, {"model_loaded", svc.model_loaded()}}.dump()
                      << '\n';
            svc.listen(host, port);
        } else if (*fix) {
            const auto clip = app::write_fixtures(fix_out, seed);
            std::cout << json{{"out", fix_out}, {"n", clip.n()}}.dump() << '\n';
        }
    } catch (const conditions::ConditionError& e) {
        return fail("condition", e.what(), 1, e.path());
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
    return 0;
}
