#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homa/codec.hpp"
#include "homa/conditions.hpp"
#include "homa/inference.hpp"
#include "homa/model.hpp"
#include "homa/training.hpp"

namespace homa::app {

inline constexpr double kDefaultFps = 8.0;

/// A trained model directory: config.json, codec.ckpt, model.ckpt, losses.csv,
/// one checkpoint per stage and default reference images.
struct Bundle {
    std::string dir;
    codec::VideoCodec codec;
    model::HomaModel model;
    training::RunConfig config;
    Frame human_ref, object_image;
};

struct TrainReport {
    std::vector<std::string> stage_checkpoints;
    std::vector<std::vector<double>> stage_losses;
    double codec_psnr = 0.0;
};

using Logger = std::function<void(const std::string&)>;

/// Synthetic clips for one stage of a run.
std::vector<synth::SyntheticClip> stage_clips(const training::RunConfig& cfg, const training::StageSpec& stage);

/// Train the codec (or reuse `codec_path`), then every stage in order,
/// chaining checkpoints through `out_dir`.
TrainReport run_training(const training::RunConfig& cfg, const std::string& out_dir,
                         const std::optional<std::string>& codec_path = std::nullopt, const Logger& log = {});

Bundle load_bundle(const std::string& dir);
/// HOMA_MODEL_DIR when set, otherwise `fallback`.
std::string model_dir_from_env(const std::string& fallback = "");

struct InferRequest {
    conditions::ConditionClip clip;
    std::optional<Frame> human, object;
    /// Per-frame audio features [n, dim]; when absent, clip.audio_path is loaded if set.
    std::optional<Array> audio;
    std::optional<conditions::Resolution> resolution;
    inference::GenerateOptions options;
    double fps = kDefaultFps;
};

struct InferResult {
    Video video;
    nlohmann::json metadata;
};

/// Generate, and write frame_NNNN.png plus metadata.json into `out_dir` when non-empty.
InferResult run_inference(const Bundle& bundle, const InferRequest& req, const std::string& out_dir = "");

/// Pose and object rasterizations composited per frame.
Video rasterize_preview(const conditions::ConditionClip& clip, conditions::Resolution res);
void write_frames(const std::string& dir, const Video& v);

/// Stable FNV-1a hash of the canonical condition JSON, as 16 hex digits.
std::string condition_hash(const conditions::ConditionClip& clip);

/// Two-keyframe midpoint clip used by the fixtures and the service examples.
conditions::ConditionClip midpoint_fixture(std::int64_t n = 5);

/// Writes conditions.json, human.png, object.png, audio.wav, features.json and
/// the curation fixture under `dir`; returns the condition clip.
conditions::ConditionClip write_fixtures(const std::string& dir, std::uint64_t seed = 0);

}  // namespace homa::app
