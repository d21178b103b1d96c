#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homa/codec.hpp"
#include "homa/model.hpp"
#include "homa/synthetic.hpp"

namespace homa::training {

/// Raised when a forward pass produces NaN or infinity.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Z_t = (1 - t) Z0 + t noise; the regression target is noise - Z0.
Array interpolate_path(const Array& z0, const Array& noise, double t);
Array target_velocity(const Array& z0, const Array& noise);

/// Mean squared error between the model velocity at (Z_t, t) and noise - Z0.
ag::Var flow_match_loss(const model::HomaModel& model, const Array& z0, const model::LatentConditions& cond, double t,
                        const Array& noise);

/// Uniform on the open interval (0, 1).
double sample_timestep(Rng& rng);

struct AugmentParams {
    double scale = 1.0;
    double rotation_deg = 0.0;
    /// Fractions of the image side.
    double shift_x = 0.0, shift_y = 0.0;
};
/// scale in [0.8, 1.2], rotation in [-15, 15] degrees, shift within 10% of the side.
AugmentParams sample_augment(Rng& rng);
/// Similarity transform about the image centre with bilinear sampling; uncovered pixels are black.
Frame apply_augment(const Frame& image, const AugmentParams& p);
Frame augment_object(const Frame& image, Rng& rng);

struct StageSpec {
    std::string name;
    conditions::Resolution resolution{64, 64};
    std::int64_t steps = 100;
    model::ConditionSwitches conditions;
    double lr = 1e-4;
    std::int64_t batch = 2;
};
void to_json(nlohmann::json& j, const StageSpec& s);
void from_json(const nlohmann::json& j, StageSpec& s);

/// "ci": 500/200/200 steps; "full": 16000/2000/5000. Stage 3 is taller than wide.
std::vector<StageSpec> default_schedule(const std::string& profile = "ci");

struct RunConfig {
    std::uint64_t seed = 0;
    model::ModelConfig model;
    std::vector<StageSpec> stages = default_schedule();
    std::int64_t clips = 8;
    std::int64_t frames = 5;
    std::uint64_t data_seed = 100;
    conditions::ObjectEncoding encoding = conditions::ObjectEncoding::dot;
    std::int64_t codec_steps = 600;
    bool augment_object = true;
    double grad_clip = 1.0;
};
nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Clip plus its frozen latent encodings for one stage.
struct TrainSample {
    synth::SyntheticClip clip;
    Array z0;
    model::LatentConditions cond;
    model::ConditionSwitches switches;
    conditions::Resolution resolution;
};

/// Encode target latents and conditions with the frozen codec.
std::vector<TrainSample> prepare_samples(const codec::VideoCodec& codec, const model::ModelConfig& cfg,
                                         const std::vector<synth::SyntheticClip>& clips, const StageSpec& stage);

struct StageOptions {
    std::uint64_t seed = 0;
    bool augment_object = true;
    double grad_clip = 1.0;
    /// Index of this stage in the schedule; later stages need `prior_checkpoint`.
    std::int64_t stage_index = 0;
    std::optional<std::string> prior_checkpoint;
    std::optional<std::string> out_checkpoint;
    /// Appends "step,loss,stage" rows (header written when the file is new).
    std::optional<std::string> loss_csv;
    std::function<void(std::int64_t step, double loss)> on_step;
};

struct StageResult {
    std::vector<double> losses;
    std::optional<std::string> checkpoint;
};

/// Train one stage. Stages after the first reload the prior checkpoint; a
/// stage enabling object conditions on a model without adapters first copies
/// the pose encoder into the trajectory encoder and attaches the adapters.
StageResult run_stage(const StageSpec& stage, const codec::VideoCodec& codec, const std::vector<TrainSample>& data,
                      model::HomaModel& model, const StageOptions& opt);

/// Stage-2 initialization applied at the first HOI stage.
void begin_hoi_stage(model::HomaModel& model, std::uint64_t seed);

/// Mean flow loss over a fixed set of (t, noise) draws per sample.
double evaluate_loss(const model::HomaModel& model, const std::vector<TrainSample>& data, std::int64_t draws,
                     std::uint64_t seed);

}  // namespace homa::training
