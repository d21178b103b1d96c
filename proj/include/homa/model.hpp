#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homa/adapters.hpp"
#include "homa/backbone.hpp"
#include "homa/codec.hpp"
#include "homa/conditions.hpp"
#include "homa/fusion.hpp"

namespace homa::model {

struct ModelConfig {
    backbone::BackboneConfig backbone;
    fusion::AblationFlags ablation;
    adapters::AdapterVariant hoi_variant = adapters::AdapterVariant::self_attn;
    /// Empty means every even layer (0-based).
    std::vector<std::int64_t> adapter_layers;
    bool audio_adapter = true;
    std::int64_t audio_dim = 16;
    std::int64_t semantic_dim = 48;
    std::int64_t max_text_tokens = 16;
    std::int64_t mask_dilation = 1;

    std::vector<std::int64_t> layers() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Everything a denoising call needs besides the noisy latent, already in
/// latent space. Empty arrays mean the condition is absent.
struct LatentConditions {
    Array z_ref;    // [1,1,h,w,c]
    Array z_obj;    // [1,1,h,w,c]
    Array pose;     // [1,f,h,w,c]; the composite motion map in the single-encoder ablation
    Array traj;     // [1,f,h,w,c]
    fusion::PasteSpec paste;
    Array text;         // [words, text_dim], possibly zero rows
    Array human_feat;   // [1, semantic_dim]
    Array object_feat;  // [1, semantic_dim]
    Array audio;        // window means [f, audio_dim]
    std::vector<conditions::Box> face_boxes;  // one per latent frame

    bool has_object() const { return !z_obj.empty(); }
    bool has_audio() const { return !audio.empty() && !face_boxes.empty(); }
    /// Restrict every per-frame condition to latent frames [begin, end).
    LatentConditions slice(std::int64_t begin, std::int64_t end) const;
};

class HomaModel {
public:
    HomaModel() = default;
    HomaModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& mutable_config() { return cfg_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

    /// Clone host weights into HOI adapters and add audio adapters on the configured layers.
    void attach_adapters(Rng& rng);
    bool adapters_attached() const;
    /// Stage-2 initialization of the trajectory encoder.
    void copy_pose_encoder_to_traj();

    /// Predicted velocity for one sample as rows [f*h*w, c].
    ag::Var velocity(const Array& z_t, double t, const LatentConditions& cond) const;
    /// Gradient-free velocity shaped like z_t.
    Array predict(const Array& z_t, double t, const LatentConditions& cond) const;

    void save(const std::string& path, const nlohmann::json& extra = nlohmann::json::object()) const;
    static HomaModel load(const std::string& path, nlohmann::json* extra = nullptr);

private:
    ModelConfig cfg_;
    ParameterStore store_;
};

struct ConditionSwitches {
    bool pose = true;
    bool object = true;
    bool audio = true;
};

/// Encode pixel-space conditions with the frozen codec.
LatentConditions encode_conditions(const codec::VideoCodec& codec, const ModelConfig& cfg,
                                   const conditions::ConditionClip& clip, const Frame& human, const Frame* object,
                                   const Array* audio_features, conditions::Resolution res,
                                   ConditionSwitches switches = {});

}  // namespace homa::model
