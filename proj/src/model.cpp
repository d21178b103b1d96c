#include "homa/model.hpp"

#include <algorithm>

#include "homa/geometry.hpp"

namespace homa::model {

using ag::Var;

std::vector<std::int64_t> ModelConfig::layers() const {
    return adapter_layers.empty() ? adapters::even_layers(backbone.n_layers) : adapter_layers;
}

nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::json bb = c.backbone;
    return {{"backbone", bb},
            {"ablation",
             {{"use_token_concat", c.ablation.use_token_concat},
              {"use_channel_paste", c.ablation.use_channel_paste},
              {"fix_copy", c.ablation.fix_copy},
              {"single_motion_encoder", c.ablation.single_motion_encoder}}},
            {"hoi_variant", adapters::variant_name(c.hoi_variant)},
            {"adapter_layers", c.adapter_layers},
            {"audio_adapter", c.audio_adapter},
            {"audio_dim", c.audio_dim},
            {"semantic_dim", c.semantic_dim},
            {"max_text_tokens", c.max_text_tokens},
            {"mask_dilation", c.mask_dilation}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    if (j.contains("backbone")) c.backbone = j.at("backbone").get<backbone::BackboneConfig>();
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        c.ablation.use_token_concat = a.value("use_token_concat", true);
        c.ablation.use_channel_paste = a.value("use_channel_paste", true);
        c.ablation.fix_copy = a.value("fix_copy", false);
        c.ablation.single_motion_encoder = a.value("single_motion_encoder", false);
    }
    c.hoi_variant = adapters::parse_variant(j.value("hoi_variant", std::string("self_attn")));
    c.adapter_layers = j.value("adapter_layers", std::vector<std::int64_t>{});
    c.audio_adapter = j.value("audio_adapter", true);
    c.audio_dim = j.value("audio_dim", c.audio_dim);
    c.semantic_dim = j.value("semantic_dim", c.semantic_dim);
    c.max_text_tokens = j.value("max_text_tokens", c.max_text_tokens);
    c.mask_dilation = j.value("mask_dilation", c.mask_dilation);
    c.backbone.validate();
    return c;
}

LatentConditions LatentConditions::slice(std::int64_t begin, std::int64_t end) const {
    LatentConditions s = *this;
    if (!pose.empty()) s.pose = slice_axis1(pose, begin, end);
    if (!traj.empty()) s.traj = slice_axis1(traj, begin, end);
    if (paste.frames() > 0) s.paste = paste.slice(begin, end);
    if (!audio.empty()) {
        const std::int64_t a = audio.dim(1);
        s.audio = Array(Shape{end - begin, a});
        std::copy_n(audio.ptr() + begin * a, (end - begin) * a, s.audio.ptr());
    }
    if (!face_boxes.empty()) s.face_boxes.assign(face_boxes.begin() + begin, face_boxes.begin() + end);
    return s;
}

HomaModel::HomaModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    Rng rng(seed);
    const auto& bb = cfg_.backbone;
    backbone::init_backbone(store_, bb, rng);
    fusion::add_conv3x3(store_, "motion.pose", bb.latent_channels, bb.in_channels(), rng, true);
    fusion::add_conv3x3(store_, "motion.traj", bb.latent_channels, bb.in_channels(), rng, true);
    add_linear(store_, "sem.human", cfg_.semantic_dim, bb.text_dim, rng);
    add_linear(store_, "sem.object", cfg_.semantic_dim, bb.text_dim, rng);
}

void HomaModel::attach_adapters(Rng& rng) {
    const auto layers = cfg_.layers();
    if (cfg_.hoi_variant != adapters::AdapterVariant::none)
        adapters::attach_hoi_adapters(store_, cfg_.backbone, layers, rng);
    if (cfg_.audio_adapter) adapters::attach_audio_adapters(store_, cfg_.backbone, layers, cfg_.audio_dim, rng);
}

bool HomaModel::adapters_attached() const {
    for (auto l : cfg_.layers())
        if (adapters::has_hoi_adapter(store_, l) || adapters::has_audio_adapter(store_, l)) return true;
    return false;
}

void HomaModel::copy_pose_encoder_to_traj() {
    for (const char* s : {".w", ".b"}) {
        store_.assign(std::string("motion.traj") + s, store_.get(std::string("motion.pose") + s).value());
        store_.set_provenance(std::string("motion.traj") + s, std::string("motion.pose") + s);
    }
}

Var HomaModel::velocity(const Array& z_t, double t, const LatentConditions& cond) const {
    const auto& bb = cfg_.backbone;
    const std::int64_t c = bb.latent_channels, p = bb.patch_size;
    if (z_t.rank() != 5 || z_t.dim(0) != 1 || z_t.dim(4) != c)
        throw std::invalid_argument("noisy latent must be [1,f,h,w," + std::to_string(c) + "], got " +
                                    shape_str(z_t.shape()));
    const std::int64_t f = z_t.dim(1), h = z_t.dim(2), w = z_t.dim(3), N = f * h * w;
    if (h % p != 0 || w % p != 0) throw std::invalid_argument("latent size not divisible by the patch size");
    const std::int64_t hp = h / p, wp = w / p, L = f * hp * wp;

    const Array zero_ref(Shape{1, 1, h, w, c});
    const bool object = cond.has_object();
    if (object && (cond.z_obj.dim(2) != h || cond.z_obj.dim(3) != w))
        throw std::invalid_argument("object latent must match the video latent size");
    Array z_objd = object && cfg_.ablation.use_channel_paste
                       ? fusion::paste_object_along_trajectory(cond.z_obj, cond.paste, f, h, w)
                       : Array(Shape{1, f, h, w, c});
    Array z_cat = fusion::channel_concat_appearance(z_t, cond.z_ref.empty() ? zero_ref : cond.z_ref, z_objd);
    Var z = fusion::motion_fuse(store_, Var::constant(z_cat.reshaped({N, 3 * c})), cond.pose,
                                object ? cond.traj : Array(), f, h, w, cfg_.ablation.single_motion_encoder);
    Var video = apply_linear(store_, "patch_embed", codec::patchify_rows(z, f, h, w, p));
    auto video_index = codec::grid_index(f, hp, wp);

    Var obj_tokens;
    if (object) {
        // The object latent occupies the pasted-object channel slot.
        Array rows(Shape{h * w, 3 * c});
        for (std::int64_t i = 0; i < h * w; ++i) std::copy_n(cond.z_obj.ptr() + i * c, c, rows.ptr() + i * 3 * c + 2 * c);
        obj_tokens = apply_linear(store_, "patch_embed", codec::patchify_rows(Var::constant(rows), 1, h, w, p));
    }
    const bool concat = object && cfg_.ablation.use_token_concat;
    const std::int64_t lo = concat ? hp * wp : 0;
    std::vector<codec::TokenIndex> index;
    if (concat) index = codec::grid_index(1, hp, wp, -1);
    index.insert(index.end(), video_index.begin(), video_index.end());
    Var img = concat ? ag::concat_rows({obj_tokens, video}) : video;

    Var human_sem, object_sem;
    if (!cond.human_feat.empty()) human_sem = apply_linear(store_, "sem.human", Var::constant(cond.human_feat));
    if (object)
        object_sem = cond.object_feat.empty()
                         ? Var::constant(Array(Shape{1, bb.text_dim}))
                         : apply_linear(store_, "sem.object", Var::constant(cond.object_feat));
    Var text = cond.text.empty() ? Var() : Var::constant(cond.text);
    Var txt = apply_linear(store_, "text_in", fusion::semantic_token_fusion(text, human_sem, object_sem));

    Var temb = backbone::timestep_embed(store_, t);
    const auto [rcos, rsin] = backbone::rope_tables(index, bb.d_head(), bb.rope_theta);

    const bool use_hoi = object && cfg_.hoi_variant != adapters::AdapterVariant::none;
    std::shared_ptr<const std::vector<std::uint8_t>> obj_mask, face_mask;
    if (use_hoi) obj_mask = adapters::build_object_mask(cond.paste, h, w, p, cfg_.mask_dilation).rows_mask();
    Var audio_tokens;
    const bool use_audio = cond.has_audio() && cfg_.audio_adapter;
    if (use_audio) {
        if (cond.audio.dim(0) != f || static_cast<std::int64_t>(cond.face_boxes.size()) != f)
            throw std::invalid_argument("audio/face conditions do not cover every latent frame");
        face_mask = adapters::build_face_mask(cond.face_boxes, h, w, p).rows_mask();
        if (store_.contains("audio_proj.fc1.w")) audio_tokens = adapters::project_audio_windows(store_, cond.audio);
    }

    backbone::Streams s{img, txt};
    for (std::int64_t layer = 0; layer < bb.n_layers; ++layer) {
        s = backbone::double_stream_block(store_, bb, layer, s, temb, rcos, rsin);
        const bool hoi_here = use_hoi && adapters::has_hoi_adapter(store_, layer);
        const bool audio_here = use_audio && audio_tokens.defined() && adapters::has_audio_adapter(store_, layer);
        if (!hoi_here && !audio_here) continue;
        Var v = concat ? ag::slice_rows(s.img, lo, lo + L) : s.img;
        if (hoi_here) {
            adapters::HoiInputs in{v, video_index, obj_tokens, hp, wp, obj_mask, object_sem, temb};
            v = adapters::hoi_adapter_forward(store_, bb, layer, in, cfg_.hoi_variant);
        }
        if (audio_here) v = adapters::face_cross_attention(store_, bb, layer, v, video_index, audio_tokens, face_mask);
        s.img = concat ? ag::concat_rows({ag::slice_rows(s.img, 0, lo), v}) : v;
    }
    Var out_video = concat ? ag::slice_rows(s.img, lo, lo + L) : s.img;
    return codec::unpatchify_rows(backbone::final_layer(store_, out_video, temb), f, h, w, p);
}

Array HomaModel::predict(const Array& z_t, double t, const LatentConditions& cond) const {
    ag::NoGradGuard guard;
    return velocity(z_t, t, cond).value().reshaped(z_t.shape());
}

void HomaModel::save(const std::string& path, const nlohmann::json& extra) const {
    nlohmann::json meta = {{"kind", "homa_model"}, {"config", to_json(cfg_)}, {"extra", extra}};
    save_checkpoint(path, store_, meta.dump());
}

HomaModel HomaModel::load(const std::string& path, nlohmann::json* extra) {
    auto ck = load_checkpoint(path);
    auto meta = nlohmann::json::parse(ck.metadata_json);
    if (meta.value("kind", "") != "homa_model") throw std::runtime_error(path + " is not a model checkpoint");
    HomaModel m;
    m.cfg_ = model_config_from_json(meta.at("config"));
    m.store_ = std::move(ck.store);
    if (extra) *extra = meta.value("extra", nlohmann::json::object());
    return m;
}

LatentConditions encode_conditions(const codec::VideoCodec& codec, const ModelConfig& cfg,
                                   const conditions::ConditionClip& clip, const Frame& human, const Frame* object,
                                   const Array* audio_features, conditions::Resolution res, ConditionSwitches sw) {
    conditions::validate(clip);
    auto fit = [&](const Frame& fr) {
        return (fr.height == res.height && fr.width == res.width) ? fr : io::resize_bilinear(fr, res.height, res.width);
    };
    LatentConditions out;
    out.z_ref = codec.encode(video_to_tensor({fit(human)}));
    fusion::PooledColorEncoder sem;
    out.human_feat = sem.features(human);
    out.text = fusion::text_token_embeddings(clip.text.value_or(""), cfg.backbone.text_dim, cfg.max_text_tokens);

    Video pose_video, traj_video;
    if (sw.pose) pose_video = conditions::rasterize_pose(clip.skeleton, res);
    const bool with_object = sw.object && object != nullptr;
    if (with_object) traj_video = conditions::rasterize_object_motion(clip.object_motion, res);
    if (cfg.ablation.single_motion_encoder) {
        Video comp = !pose_video.empty() && !traj_video.empty() ? conditions::composite(pose_video, traj_video)
                     : !pose_video.empty()                      ? pose_video
                                                                : traj_video;
        if (!comp.empty()) out.pose = codec.encode(video_to_tensor(comp));
    } else {
        if (!pose_video.empty()) out.pose = codec.encode(video_to_tensor(pose_video));
        if (!traj_video.empty()) out.traj = codec.encode(video_to_tensor(traj_video));
    }
    if (with_object) {
        out.z_obj = codec.encode(video_to_tensor({fit(*object)}));
        out.object_feat = sem.features(*object);
        out.paste = fusion::make_paste_spec(clip, res, cfg.ablation.fix_copy);
    }
    if (sw.audio && audio_features && !audio_features->empty() && clip.face_boxes) {
        if (audio_features->dim(0) != clip.n())
            throw std::invalid_argument("audio has " + std::to_string(audio_features->dim(0)) + " frames, clip has " +
                                        std::to_string(clip.n()));
        out.audio = adapters::audio_window_means(*audio_features);
        out.face_boxes = adapters::latent_face_boxes(*clip.face_boxes);
    }
    return out;
}

}  // namespace homa::model
