#include "homa/conditions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace homa::conditions {

using nlohmann::json;

BodyPart part_of(int id) {
    if (id < 0 || id >= kNumJoints) throw std::out_of_range("joint id out of range: " + std::to_string(id));
    if (id <= joint::right_ear) return BodyPart::head;
    if (id <= joint::right_wrist) return BodyPart::arms;
    if (id <= joint::right_hip) return BodyPart::torso;
    if (id < kNumBodyJoints) return BodyPart::legs;
    return BodyPart::hands;
}

std::string joint_name(int id) {
    static const char* body[kNumBodyJoints] = {
        "nose",       "left_eye",    "right_eye",  "left_ear",    "right_ear",  "left_shoulder",
        "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip",
        "right_hip",  "left_knee",   "right_knee", "left_ankle",  "right_ankle"};
    if (id < 0 || id >= kNumJoints) throw std::out_of_range("joint id out of range");
    if (id < kNumBodyJoints) return body[id];
    if (id < kRightHandBase) return "left_hand_" + std::to_string(id - kLeftHandBase);
    return "right_hand_" + std::to_string(id - kRightHandBase);
}

std::string part_name(BodyPart p) {
    switch (p) {
        case BodyPart::arms: return "arms";
        case BodyPart::hands: return "hands";
        case BodyPart::torso: return "torso";
        case BodyPart::legs: return "legs";
        case BodyPart::head: return "head";
    }
    return "?";
}

BodyPart parse_part(const std::string& s) {
    for (int i = 0; i < kNumParts; ++i)
        if (part_name(static_cast<BodyPart>(i)) == s) return static_cast<BodyPart>(i);
    throw std::invalid_argument("unknown body part '" + s + "'");
}

std::vector<BodyPart> PartSet::parts() const {
    std::vector<BodyPart> out;
    for (int i = 0; i < kNumParts; ++i)
        if (contains(static_cast<BodyPart>(i))) out.push_back(static_cast<BodyPart>(i));
    return out;
}

const std::vector<Bone>& bones() {
    static const std::vector<Bone> table = [] {
        using namespace joint;
        std::vector<Bone> b = {
            {left_shoulder, right_shoulder, BodyPart::arms}, {left_shoulder, left_elbow, BodyPart::arms},
            {left_elbow, left_wrist, BodyPart::arms},        {right_shoulder, right_elbow, BodyPart::arms},
            {right_elbow, right_wrist, BodyPart::arms},      {left_shoulder, left_hip, BodyPart::torso},
            {right_shoulder, right_hip, BodyPart::torso},    {left_hip, right_hip, BodyPart::torso},
            {left_hip, left_knee, BodyPart::legs},           {left_knee, left_ankle, BodyPart::legs},
            {right_hip, right_knee, BodyPart::legs},         {right_knee, right_ankle, BodyPart::legs},
            {nose, left_eye, BodyPart::head},                {nose, right_eye, BodyPart::head},
            {left_eye, left_ear, BodyPart::head},            {right_eye, right_ear, BodyPart::head},
        };
        for (int base : {kLeftHandBase, kRightHandBase}) {
            b.push_back({base == kLeftHandBase ? left_wrist : right_wrist, base, BodyPart::hands});
            for (int finger = 0; finger < 5; ++finger) {
                int prev = base;
                for (int k = 1; k <= 4; ++k) {
                    int cur = base + finger * 4 + k;
                    b.push_back({prev, cur, BodyPart::hands});
                    prev = cur;
                }
            }
        }
        return b;
    }();
    return table;
}

std::string encoding_name(ObjectEncoding e) {
    switch (e) {
        case ObjectEncoding::dot: return "dot";
        case ObjectEncoding::bbox: return "bbox";
        case ObjectEncoding::gaussian_dot: return "gaussian_dot";
    }
    return "?";
}

ObjectEncoding parse_encoding(const std::string& s) {
    if (s == "dot") return ObjectEncoding::dot;
    if (s == "bbox") return ObjectEncoding::bbox;
    if (s == "gaussian_dot") return ObjectEncoding::gaussian_dot;
    throw std::invalid_argument("unknown object encoding '" + s + "'");
}

namespace {

bool unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

std::string idx(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

}  // namespace

void validate(const ConditionClip& clip) {
    const std::size_t n = clip.skeleton.frames.size();
    if (n < 1) throw ConditionError("skeleton.frames", "at least one frame is required");
    if (clip.skeleton.retained_parts.empty())
        throw ConditionError("skeleton.retained_parts", "no conditioning signal: retained_parts is empty");
    for (std::size_t f = 0; f < n; ++f) {
        const auto& fr = clip.skeleton.frames[f];
        for (int j = 0; j < kNumJoints; ++j) {
            if (!fr.joints[j]) continue;
            std::string path = idx("skeleton.frames", f) + ".joints[id=" + std::to_string(j) + "]";
            if (!unit(fr.joints[j]->x) || !unit(fr.joints[j]->y))
                throw ConditionError(path, "coordinates must lie in [0,1]");
            if (!clip.skeleton.retained_parts.contains(part_of(j)))
                throw ConditionError(path, "joint belongs to a part not in retained_parts");
        }
    }
    const auto& om = clip.object_motion;
    if (om.frames.size() != n)
        throw ConditionError("object_motion.frames", "length " + std::to_string(om.frames.size()) +
                                                          " differs from skeleton length " + std::to_string(n));
    for (std::size_t f = 0; f < n; ++f) {
        const auto& s = om.frames[f];
        std::string path = idx("object_motion.frames", f);
        if (!unit(s.cx)) throw ConditionError(path + ".cx", "must lie in [0,1]");
        if (!unit(s.cy)) throw ConditionError(path + ".cy", "must lie in [0,1]");
        if (om.encoding == ObjectEncoding::bbox) {
            if (!(s.w > 0.0) || !unit(s.w)) throw ConditionError(path + ".w", "must be > 0 and <= 1");
            if (!(s.h > 0.0) || !unit(s.h)) throw ConditionError(path + ".h", "must be > 0 and <= 1");
            if (!std::isfinite(s.theta)) throw ConditionError(path + ".theta", "must be finite");
        }
        if (om.encoding == ObjectEncoding::gaussian_dot && !(s.sigma > 0.0 && std::isfinite(s.sigma)))
            throw ConditionError(path + ".sigma", "must be > 0");
    }
    if (!(clip.paste_w > 0.0) || !unit(clip.paste_w)) throw ConditionError("object_paste_size[0]", "must be > 0");
    if (!(clip.paste_h > 0.0) || !unit(clip.paste_h)) throw ConditionError("object_paste_size[1]", "must be > 0");
    if (clip.face_boxes) {
        if (clip.face_boxes->size() != n)
            throw ConditionError("face_boxes", "length must equal n = " + std::to_string(n));
        for (std::size_t f = 0; f < n; ++f) {
            const auto& b = (*clip.face_boxes)[f];
            if (!unit(b.x0) || !unit(b.y0) || !unit(b.x1) || !unit(b.y1) || b.x1 < b.x0 || b.y1 < b.y0)
                throw ConditionError(idx("face_boxes", f), "box must satisfy 0 <= x0 <= x1 <= 1, 0 <= y0 <= y1 <= 1");
        }
    }
}

namespace {

void require_keys(const json& j, const std::string& path, std::initializer_list<const char*> required,
                  std::initializer_list<const char*> optional = {}) {
    if (!j.is_object()) throw ConditionError(path.empty() ? "$" : path, "expected an object");
    std::set<std::string> allowed;
    for (auto k : required) {
        allowed.insert(k);
        if (!j.contains(k)) throw ConditionError(path.empty() ? k : path + "." + k, "missing required key");
    }
    for (auto k : optional) allowed.insert(k);
    for (const auto& [k, _] : j.items())
        if (!allowed.count(k)) throw ConditionError(path.empty() ? k : path + "." + k, "unknown key");
}

double num(const json& j, const std::string& path) {
    if (!j.is_number()) throw ConditionError(path, "expected a number");
    return j.get<double>();
}

}  // namespace

ConditionClip from_json(const json& j) {
    require_keys(j, "", {"version", "n", "skeleton", "object_motion", "object_paste_size", "text", "audio_path"},
                 {"face_boxes"});
    if (!j["version"].is_number_integer() || j["version"].get<int>() != kConditionFileVersion)
        throw ConditionError("version", "unsupported version (expected " + std::to_string(kConditionFileVersion) + ")");
    if (!j["n"].is_number_integer() || j["n"].get<std::int64_t>() < 1)
        throw ConditionError("n", "must be a positive integer");
    const auto n = j["n"].get<std::size_t>();

    ConditionClip clip;
    const json& sk = j["skeleton"];
    require_keys(sk, "skeleton", {"retained_parts", "frames"});
    if (!sk["retained_parts"].is_array()) throw ConditionError("skeleton.retained_parts", "expected an array");
    clip.skeleton.retained_parts = PartSet{};
    for (std::size_t i = 0; i < sk["retained_parts"].size(); ++i) {
        const auto& p = sk["retained_parts"][i];
        if (!p.is_string()) throw ConditionError(idx("skeleton.retained_parts", i), "expected a string");
        try {
            clip.skeleton.retained_parts.insert(parse_part(p.get<std::string>()));
        } catch (const std::invalid_argument& e) {
            throw ConditionError(idx("skeleton.retained_parts", i), e.what());
        }
    }
    if (!sk["frames"].is_array()) throw ConditionError("skeleton.frames", "expected an array");
    if (sk["frames"].size() != n)
        throw ConditionError("skeleton.frames", "length " + std::to_string(sk["frames"].size()) + " != n");
    for (std::size_t f = 0; f < n; ++f) {
        std::string fp = idx("skeleton.frames", f);
        const auto& fr = sk["frames"][f];
        require_keys(fr, fp, {"joints"});
        if (!fr["joints"].is_array()) throw ConditionError(fp + ".joints", "expected an array");
        SkeletonFrame frame;
        for (std::size_t k = 0; k < fr["joints"].size(); ++k) {
            std::string jp = idx(fp + ".joints", k);
            const auto& jt = fr["joints"][k];
            require_keys(jt, jp, {"id", "x", "y"});
            if (!jt["id"].is_number_integer()) throw ConditionError(jp + ".id", "expected an integer");
            int id = jt["id"].get<int>();
            if (id < 0 || id >= kNumJoints) throw ConditionError(jp + ".id", "joint id out of range");
            if (frame.joints[id]) throw ConditionError(jp + ".id", "duplicate joint id in frame");
            frame.joints[id] = Point{num(jt["x"], jp + ".x"), num(jt["y"], jp + ".y")};
        }
        clip.skeleton.frames.push_back(frame);
    }

    const json& om = j["object_motion"];
    require_keys(om, "object_motion", {"encoding", "frames"});
    if (!om["encoding"].is_string()) throw ConditionError("object_motion.encoding", "expected a string");
    try {
        clip.object_motion.encoding = parse_encoding(om["encoding"].get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw ConditionError("object_motion.encoding", e.what());
    }
    if (!om["frames"].is_array()) throw ConditionError("object_motion.frames", "expected an array");
    for (std::size_t f = 0; f < om["frames"].size(); ++f) {
        std::string fp = idx("object_motion.frames", f);
        const auto& fr = om["frames"][f];
        ObjectState s;
        switch (clip.object_motion.encoding) {
            case ObjectEncoding::dot: require_keys(fr, fp, {"cx", "cy"}); break;
            case ObjectEncoding::bbox: require_keys(fr, fp, {"cx", "cy", "w", "h", "theta"}); break;
            case ObjectEncoding::gaussian_dot: require_keys(fr, fp, {"cx", "cy", "sigma"}); break;
        }
        s.cx = num(fr["cx"], fp + ".cx");
        s.cy = num(fr["cy"], fp + ".cy");
        if (fr.contains("w")) s.w = num(fr["w"], fp + ".w");
        if (fr.contains("h")) s.h = num(fr["h"], fp + ".h");
        if (fr.contains("theta")) s.theta = num(fr["theta"], fp + ".theta");
        if (fr.contains("sigma")) s.sigma = num(fr["sigma"], fp + ".sigma");
        clip.object_motion.frames.push_back(s);
    }

    const json& ps = j["object_paste_size"];
    if (!ps.is_array() || ps.size() != 2) throw ConditionError("object_paste_size", "expected [w, h]");
    clip.paste_w = num(ps[0], "object_paste_size[0]");
    clip.paste_h = num(ps[1], "object_paste_size[1]");

    if (!j["text"].is_null()) {
        if (!j["text"].is_string()) throw ConditionError("text", "expected a string or null");
        clip.text = j["text"].get<std::string>();
    }
    if (!j["audio_path"].is_null()) {
        if (!j["audio_path"].is_string()) throw ConditionError("audio_path", "expected a string or null");
        clip.audio_path = j["audio_path"].get<std::string>();
    }
    if (j.contains("face_boxes") && !j["face_boxes"].is_null()) {
        const auto& fb = j["face_boxes"];
        if (!fb.is_array()) throw ConditionError("face_boxes", "expected an array");
        std::vector<Box> boxes;
        for (std::size_t f = 0; f < fb.size(); ++f) {
            std::string fp = idx("face_boxes", f);
            if (!fb[f].is_array() || fb[f].size() != 4) throw ConditionError(fp, "expected [x0, y0, x1, y1]");
            boxes.push_back({num(fb[f][0], fp + "[0]"), num(fb[f][1], fp + "[1]"), num(fb[f][2], fp + "[2]"),
                             num(fb[f][3], fp + "[3]")});
        }
        clip.face_boxes = std::move(boxes);
    }
    validate(clip);
    return clip;
}

json to_json(const ConditionClip& clip) {
    json parts = json::array();
    for (auto p : clip.skeleton.retained_parts.parts()) parts.push_back(part_name(p));
    json frames = json::array();
    for (const auto& fr : clip.skeleton.frames) {
        json joints = json::array();
        for (int id = 0; id < kNumJoints; ++id)
            if (fr.joints[id]) joints.push_back({{"id", id}, {"x", fr.joints[id]->x}, {"y", fr.joints[id]->y}});
        frames.push_back({{"joints", joints}});
    }
    json obj = json::array();
    for (const auto& s : clip.object_motion.frames) {
        json o = {{"cx", s.cx}, {"cy", s.cy}};
        if (clip.object_motion.encoding == ObjectEncoding::bbox) {
            o["w"] = s.w;
            o["h"] = s.h;
            o["theta"] = s.theta;
        } else if (clip.object_motion.encoding == ObjectEncoding::gaussian_dot) {
            o["sigma"] = s.sigma;
        }
        obj.push_back(o);
    }
    json j = {{"version", kConditionFileVersion},
              {"n", clip.n()},
              {"skeleton", {{"retained_parts", parts}, {"frames", frames}}},
              {"object_motion", {{"encoding", encoding_name(clip.object_motion.encoding)}, {"frames", obj}}},
              {"object_paste_size", {clip.paste_w, clip.paste_h}},
              {"text", clip.text ? json(*clip.text) : json(nullptr)},
              {"audio_path", clip.audio_path ? json(*clip.audio_path) : json(nullptr)}};
    if (clip.face_boxes) {
        json fb = json::array();
        for (const auto& b : *clip.face_boxes) fb.push_back({b.x0, b.y0, b.x1, b.y1});
        j["face_boxes"] = fb;
    }
    return j;
}

ConditionClip load_condition_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open condition file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConditionError("$", std::string("malformed JSON: ") + e.what());
    }
    return from_json(j);
}

void save_condition_file(const std::string& path, const ConditionClip& clip) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write condition file " + path);
    out << to_json(clip).dump(2) << '\n';
}

SkeletonSequence prune_skeleton(const SkeletonSequence& seq, PartSet keep) {
    if (keep.empty()) throw std::invalid_argument("no conditioning signal: empty part set");
    SkeletonSequence out;
    out.retained_parts = seq.retained_parts.intersect(keep);
    out.frames.reserve(seq.frames.size());
    for (const auto& fr : seq.frames) {
        SkeletonFrame pruned;
        for (int id = 0; id < kNumJoints; ++id)
            if (fr.joints[id] && keep.contains(part_of(id))) pruned.joints[id] = fr.joints[id];
        out.frames.push_back(pruned);
    }
    return out;
}

Resolution parse_resolution(const std::string& s) {
    auto x = s.find('x');
    if (x == std::string::npos) throw std::invalid_argument("resolution must look like HxW, got '" + s + "'");
    Resolution r;
    try {
        r.height = std::stoll(s.substr(0, x));
        r.width = std::stoll(s.substr(x + 1));
    } catch (const std::exception&) {
        throw std::invalid_argument("resolution must look like HxW, got '" + s + "'");
    }
    if (r.height <= 0 || r.width <= 0) throw std::invalid_argument("resolution must be positive");
    return r;
}

namespace {

double lerp(double a, double b, double s) { return (1.0 - s) * a + s * b; }

}  // namespace

ConditionClip interpolate_keyframes(const ConditionClip& clip, const std::vector<std::int64_t>& edited) {
    const std::int64_t n = clip.n();
    if (edited.empty()) throw std::invalid_argument("no edited frames");
    for (std::size_t k = 0; k < edited.size(); ++k) {
        if (edited[k] < 0 || edited[k] >= n)
            throw std::invalid_argument("edited frame index " + std::to_string(edited[k]) + " out of range [0," +
                                        std::to_string(n) + ")");
        if (k > 0 && edited[k] <= edited[k - 1]) throw std::invalid_argument("edited frame indices must be sorted and unique");
    }
    if (edited.front() != 0 || edited.back() != n - 1)
        throw std::invalid_argument("first and last frames must be among the edited frames");

    ConditionClip out = clip;
    for (std::size_t k = 0; k + 1 < edited.size(); ++k) {
        const std::int64_t a = edited[k], b = edited[k + 1];
        for (std::int64_t i = a + 1; i < b; ++i) {
            const double s = static_cast<double>(i - a) / static_cast<double>(b - a);
            const auto& fa = clip.skeleton.frames[a];
            const auto& fb = clip.skeleton.frames[b];
            auto& fo = out.skeleton.frames[i];
            for (int id = 0; id < kNumJoints; ++id) {
                if (fa.joints[id] && fb.joints[id])
                    fo.joints[id] = Point{lerp(fa.joints[id]->x, fb.joints[id]->x, s),
                                          lerp(fa.joints[id]->y, fb.joints[id]->y, s)};
                else
                    fo.joints[id].reset();
            }
            const auto& oa = clip.object_motion.frames[a];
            const auto& ob = clip.object_motion.frames[b];
            out.object_motion.frames[i] = ObjectState{lerp(oa.cx, ob.cx, s),       lerp(oa.cy, ob.cy, s),
                                                      lerp(oa.w, ob.w, s),         lerp(oa.h, ob.h, s),
                                                      lerp(oa.theta, ob.theta, s), lerp(oa.sigma, ob.sigma, s)};
            if (clip.face_boxes) {
                const auto& ba = (*clip.face_boxes)[a];
                const auto& bb = (*clip.face_boxes)[b];
                (*out.face_boxes)[i] = Box{lerp(ba.x0, bb.x0, s), lerp(ba.y0, bb.y0, s), lerp(ba.x1, bb.x1, s),
                                           lerp(ba.y1, bb.y1, s)};
            }
        }
    }
    return out;
}

}  // namespace homa::conditions
