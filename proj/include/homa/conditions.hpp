#pragma once

// Weak human/object motion conditions: sparse skeletons, object trajectories
// and the side channels carried alongside them.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homa/image.hpp"

namespace homa::conditions {

enum class BodyPart : std::uint8_t { arms = 0, hands = 1, torso = 2, legs = 3, head = 4 };
inline constexpr int kNumParts = 5;

/// 17 body joints (COCO order) followed by 21 joints per hand, left then right.
inline constexpr int kNumBodyJoints = 17;
inline constexpr int kNumHandJoints = 21;
inline constexpr int kNumJoints = kNumBodyJoints + 2 * kNumHandJoints;
inline constexpr int kLeftHandBase = kNumBodyJoints;
inline constexpr int kRightHandBase = kNumBodyJoints + kNumHandJoints;

namespace joint {
inline constexpr int nose = 0, left_eye = 1, right_eye = 2, left_ear = 3, right_ear = 4;
inline constexpr int left_shoulder = 5, right_shoulder = 6, left_elbow = 7, right_elbow = 8;
inline constexpr int left_wrist = 9, right_wrist = 10, left_hip = 11, right_hip = 12;
inline constexpr int left_knee = 13, right_knee = 14, left_ankle = 15, right_ankle = 16;
}  // namespace joint

BodyPart part_of(int joint_id);
std::string joint_name(int joint_id);
std::string part_name(BodyPart p);
BodyPart parse_part(const std::string& s);

struct Bone {
    int a, b;
    BodyPart part;
};
const std::vector<Bone>& bones();

/// Bit set over BodyPart.
class PartSet {
public:
    PartSet() = default;
    PartSet(std::initializer_list<BodyPart> parts) {
        for (auto p : parts) insert(p);
    }
    static PartSet all() { return PartSet(0x1F); }
    void insert(BodyPart p) { bits_ |= 1u << static_cast<unsigned>(p); }
    bool contains(BodyPart p) const { return bits_ & (1u << static_cast<unsigned>(p)); }
    bool empty() const { return bits_ == 0; }
    bool subset_of(PartSet o) const { return (bits_ & ~o.bits_) == 0; }
    PartSet intersect(PartSet o) const { return PartSet(bits_ & o.bits_); }
    std::vector<BodyPart> parts() const;
    friend bool operator==(PartSet, PartSet) = default;

private:
    explicit PartSet(unsigned bits) : bits_(bits) {}
    unsigned bits_ = 0;
};

struct Point {
    double x = 0.0, y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Absent joints are std::nullopt.
struct SkeletonFrame {
    std::array<std::optional<Point>, kNumJoints> joints{};
    friend bool operator==(const SkeletonFrame&, const SkeletonFrame&) = default;
};

struct SkeletonSequence {
    std::vector<SkeletonFrame> frames;
    PartSet retained_parts = PartSet::all();
    friend bool operator==(const SkeletonSequence&, const SkeletonSequence&) = default;
};

enum class ObjectEncoding { dot, bbox, gaussian_dot };
std::string encoding_name(ObjectEncoding e);
ObjectEncoding parse_encoding(const std::string& s);

/// Per-frame object payload; which fields matter depends on the encoding.
struct ObjectState {
    double cx = 0.5, cy = 0.5;
    double w = 0.0, h = 0.0, theta = 0.0;  // bbox
    double sigma = 0.0;                     // gaussian_dot
    friend bool operator==(const ObjectState&, const ObjectState&) = default;
};

struct ObjectMotion {
    ObjectEncoding encoding = ObjectEncoding::dot;
    std::vector<ObjectState> frames;
    friend bool operator==(const ObjectMotion&, const ObjectMotion&) = default;
};

/// Normalized axis-aligned box [x0, y0, x1, y1].
struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    friend bool operator==(const Box&, const Box&) = default;
};

struct ConditionClip {
    SkeletonSequence skeleton;
    ObjectMotion object_motion;
    std::optional<std::string> text;
    std::optional<std::string> audio_path;
    double paste_w = 0.25, paste_h = 0.25;
    /// Per-frame face boxes for the audio adapter mask; optional.
    std::optional<std::vector<Box>> face_boxes;

    std::int64_t n() const { return static_cast<std::int64_t>(skeleton.frames.size()); }
    friend bool operator==(const ConditionClip&, const ConditionClip&) = default;
};

/// Validation failure carrying the JSON path of the offending field.
class ConditionError : public std::invalid_argument {
public:
    ConditionError(std::string path, const std::string& message)
        : std::invalid_argument(path + ": " + message), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

/// Throws ConditionError on any invariant violation.
void validate(const ConditionClip& clip);

inline constexpr int kConditionFileVersion = 1;
ConditionClip from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConditionClip& clip);
ConditionClip load_condition_file(const std::string& path);
void save_condition_file(const std::string& path, const ConditionClip& clip);

/// Keep only joints of `keep`. Throws on an empty set.
SkeletonSequence prune_skeleton(const SkeletonSequence& seq, PartSet keep);

struct Resolution {
    std::int64_t height = 64, width = 64;
};
Resolution parse_resolution(const std::string& s);  // "64x64" = height x width

/// Stroke radius for bones/joints and the object dot radius, in pixels.
double bone_radius(Resolution res);
double dot_radius(Resolution res);

Video rasterize_pose(const SkeletonSequence& seq, Resolution res);
Video rasterize_object_motion(const ObjectMotion& m, Resolution res);
/// Per-pixel max of two equally sized videos (single-encoder ablation input).
Video composite(const Video& a, const Video& b);

/// Linear interpolation between edited frames; edited frames are kept exactly.
ConditionClip interpolate_keyframes(const ConditionClip& clip, const std::vector<std::int64_t>& edited);

}  // namespace homa::conditions
