#pragma once

#include <cstdint>
#include <vector>

#include "homa/array.hpp"
#include "homa/conditions.hpp"
#include "homa/image.hpp"

namespace homa::synth {

inline constexpr std::int64_t kAudioDim = 16;

struct ClipSpec {
    std::int64_t n = 5;
    conditions::Resolution res{64, 64};
    std::uint64_t seed = 0;
    conditions::ObjectEncoding encoding = conditions::ObjectEncoding::dot;
    conditions::PartSet keep{conditions::BodyPart::arms, conditions::BodyPart::hands};
    bool with_object = true;
};

/// A stick-figure person moving an arm while holding a coloured shape, with
/// the ground-truth weak conditions that describe it.
struct SyntheticClip {
    Video video;
    conditions::ConditionClip conditions;
    conditions::SkeletonSequence full_skeleton;
    Frame human_ref;
    Frame object_image;
    /// Per-frame audio features [n, kAudioDim].
    Array audio;
};

SyntheticClip make_clip(const ClipSpec& spec);

/// `count` clips with seeds base_seed, base_seed + 1, ...
std::vector<SyntheticClip> make_set(std::int64_t count, const ClipSpec& base, std::uint64_t base_seed);

}  // namespace homa::synth
