#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>

namespace homa {

/// Codec compression factors shared by every module that maps between pixel
/// frames and latent frames.
inline constexpr std::int64_t kTemporalFactor = 4;
inline constexpr std::int64_t kSpatialFactor = 8;

/// f = 1 + (n - 1) / 4; n must be 1 mod 4.
inline std::int64_t latent_frame_count(std::int64_t n_frames) {
    if (n_frames < 1 || (n_frames - 1) % kTemporalFactor != 0)
        throw std::invalid_argument("frame count " + std::to_string(n_frames) + " is not 1 mod " +
                                    std::to_string(kTemporalFactor));
    return 1 + (n_frames - 1) / kTemporalFactor;
}

inline std::int64_t pixel_frame_count(std::int64_t latent_frames) {
    return 1 + (latent_frames - 1) * kTemporalFactor;
}

/// Pixel frames [first, last] covered by latent frame j: {0} for j = 0,
/// {4j-3 .. 4j} afterwards.
inline std::pair<std::int64_t, std::int64_t> latent_window(std::int64_t j) {
    if (j == 0) return {0, 0};
    return {kTemporalFactor * j - (kTemporalFactor - 1), kTemporalFactor * j};
}

}  // namespace homa
