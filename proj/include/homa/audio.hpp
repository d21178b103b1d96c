#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homa/array.hpp"

namespace homa::audio {

inline constexpr int kSampleRate = 16000;
inline constexpr std::int64_t kFeatureDim = 16;
inline constexpr std::int64_t kWindow = 512;

/// Mono 16-bit PCM.
struct Wave {
    int sample_rate = kSampleRate;
    std::vector<std::int16_t> samples;
};

/// Canonical 44-byte RIFF header ("RIFF", size, "WAVE", "fmt " chunk of 16
/// bytes with format 1, 1 channel, 16 kHz, 16 bits, then "data"), all fields
/// little-endian, followed by the samples. Unknown chunks before "data" are
/// skipped on read; anything but mono 16-bit PCM at 16 kHz is rejected.
Wave read_wav(const std::string& path);
void write_wav(const std::string& path, const Wave& w);

/// Per video frame: a Hann-windowed 512-sample excerpt centred on the frame's
/// midpoint, its power spectrum pooled into 16 mel-spaced bands between 60 Hz
/// and 8 kHz, each mapped through log1p(1000 E) / 10. Silence gives zeros.
Array wav_features(const Wave& w, std::int64_t n_frames, double fps);

/// JSON array of per-frame feature vectors of equal width.
Array read_feature_file(const std::string& path);
void write_feature_file(const std::string& path, const Array& features);

/// Features from a .wav (extracted) or .json (read) file, checked to have n rows.
Array load_audio(const std::string& path, std::int64_t n_frames, double fps);

/// Amplitude-modulated tone following per-frame loudness in [0, 1].
Wave synth_speech(const std::vector<double>& loudness, double fps, std::uint64_t seed);

}  // namespace homa::audio
