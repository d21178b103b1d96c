#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <unistd.h>

#include "homa/audio.hpp"

using namespace homa;
using namespace homa::audio;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    return fs::temp_directory_path() / ("homa_audio_" + std::to_string(::getpid()) + "_" + name);
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Wave tone(double hz, double seconds, double amp = 0.5) {
    Wave w;
    const auto n = static_cast<std::int64_t>(seconds * kSampleRate);
    for (std::int64_t i = 0; i < n; ++i)
        w.samples.push_back(static_cast<std::int16_t>(std::lround(amp * 32767 * std::sin(2 * std::numbers::pi * hz * i / kSampleRate))));
    return w;
}

double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

}  // namespace

TEST_CASE("wav layout is canonical little-endian PCM16") {
    Wave w;
    w.samples = {0, 1, -1, 32767, -32768, 258};
    const auto p = temp_file("layout.wav");
    write_wav(p.string(), w);
    const auto b = bytes_of(p);
    REQUIRE(b.size() == 44 + 12);
    auto u32 = [&](std::size_t o) { return b[o] | b[o + 1] << 8 | b[o + 2] << 16 | static_cast<std::uint32_t>(b[o + 3]) << 24; };
    auto u16 = [&](std::size_t o) { return b[o] | b[o + 1] << 8; };
    CHECK(std::string(b.begin(), b.begin() + 4) == "RIFF");
    CHECK(u32(4) == 36 + 12);
    CHECK(std::string(b.begin() + 8, b.begin() + 16) == "WAVEfmt ");
    CHECK(u32(16) == 16);
    CHECK(u16(20) == 1);
    CHECK(u16(22) == 1);
    CHECK(u32(24) == 16000);
    CHECK(u32(28) == 32000);
    CHECK(u16(32) == 2);
    CHECK(u16(34) == 16);
    CHECK(std::string(b.begin() + 36, b.begin() + 40) == "data");
    CHECK(u32(40) == 12);
    // 258 = 0x0102 stored low byte first; -1 is 0xFFFF.
    CHECK(b[54] == 0x02);
    CHECK(b[55] == 0x01);
    CHECK(b[48] == 0xFF);
    CHECK(b[49] == 0xFF);
    CHECK(read_wav(p.string()).samples == w.samples);
    fs::remove(p);
}

TEST_CASE("wav reader skips foreign chunks and rejects other formats") {
    const auto p = temp_file("chunks.wav");
    Wave w;
    w.samples = {5, -5, 7};
    write_wav(p.string(), w);
    auto b = bytes_of(p);
    // Insert a LIST chunk between fmt and data.
    std::vector<std::uint8_t> list = {'L', 'I', 'S', 'T', 3, 0, 0, 0, 'a', 'b', 'c', 0};
    b.insert(b.begin() + 36, list.begin(), list.end());
    write_bytes(p, b);
    CHECK(read_wav(p.string()).samples == w.samples);

    auto stereo = bytes_of(p);
    stereo[22] = 2;
    write_bytes(p, stereo);
    CHECK_THROWS_WITH_AS(read_wav(p.string()), doctest::Contains("mono"), std::invalid_argument);
    auto rate = b;
    rate[24] = 0x40;
    rate[25] = 0x1F;  // 8000 Hz
    write_bytes(p, rate);
    CHECK_THROWS_AS(read_wav(p.string()), std::invalid_argument);
    write_bytes(p, {'n', 'o', 'p', 'e'});
    CHECK_THROWS_AS(read_wav(p.string()), std::invalid_argument);
    fs::remove(p);
}

TEST_CASE("wav features") {
    SUBCASE("silence maps to zero") {
        Wave w;
        w.samples.assign(16000, 0);
        const Array f = wav_features(w, 8, 8.0);
        CHECK(f.shape() == Shape{8, kFeatureDim});
        for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(f[i] == 0.0);
    }
    SUBCASE("a pure tone peaks in the band containing it") {
        for (double hz : {300.0, 1000.0, 3000.0}) {
            const Array f = wav_features(tone(hz, 1.0), 4, 8.0);
            // Band k peaks at the (k+1)-th of 18 mel-spaced edges between 60 Hz and 8 kHz.
            const double m0 = mel(60.0), m1 = mel(8000.0);
            std::int64_t expect = 0;
            double best = 1e9;
            for (std::int64_t k = 0; k < kFeatureDim; ++k) {
                const double centre = m0 + (m1 - m0) * static_cast<double>(k + 1) / (kFeatureDim + 1);
                if (std::abs(centre - mel(hz)) < best) best = std::abs(centre - mel(hz)), expect = k;
            }
            for (std::int64_t fr = 0; fr < 4; ++fr) {
                std::int64_t arg = 0;
                for (std::int64_t k = 1; k < kFeatureDim; ++k)
                    if (f[fr * kFeatureDim + k] > f[fr * kFeatureDim + arg]) arg = k;
                CHECK(arg == expect);
            }
        }
    }
    SUBCASE("louder frames give larger features") {
        const Wave w = synth_speech({0.0, 0.2, 0.9}, 8.0, 1);
        const Array f = wav_features(w, 3, 8.0);
        double s[3] = {0, 0, 0};
        for (int fr = 0; fr < 3; ++fr)
            for (std::int64_t k = 0; k < kFeatureDim; ++k) s[fr] += f[fr * kFeatureDim + k];
        CHECK(s[0] < s[1]);
        CHECK(s[1] < s[2]);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(wav_features(tone(100, 0.1), 0, 8.0), std::invalid_argument);
        CHECK_THROWS_AS(wav_features(tone(100, 0.1), 2, 0.0), std::invalid_argument);
    }
}

TEST_CASE("feature files") {
    const auto p = temp_file("feats.json");
    Array a(Shape{3, 2});
    for (std::int64_t i = 0; i < 6; ++i) a[i] = 0.25 * static_cast<double>(i) - 0.5;
    write_feature_file(p.string(), a);
    const Array b = read_feature_file(p.string());
    CHECK(b.shape() == a.shape());
    for (std::int64_t i = 0; i < 6; ++i) CHECK(b[i] == a[i]);
    CHECK(load_audio(p.string(), 3, 8.0).shape() == a.shape());
    CHECK_THROWS_AS(load_audio(p.string(), 4, 8.0), std::invalid_argument);

    std::ofstream(p) << "[[1, 2], [3]]";
    CHECK_THROWS_WITH_AS(read_feature_file(p.string()), doctest::Contains("[1]"), std::invalid_argument);
    std::ofstream(p) << "[[1, \"x\"]]";
    CHECK_THROWS_AS(read_feature_file(p.string()), std::invalid_argument);
    CHECK_THROWS_AS(load_audio((p.string() + ".mp3"), 3, 8.0), std::invalid_argument);
    fs::remove(p);

    const auto wp = temp_file("speech.wav");
    write_wav(wp.string(), synth_speech({0.5, 0.5, 0.5, 0.5, 0.5}, 8.0, 2));
    CHECK(load_audio(wp.string(), 5, 8.0).shape() == Shape{5, kFeatureDim});
    fs::remove(wp);
}
