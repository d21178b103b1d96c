#include "homa/audio.hpp"

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "homa/rng.hpp"

namespace homa::audio {

namespace {

std::uint32_t u32(const std::uint8_t* p) { return p[0] | p[1] << 8 | p[2] << 16 | static_cast<std::uint32_t>(p[3]) << 24; }
std::uint16_t u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double inv_mel(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

Wave read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
        throw std::invalid_argument(path + ": not a RIFF/WAVE file");
    bool have_fmt = false;
    Wave w;
    for (std::size_t pos = 12; pos + 8 <= b.size();) {
        const std::uint32_t size = u32(b.data() + pos + 4);
        const std::uint8_t* body = b.data() + pos + 8;
        if (pos + 8 + size > b.size()) throw std::invalid_argument(path + ": truncated chunk");
        if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
            if (size < 16) throw std::invalid_argument(path + ": short fmt chunk");
            const auto format = u16(body), channels = u16(body + 2), bits = u16(body + 14);
            w.sample_rate = static_cast<int>(u32(body + 4));
            if (format != 1 || channels != 1 || bits != 16 || w.sample_rate != kSampleRate)
                throw std::invalid_argument(path + ": expected mono 16-bit PCM at 16 kHz (got format " +
                                            std::to_string(format) + ", " + std::to_string(channels) + " channels, " +
                                            std::to_string(bits) + " bits, " + std::to_string(w.sample_rate) + " Hz)");
            have_fmt = true;
        } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
            if (!have_fmt) throw std::invalid_argument(path + ": data chunk before fmt");
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = static_cast<std::int16_t>(u16(body + 2 * i));
            return w;
        }
        pos += 8 + size + (size & 1);
    }
    throw std::invalid_argument(path + ": no data chunk");
}

void write_wav(const std::string& path, const Wave& w) {
    if (w.sample_rate != kSampleRate) throw std::invalid_argument("only 16 kHz audio is written");
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::vector<std::uint8_t> b;
    b.insert(b.end(), {'R', 'I', 'F', 'F'});
    put32(b, 36 + data_bytes);
    b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put32(b, 16);
    put16(b, 1);
    put16(b, 1);
    put32(b, kSampleRate);
    put32(b, kSampleRate * 2);
    put16(b, 2);
    put16(b, 16);
    b.insert(b.end(), {'d', 'a', 't', 'a'});
    put32(b, data_bytes);
    for (auto s : w.samples) put16(b, static_cast<std::uint16_t>(s));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Array wav_features(const Wave& w, std::int64_t n_frames, double fps) {
    if (n_frames < 1 || !(fps > 0)) throw std::invalid_argument("feature extraction needs n >= 1 and fps > 0");
    constexpr std::int64_t bins = kWindow / 2 + 1;
    std::vector<double> hann(kWindow);
    for (std::int64_t i = 0; i < kWindow; ++i) hann[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / (kWindow - 1));
    std::vector<double> edges(kFeatureDim + 2);
    const double m0 = mel(60.0), m1 = mel(kSampleRate / 2.0);
    for (std::size_t k = 0; k < edges.size(); ++k)
        edges[k] = inv_mel(m0 + (m1 - m0) * static_cast<double>(k) / static_cast<double>(kFeatureDim + 1));
    const double hz_per_bin = static_cast<double>(kSampleRate) / kWindow;

    double* in = fftw_alloc_real(kWindow);
    fftw_complex* out = fftw_alloc_complex(bins);
    fftw_plan plan;
    {
        std::lock_guard lock(planner_mutex());
        plan = fftw_plan_dft_r2c_1d(static_cast<int>(kWindow), in, out, FFTW_ESTIMATE);
    }
    Array feats(Shape{n_frames, kFeatureDim});
    const auto total = static_cast<std::int64_t>(w.samples.size());
    for (std::int64_t f = 0; f < n_frames; ++f) {
        const auto centre = static_cast<std::int64_t>(std::floor((static_cast<double>(f) + 0.5) * kSampleRate / fps));
        for (std::int64_t i = 0; i < kWindow; ++i) {
            const std::int64_t s = centre - kWindow / 2 + i;
            in[i] = (s >= 0 && s < total ? w.samples[s] / 32768.0 : 0.0) * hann[i];
        }
        fftw_execute(plan);
        for (std::int64_t k = 0; k < kFeatureDim; ++k) {
            // Triangular mel filter.
            double e = 0, norm = 0;
            for (std::int64_t j = 0; j < bins; ++j) {
                const double hz = j * hz_per_bin;
                double g = 0;
                if (hz > edges[k] && hz <= edges[k + 1]) g = (hz - edges[k]) / (edges[k + 1] - edges[k]);
                else if (hz > edges[k + 1] && hz < edges[k + 2]) g = (edges[k + 2] - hz) / (edges[k + 2] - edges[k + 1]);
                if (g == 0) continue;
                e += g * (out[j][0] * out[j][0] + out[j][1] * out[j][1]);
                norm += g;
            }
            const double energy = norm > 0 ? e / (norm * kWindow) : 0.0;
            feats[f * kFeatureDim + k] = std::log1p(1000.0 * energy) / 10.0;
        }
    }
    {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
    return feats;
}

Array read_feature_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    const auto j = nlohmann::json::parse(is);
    if (!j.is_array() || j.empty()) throw std::invalid_argument(path + ": expected a non-empty array of frame vectors");
    const auto rows = static_cast<std::int64_t>(j.size());
    if (!j[0].is_array() || j[0].empty()) throw std::invalid_argument(path + "[0]: expected a non-empty number array");
    const auto cols = static_cast<std::int64_t>(j[0].size());
    Array a(Shape{rows, cols});
    for (std::int64_t r = 0; r < rows; ++r) {
        const auto& row = j[r];
        if (!row.is_array() || static_cast<std::int64_t>(row.size()) != cols)
            throw std::invalid_argument(path + "[" + std::to_string(r) + "]: expected " + std::to_string(cols) +
                                        " numbers");
        for (std::int64_t c = 0; c < cols; ++c) {
            if (!row[c].is_number())
                throw std::invalid_argument(path + "[" + std::to_string(r) + "][" + std::to_string(c) + "]: not a number");
            a[r * cols + c] = row[c].get<double>();
        }
    }
    return a;
}

void write_feature_file(const std::string& path, const Array& features) {
    if (features.rank() != 2) throw std::invalid_argument("features must be [n, dim]");
    nlohmann::json j = nlohmann::json::array();
    for (std::int64_t r = 0; r < features.dim(0); ++r) {
        auto row = nlohmann::json::array();
        for (std::int64_t c = 0; c < features.dim(1); ++c) row.push_back(features[r * features.dim(1) + c]);
        j.push_back(row);
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump() << '\n';
}

Array load_audio(const std::string& path, std::int64_t n_frames, double fps) {
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    Array a;
    if (ext == ".wav" || ext == ".WAV") a = wav_features(read_wav(path), n_frames, fps);
    else if (ext == ".json") a = read_feature_file(path);
    else throw std::invalid_argument(path + ": audio must be .wav or a .json feature file");
    if (a.dim(0) != n_frames)
        throw std::invalid_argument(path + ": " + std::to_string(a.dim(0)) + " feature frames, expected " +
                                    std::to_string(n_frames));
    return a;
}

Wave synth_speech(const std::vector<double>& loudness, double fps, std::uint64_t seed) {
    Rng rng(seed);
    Wave w;
    const auto per_frame = static_cast<std::int64_t>(std::lround(kSampleRate / fps));
    const double f0 = rng.uniform(120.0, 220.0);
    double phase = 0;
    for (double amp : loudness) {
        const double formant = rng.uniform(500.0, 2500.0);
        for (std::int64_t i = 0; i < per_frame; ++i) {
            phase += 2 * std::numbers::pi * f0 / kSampleRate;
            const double t = static_cast<double>(w.samples.size()) / kSampleRate;
            const double v = amp * (0.6 * std::sin(phase) + 0.3 * std::sin(2 * std::numbers::pi * formant * t));
            w.samples.push_back(static_cast<std::int16_t>(std::lround(std::clamp(v, -1.0, 1.0) * 32767.0)));
        }
    }
    return w;
}

}  // namespace homa::audio
