#pragma once

#include <memory>
#include <string>
#include <vector>

#include "homa/array.hpp"
#include "homa/autograd.hpp"
#include "homa/geometry.hpp"
#include "homa/params.hpp"

namespace homa::codec {

struct CodecConfig {
    std::int64_t channels = 8;
    std::int64_t enc_hidden = 192;
    std::int64_t dec_hidden = 192;
    double kl_weight = 1e-6;
};

/// Values per encoder block: 4 frames x 8 x 8 pixels x RGB.
inline constexpr std::int64_t kBlockSize = kTemporalFactor * kSpatialFactor * kSpatialFactor * 3;

struct LatentShape {
    std::int64_t b, f, h, w, c;
};
LatentShape latent_shape_for(const Shape& video_shape, std::int64_t channels);

/// Block video autoencoder. Every latent cell summarizes one 4x8x8 pixel
/// block (the first latent frame sees frame 0 repeated); the decoder reads a
/// 3x3 latent neighbourhood per block. Latents are whitened per channel with
/// statistics gathered at the end of training.
class VideoCodec {
public:
    VideoCodec() = default;
    VideoCodec(CodecConfig cfg, std::uint64_t seed);

    const CodecConfig& config() const { return cfg_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

    /// [b,n,H,W,3] in [-1,1] -> [b,f,H/8,W/8,c] (posterior mean, whitened).
    Array encode(const Array& video) const;
    /// [b,f,h,w,c] -> [b,1+4(f-1),8h,8w,3], clipped to [-1,1].
    Array decode(const Array& latent) const;

    struct TrainOptions {
        std::int64_t steps = 600;
        std::int64_t frames_per_batch = 6;
        double lr = 2e-3;
        std::uint64_t seed = 0;
    };
    /// Fit on a set of [1,n,H,W,3] videos; returns the per-step loss.
    std::vector<double> train(const std::vector<Array>& videos, const TrainOptions& opt);

    void save(const std::string& path) const;
    static VideoCodec load(const std::string& path);

private:
    ag::Var encode_blocks(const ag::Var& blocks) const;
    ag::Var decode_cells(const ag::Var& z, std::int64_t frames, std::int64_t h, std::int64_t w) const;
    void fit_whitening(const std::vector<Array>& videos);

    CodecConfig cfg_;
    ParameterStore store_;
};

/// Rows of per-block pixel values, ordered (b, latent frame, block row, block col).
Array video_to_blocks(const Array& video);
Array blocks_to_video(const Array& blocks, std::int64_t b, std::int64_t f, std::int64_t h, std::int64_t w);

/// Row index of the (dy, dx) neighbour of every cell of f frames of h x w
/// cells; -1 outside the frame.
std::shared_ptr<std::vector<std::int64_t>> neighbour_index(std::int64_t f, std::int64_t h, std::int64_t w, int dy,
                                                           int dx);

/// PSNR for signals in [-1,1] (peak-to-peak 2).
double psnr(const Array& a, const Array& b);

/// Per-token (frame, row, col) coordinates. Frame may be negative for
/// conditioning tokens placed before the video.
struct TokenIndex {
    std::int64_t frame = 0, row = 0, col = 0;
    friend bool operator==(const TokenIndex&, const TokenIndex&) = default;
};

/// Patchified latent: data [b, L, p*p*c] with tokens ordered (frame, row, col).
struct TokenGrid {
    Array data;
    std::int64_t frames = 0, rows = 0, cols = 0;
    std::int64_t frame_offset = 0;
    std::vector<TokenIndex> index;

    std::int64_t length() const { return frames * rows * cols; }
    std::int64_t flat(const TokenIndex& t) const;
};

std::vector<TokenIndex> grid_index(std::int64_t frames, std::int64_t rows, std::int64_t cols,
                                   std::int64_t frame_offset = 0);

TokenGrid patchify(const Array& latent, std::int64_t patch);
Array unpatchify(const TokenGrid& tokens, std::int64_t patch, std::int64_t channels);

/// Differentiable versions over latent rows [f*h*w, C] <-> tokens [L, p*p*C].
ag::Var patchify_rows(const ag::Var& rows, std::int64_t f, std::int64_t h, std::int64_t w, std::int64_t patch);
ag::Var unpatchify_rows(const ag::Var& tokens, std::int64_t f, std::int64_t h, std::int64_t w, std::int64_t patch);

}  // namespace homa::codec
