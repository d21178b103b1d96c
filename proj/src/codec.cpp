#include "homa/codec.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include <nlohmann/json.hpp>

namespace homa::codec {

using ag::Var;

namespace {

constexpr std::int64_t kS = kSpatialFactor;
constexpr std::int64_t kT = kTemporalFactor;

void check_video(const Array& v) {
    if (v.rank() != 5 || v.dim(4) != 3)
        throw std::invalid_argument("video tensor must be [b,n,H,W,3], got " + shape_str(v.shape()));
    if (v.dim(2) % kS != 0 || v.dim(3) % kS != 0)
        throw std::invalid_argument("video spatial size " + std::to_string(v.dim(2)) + "x" + std::to_string(v.dim(3)) +
                                    " is not divisible by " + std::to_string(kS));
    latent_frame_count(v.dim(1));
}

}  // namespace

std::shared_ptr<std::vector<std::int64_t>> neighbour_index(std::int64_t frames, std::int64_t h, std::int64_t w, int dy,
                                                           int dx) {
    auto idx = std::make_shared<std::vector<std::int64_t>>(frames * h * w);
    for (std::int64_t f = 0; f < frames; ++f)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                std::int64_t yy = y + dy, xx = x + dx;
                (*idx)[(f * h + y) * w + x] = (yy < 0 || xx < 0 || yy >= h || xx >= w) ? -1 : (f * h + yy) * w + xx;
            }
    return idx;
}

LatentShape latent_shape_for(const Shape& s, std::int64_t channels) {
    if (s.size() != 5) throw std::invalid_argument("video tensor must be rank 5");
    return {s[0], latent_frame_count(s[1]), s[2] / kS, s[3] / kS, channels};
}

Array video_to_blocks(const Array& video) {
    check_video(video);
    const std::int64_t b = video.dim(0), n = video.dim(1), H = video.dim(2), W = video.dim(3);
    const std::int64_t f = latent_frame_count(n), h = H / kS, w = W / kS;
    Array out(Shape{b * f * h * w, kBlockSize});
    double* o = out.ptr();
    const double* v = video.ptr();
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t j = 0; j < f; ++j)
            for (std::int64_t by = 0; by < h; ++by)
                for (std::int64_t bx = 0; bx < w; ++bx) {
                    for (std::int64_t t = 0; t < kT; ++t) {
                        const std::int64_t frame = j == 0 ? 0 : kT * j - (kT - 1) + t;
                        for (std::int64_t y = 0; y < kS; ++y) {
                            const double* src = v + (((bi * n + frame) * H + by * kS + y) * W + bx * kS) * 3;
                            o = std::copy_n(src, kS * 3, o);
                        }
                    }
                }
    return out;
}

Array blocks_to_video(const Array& blocks, std::int64_t b, std::int64_t f, std::int64_t h, std::int64_t w) {
    const std::int64_t n = pixel_frame_count(f), H = h * kS, W = w * kS;
    if (blocks.numel() != b * f * h * w * kBlockSize) throw std::invalid_argument("block count mismatch");
    Array out(Shape{b, n, H, W, 3});
    const double* src = blocks.ptr();
    double* v = out.ptr();
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t j = 0; j < f; ++j)
            for (std::int64_t by = 0; by < h; ++by)
                for (std::int64_t bx = 0; bx < w; ++bx) {
                    const double* blk = src + (((bi * f + j) * h + by) * w + bx) * kBlockSize;
                    // The first latent frame stores frame 0 in every slot; the last slot is used.
                    for (std::int64_t t = (j == 0 ? kT - 1 : 0); t < kT; ++t) {
                        const std::int64_t frame = j == 0 ? 0 : kT * j - (kT - 1) + t;
                        for (std::int64_t y = 0; y < kS; ++y)
                            std::copy_n(blk + (t * kS + y) * kS * 3, kS * 3,
                                        v + (((bi * n + frame) * H + by * kS + y) * W + bx * kS) * 3);
                    }
                }
    return out;
}

double psnr(const Array& a, const Array& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("psnr: shape mismatch");
    double se = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(4.0 / mse);
}

VideoCodec::VideoCodec(CodecConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    const std::int64_t c = cfg.channels;
    store_.add("enc.fc1.w", init_linear_weight(rng, kBlockSize, cfg.enc_hidden));
    store_.add("enc.fc1.b", Array(Shape{cfg.enc_hidden}));
    store_.add("enc.fc2.w", init_linear_weight(rng, cfg.enc_hidden, 2 * c));
    store_.add("enc.fc2.b", Array(Shape{2 * c}));
    store_.add("dec.fc1.w", init_linear_weight(rng, 9 * c, cfg.dec_hidden));
    store_.add("dec.fc1.b", Array(Shape{cfg.dec_hidden}));
    store_.add("dec.fc2.w", init_linear_weight(rng, cfg.dec_hidden, cfg.dec_hidden));
    store_.add("dec.fc2.b", Array(Shape{cfg.dec_hidden}));
    store_.add("dec.fc3.w", init_linear_weight(rng, cfg.dec_hidden, kBlockSize));
    store_.add("dec.fc3.b", Array(Shape{kBlockSize}));
    store_.add("latent.shift", Array(Shape{c}));
    store_.add("latent.scale", Array(Shape{c}, 1.0));
}

Var VideoCodec::encode_blocks(const Var& blocks) const {
    Var h = ag::silu(ag::linear(blocks, store_.get("enc.fc1.w"), store_.get("enc.fc1.b")));
    return ag::linear(h, store_.get("enc.fc2.w"), store_.get("enc.fc2.b"));
}

Var VideoCodec::decode_cells(const Var& z, std::int64_t frames, std::int64_t h, std::int64_t w) const {
    std::vector<Var> taps;
    taps.reserve(9);
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) taps.push_back(ag::gather_rows(z, neighbour_index(frames, h, w, dy, dx)));
    Var x = ag::concat_cols(taps);
    x = ag::silu(ag::linear(x, store_.get("dec.fc1.w"), store_.get("dec.fc1.b")));
    x = ag::silu(ag::linear(x, store_.get("dec.fc2.w"), store_.get("dec.fc2.b")));
    return ag::tanh(ag::linear(x, store_.get("dec.fc3.w"), store_.get("dec.fc3.b")));
}

Array VideoCodec::encode(const Array& video) const {
    ag::NoGradGuard guard;
    const auto ls = latent_shape_for(video.shape(), cfg_.channels);
    Var stats = encode_blocks(Var::constant(video_to_blocks(video)));
    const auto& shift = store_.get("latent.shift").value();
    const auto& scale = store_.get("latent.scale").value();
    const std::int64_t c = cfg_.channels, rows = stats.rows();
    Array out(Shape{ls.b, ls.f, ls.h, ls.w, c});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t k = 0; k < c; ++k) out[r * c + k] = (stats.value()[r * 2 * c + k] - shift[k]) * scale[k];
    if (!out.all_finite()) throw std::runtime_error("encode produced non-finite latents");
    return out;
}

Array VideoCodec::decode(const Array& latent) const {
    if (latent.rank() != 5 || latent.dim(4) != cfg_.channels)
        throw std::invalid_argument("latent must be [b,f,h,w," + std::to_string(cfg_.channels) + "], got " +
                                    shape_str(latent.shape()));
    ag::NoGradGuard guard;
    const std::int64_t b = latent.dim(0), f = latent.dim(1), h = latent.dim(2), w = latent.dim(3), c = cfg_.channels;
    const auto& shift = store_.get("latent.shift").value();
    const auto& scale = store_.get("latent.scale").value();
    Array z(Shape{b * f * h * w, c});
    for (std::int64_t r = 0; r < z.dim(0); ++r)
        for (std::int64_t k = 0; k < c; ++k) z[r * c + k] = latent[r * c + k] / scale[k] + shift[k];
    Var blocks = decode_cells(Var::constant(std::move(z)), b * f, h, w);
    return blocks_to_video(blocks.value(), b, f, h, w);
}

std::vector<double> VideoCodec::train(const std::vector<Array>& videos, const TrainOptions& opt) {
    if (videos.empty()) throw std::invalid_argument("codec training needs at least one video");
    struct Source {
        Array blocks;
        std::int64_t f, h, w;
    };
    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<Source>> groups;
    for (const auto& v : videos) {
        if (v.dim(0) != 1) throw std::invalid_argument("codec training expects single-item videos");
        auto ls = latent_shape_for(v.shape(), cfg_.channels);
        groups[{ls.h, ls.w}].push_back({video_to_blocks(v), ls.f, ls.h, ls.w});
    }
    std::vector<const std::vector<Source>*> group_list;
    for (const auto& [k, g] : groups) group_list.push_back(&g);

    Rng rng(opt.seed);
    Adam adam({.lr = opt.lr, .grad_clip = 1.0});
    const std::int64_t c = cfg_.channels;
    std::vector<double> losses;
    losses.reserve(opt.steps);
    for (std::int64_t step = 0; step < opt.steps; ++step) {
        const auto& group = *group_list[rng.integer(0, static_cast<std::int64_t>(group_list.size()) - 1)];
        const std::int64_t h = group[0].h, w = group[0].w, cells = h * w;
        Array batch(Shape{opt.frames_per_batch * cells, kBlockSize});
        for (std::int64_t i = 0; i < opt.frames_per_batch; ++i) {
            const auto& src = group[rng.integer(0, static_cast<std::int64_t>(group.size()) - 1)];
            const std::int64_t j = rng.integer(0, src.f - 1);
            std::copy_n(src.blocks.ptr() + j * cells * kBlockSize, cells * kBlockSize,
                        batch.ptr() + i * cells * kBlockSize);
        }
        store_.zero_grad();
        Var stats = encode_blocks(Var::constant(batch));
        Var mu = ag::slice_cols(stats, 0, c);
        Var logvar = ag::slice_cols(stats, c, 2 * c);
        Var eps = Var::constant(rng.normal_array(mu.shape()));
        Var z = ag::add(mu, ag::mul(ag::exp(ag::scale(logvar, 0.5)), eps));
        Var recon = decode_cells(z, opt.frames_per_batch, h, w);
        Var kl = ag::scale(ag::mean(ag::sub(ag::add(ag::mul(mu, mu), ag::exp(logvar)), ag::add_scalar(logvar, 1.0))),
                           0.5);
        Var loss = ag::add(ag::mse(recon, batch), ag::scale(kl, cfg_.kl_weight));
        if (!loss.value().all_finite()) throw std::runtime_error("codec loss is not finite at step " + std::to_string(step));
        ag::backward(loss);
        adam.step(store_, {"enc.", "dec."});
        losses.push_back(loss.value()[0]);
    }
    fit_whitening(videos);
    return losses;
}

void VideoCodec::fit_whitening(const std::vector<Array>& videos) {
    ag::NoGradGuard guard;
    const std::int64_t c = cfg_.channels;
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    std::int64_t count = 0;
    for (const auto& v : videos) {
        Var stats = encode_blocks(Var::constant(video_to_blocks(v)));
        for (std::int64_t r = 0; r < stats.rows(); ++r, ++count)
            for (std::int64_t k = 0; k < c; ++k) {
                double m = stats.value()[r * 2 * c + k];
                sum[k] += m;
                sq[k] += m * m;
            }
    }
    Array shift(Shape{c}), scale(Shape{c});
    for (std::int64_t k = 0; k < c; ++k) {
        double mean = sum[k] / count;
        double var = std::max(sq[k] / count - mean * mean, 1e-12);
        shift[k] = mean;
        scale[k] = 1.0 / std::sqrt(var);
    }
    store_.assign("latent.shift", shift);
    store_.assign("latent.scale", scale);
}

void VideoCodec::save(const std::string& path) const {
    nlohmann::json meta = {{"kind", "codec"},
                           {"channels", cfg_.channels},
                           {"enc_hidden", cfg_.enc_hidden},
                           {"dec_hidden", cfg_.dec_hidden},
                           {"kl_weight", cfg_.kl_weight}};
    save_checkpoint(path, store_, meta.dump());
}

VideoCodec VideoCodec::load(const std::string& path) {
    auto ck = load_checkpoint(path);
    auto meta = nlohmann::json::parse(ck.metadata_json);
    if (meta.value("kind", "") != "codec") throw std::runtime_error(path + " is not a codec checkpoint");
    VideoCodec codec;
    codec.cfg_.channels = meta.at("channels");
    codec.cfg_.enc_hidden = meta.at("enc_hidden");
    codec.cfg_.dec_hidden = meta.at("dec_hidden");
    codec.cfg_.kl_weight = meta.at("kl_weight");
    codec.store_ = std::move(ck.store);
    return codec;
}

std::int64_t TokenGrid::flat(const TokenIndex& t) const {
    const std::int64_t f = t.frame - frame_offset;
    if (f < 0 || f >= frames || t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
        throw std::out_of_range("token index outside the grid");
    return (f * rows + t.row) * cols + t.col;
}

std::vector<TokenIndex> grid_index(std::int64_t frames, std::int64_t rows, std::int64_t cols,
                                   std::int64_t frame_offset) {
    std::vector<TokenIndex> out;
    out.reserve(frames * rows * cols);
    for (std::int64_t f = 0; f < frames; ++f)
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < cols; ++c) out.push_back({f + frame_offset, r, c});
    return out;
}

TokenGrid patchify(const Array& z, std::int64_t p) {
    if (z.rank() != 5) throw std::invalid_argument("patchify expects [b,f,h,w,c]");
    const std::int64_t b = z.dim(0), f = z.dim(1), h = z.dim(2), w = z.dim(3), c = z.dim(4);
    if (p <= 0 || h % p != 0 || w % p != 0)
        throw std::invalid_argument("latent " + std::to_string(h) + "x" + std::to_string(w) +
                                    " not divisible by patch size " + std::to_string(p));
    TokenGrid t;
    t.frames = f;
    t.rows = h / p;
    t.cols = w / p;
    t.index = grid_index(f, t.rows, t.cols);
    const std::int64_t L = t.length(), d = p * p * c;
    t.data = Array(Shape{b, L, d});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t k = 0; k < L; ++k) {
            const auto& ix = t.index[k];
            for (std::int64_t dy = 0; dy < p; ++dy)
                for (std::int64_t dx = 0; dx < p; ++dx)
                    std::copy_n(z.ptr() + (((bi * f + ix.frame) * h + ix.row * p + dy) * w + ix.col * p + dx) * c, c,
                                t.data.ptr() + (bi * L + k) * d + (dy * p + dx) * c);
        }
    return t;
}

Array unpatchify(const TokenGrid& t, std::int64_t p, std::int64_t c) {
    if (t.data.rank() != 3 || t.data.dim(1) != t.length() || t.data.dim(2) != p * p * c)
        throw std::invalid_argument("token grid shape " + shape_str(t.data.shape()) + " inconsistent with patch " +
                                    std::to_string(p) + " and channels " + std::to_string(c));
    const std::int64_t b = t.data.dim(0), f = t.frames, h = t.rows * p, w = t.cols * p, L = t.length(),
                       d = p * p * c;
    Array z(Shape{b, f, h, w, c});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t k = 0; k < L; ++k) {
            const auto& ix = t.index[k];
            const std::int64_t fr = ix.frame - t.frame_offset;
            for (std::int64_t dy = 0; dy < p; ++dy)
                for (std::int64_t dx = 0; dx < p; ++dx)
                    std::copy_n(t.data.ptr() + (bi * L + k) * d + (dy * p + dx) * c, c,
                                z.ptr() + (((bi * f + fr) * h + ix.row * p + dy) * w + ix.col * p + dx) * c);
        }
    return z;
}

Var patchify_rows(const Var& rows, std::int64_t f, std::int64_t h, std::int64_t w, std::int64_t p) {
    if (rows.rows() != f * h * w) throw std::invalid_argument("patchify_rows: row count mismatch");
    if (h % p != 0 || w % p != 0) throw std::invalid_argument("patchify_rows: size not divisible by patch");
    const std::int64_t hp = h / p, wp = w / p, L = f * hp * wp;
    std::vector<Var> parts;
    for (std::int64_t dy = 0; dy < p; ++dy)
        for (std::int64_t dx = 0; dx < p; ++dx) {
            auto idx = std::make_shared<std::vector<std::int64_t>>(L);
            for (std::int64_t fr = 0; fr < f; ++fr)
                for (std::int64_t r = 0; r < hp; ++r)
                    for (std::int64_t c = 0; c < wp; ++c)
                        (*idx)[(fr * hp + r) * wp + c] = (fr * h + r * p + dy) * w + c * p + dx;
            parts.push_back(ag::gather_rows(rows, idx));
        }
    return parts.size() == 1 ? parts[0] : ag::concat_cols(parts);
}

Var unpatchify_rows(const Var& tokens, std::int64_t f, std::int64_t h, std::int64_t w, std::int64_t p) {
    const std::int64_t hp = h / p, wp = w / p, L = f * hp * wp;
    if (tokens.rows() != L || tokens.cols() % (p * p) != 0)
        throw std::invalid_argument("unpatchify_rows: token shape mismatch");
    const std::int64_t c = tokens.cols() / (p * p);
    Var flat = ag::reshape(tokens, {L * p * p, c});
    auto idx = std::make_shared<std::vector<std::int64_t>>(f * h * w);
    for (std::int64_t fr = 0; fr < f; ++fr)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                std::int64_t k = (fr * hp + y / p) * wp + x / p;
                (*idx)[(fr * h + y) * w + x] = k * p * p + (y % p) * p + x % p;
            }
    return ag::gather_rows(flat, idx);
}

}  // namespace homa::codec
