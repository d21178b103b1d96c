#include "homa/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace homa {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform_open(), u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
}

Array Rng::normal_array(Shape s, double stddev) {
    Array a(std::move(s));
    for (auto& v : a.data()) v = stddev * normal();
    return a;
}

ag::Var& ParameterStore::add(const std::string& name, Array value) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    return params_.emplace(name, ag::Var::leaf(std::move(value), true)).first->second;
}

const ag::Var& ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

ag::Var& ParameterStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

ag::Var& ParameterStore::clone(const std::string& src, const std::string& dst) {
    Array copy = get(src).value();
    ag::Var& v = add(dst, std::move(copy));
    provenance_[dst] = src;
    return v;
}

std::vector<std::string> ParameterStore::clone_subtree(const std::string& src_prefix, const std::string& dst_prefix) {
    std::vector<std::string> out;
    for (const auto& name : names(src_prefix)) {
        std::string dst = dst_prefix + name.substr(src_prefix.size());
        clone(name, dst);
        out.push_back(dst);
    }
    return out;
}

void ParameterStore::set_provenance(const std::string& dst, const std::string& src) {
    if (!contains(dst)) throw std::out_of_range("unknown parameter: " + dst);
    provenance_[dst] = src;
}

std::optional<std::string> ParameterStore::source_of(const std::string& name) const {
    auto it = provenance_.find(name);
    if (it == provenance_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> ParameterStore::names(const std::string& prefix) const {
    std::vector<std::string> out;
    for (auto it = params_.lower_bound(prefix); it != params_.end() && it->first.starts_with(prefix); ++it)
        out.push_back(it->first);
    return out;
}

std::int64_t ParameterStore::count(const std::string& prefix) const {
    std::int64_t n = 0;
    for (auto it = params_.lower_bound(prefix); it != params_.end() && it->first.starts_with(prefix); ++it)
        n += it->second.value().numel();
    return n;
}

void ParameterStore::erase_prefix(const std::string& prefix) {
    for (const auto& name : names(prefix)) {
        params_.erase(name);
        provenance_.erase(name);
    }
}

void ParameterStore::zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
}

void ParameterStore::assign(const std::string& name, const Array& value) {
    ag::Var& v = get(name);
    if (v.shape() != value.shape())
        throw std::invalid_argument("assign " + name + ": shape " + shape_str(value.shape()) + " vs " +
                                    shape_str(v.shape()));
    v.mutable_value() = value;
}

ParameterStore ParameterStore::deep_copy() const {
    ParameterStore out;
    for (const auto& [name, v] : params_) out.add(name, v.value());
    out.provenance_ = provenance_;
    return out;
}

Array init_normal(Rng& rng, Shape s, double stddev) { return rng.normal_array(std::move(s), stddev); }

Array init_linear_weight(Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
    Array a(Shape{fan_in, fan_out});
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : a.data()) v = rng.uniform(-bound, bound);
    return a;
}

void add_linear(ParameterStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, Rng& rng,
                bool zero) {
    store.add(prefix + ".w", zero ? Array(Shape{in, out}) : init_linear_weight(rng, in, out));
    store.add(prefix + ".b", Array(Shape{out}));
}

ag::Var apply_linear(const ParameterStore& store, const std::string& prefix, const ag::Var& x) {
    return ag::linear(x, store.get(prefix + ".w"), store.get(prefix + ".b"));
}

double Adam::step(ParameterStore& store, const std::vector<std::string>& trainable_prefixes) {
    auto trainable = [&](const std::string& name) {
        if (trainable_prefixes.empty()) return true;
        for (const auto& p : trainable_prefixes)
            if (name.starts_with(p)) return true;
        return false;
    };
    double sq = 0.0;
    for (const auto& [name, v] : store.all()) {
        if (!trainable(name) || v.node()->grad.empty()) continue;
        for (double g : v.node()->grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = (opt_.grad_clip > 0.0 && norm > opt_.grad_clip) ? opt_.grad_clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (const auto& [name, v] : store.all()) {
        if (!trainable(name) || v.node()->grad.empty()) continue;
        auto& node = *v.node();
        auto& [m, s] = moments_[name];
        if (m.size() != node.grad.size()) {
            m.assign(node.grad.size(), 0.0);
            s.assign(node.grad.size(), 0.0);
        }
        auto w = node.value.data();
        for (std::size_t i = 0; i < m.size(); ++i) {
            double g = node.grad[i] * clip;
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
            s[i] = opt_.beta2 * s[i] + (1.0 - opt_.beta2) * g * g;
            w[i] -= opt_.lr * (m[i] / bc1) / (std::sqrt(s[i] / bc2) + opt_.eps);
        }
    }
    return norm;
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'O', 'M', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store, const std::string& metadata_json) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write checkpoint " + path);
        os.write(kMagic, 8);
        put<std::uint32_t>(os, kVersion);
        put<std::uint64_t>(os, metadata_json.size());
        os.write(metadata_json.data(), static_cast<std::streamsize>(metadata_json.size()));
        put<std::uint64_t>(os, store.all().size());
        for (const auto& [name, v] : store.all()) {
            put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            const auto& shape = v.shape();
            put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
            for (auto d : shape) put<std::int64_t>(os, d);
            os.write(reinterpret_cast<const char*>(v.value().ptr()),
                     static_cast<std::streamsize>(v.value().numel() * sizeof(double)));
        }
        put<std::uint64_t>(os, store.provenance().size());
        for (const auto& [dst, src] : store.provenance()) {
            put<std::uint32_t>(os, static_cast<std::uint32_t>(dst.size()));
            os.write(dst.data(), static_cast<std::streamsize>(dst.size()));
            put<std::uint32_t>(os, static_cast<std::uint32_t>(src.size()));
            os.write(src.data(), static_cast<std::streamsize>(src.size()));
        }
        if (!os) throw std::runtime_error("failed writing checkpoint " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot finalize checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not a checkpoint: " + path);
    if (get_pod<std::uint32_t>(is) != kVersion) throw std::runtime_error("unsupported checkpoint version");
    LoadedCheckpoint out;
    auto read_str = [&](std::uint64_t n) {
        std::string s(n, '\0');
        is.read(s.data(), static_cast<std::streamsize>(n));
        if (!is) throw std::runtime_error("truncated checkpoint");
        return s;
    };
    out.metadata_json = read_str(get_pod<std::uint64_t>(is));
    auto count = get_pod<std::uint64_t>(is);
    for (std::uint64_t k = 0; k < count; ++k) {
        std::string name = read_str(get_pod<std::uint32_t>(is));
        auto rank = get_pod<std::uint32_t>(is);
        Shape shape(rank);
        for (auto& d : shape) d = get_pod<std::int64_t>(is);
        Array a(shape);
        is.read(reinterpret_cast<char*>(a.ptr()), static_cast<std::streamsize>(a.numel() * sizeof(double)));
        if (!is) throw std::runtime_error("truncated checkpoint");
        out.store.add(name, std::move(a));
    }
    auto nprov = get_pod<std::uint64_t>(is);
    for (std::uint64_t k = 0; k < nprov; ++k) {
        std::string dst = read_str(get_pod<std::uint32_t>(is));
        std::string src = read_str(get_pod<std::uint32_t>(is));
        out.store.set_provenance(dst, src);
    }
    return out;
}

}  // namespace homa
