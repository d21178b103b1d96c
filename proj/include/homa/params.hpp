#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "homa/autograd.hpp"
#include "homa/rng.hpp"

namespace homa {

/// Named weight registry keyed by dotted paths ("blocks.3.img_qkv.w").
/// Names are stable across save/load. Cloned entries remember their source.
class ParameterStore {
public:
    ag::Var& add(const std::string& name, Array value);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    const ag::Var& get(const std::string& name) const;
    ag::Var& get(const std::string& name);

    /// Copy every parameter under `src_prefix` to `dst_prefix`, value-equal but
    /// independently mutable. Returns the new names.
    std::vector<std::string> clone_subtree(const std::string& src_prefix, const std::string& dst_prefix);
    /// Copy one parameter to a new name, recording provenance.
    ag::Var& clone(const std::string& src, const std::string& dst);
    std::optional<std::string> source_of(const std::string& name) const;
    void set_provenance(const std::string& dst, const std::string& src);
    const std::map<std::string, std::string>& provenance() const { return provenance_; }

    std::vector<std::string> names(const std::string& prefix = "") const;
    std::int64_t count(const std::string& prefix = "") const;
    void erase_prefix(const std::string& prefix);
    void zero_grad();

    /// Overwrite values of matching names (shapes must agree).
    void assign(const std::string& name, const Array& value);

    const std::map<std::string, ag::Var>& all() const { return params_; }

    /// Deep copy: new leaves with equal values.
    ParameterStore deep_copy() const;

private:
    std::map<std::string, ag::Var> params_;
    std::map<std::string, std::string> provenance_;
};

Array init_normal(Rng& rng, Shape s, double stddev);
/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a [fan_in, fan_out] weight.
Array init_linear_weight(Rng& rng, std::int64_t fan_in, std::int64_t fan_out);

/// Register `prefix.w` [in,out] and `prefix.b` [out]; zero-initialized on request.
void add_linear(ParameterStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, Rng& rng,
                bool zero = false);
/// x * prefix.w + prefix.b
ag::Var apply_linear(const ParameterStore& store, const std::string& prefix, const ag::Var& x);

class Adam {
public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double grad_clip = 1.0;  // global L2 norm; <= 0 disables
    };
    explicit Adam(Options o) : opt_(o) {}
    /// Apply one update to every parameter in `store` whose name starts with
    /// one of `trainable_prefixes` (empty list = all). Returns the pre-clip grad norm.
    double step(ParameterStore& store, const std::vector<std::string>& trainable_prefixes = {});

private:
    Options opt_;
    std::int64_t t_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

/// Binary archive: magic "HOMACKPT", u32 version, u64 metadata length + metadata
/// (UTF-8 JSON), u64 count, then per entry: u32 name length, name, u32 rank,
/// i64 dims, f64 little-endian data; then u64 provenance count and
/// (dst, src) name pairs.
void save_checkpoint(const std::string& path, const ParameterStore& store, const std::string& metadata_json);
struct LoadedCheckpoint {
    ParameterStore store;
    std::string metadata_json;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace homa
