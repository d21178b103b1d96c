#pragma once

// Minimal reverse-mode automatic differentiation over row-major matrices.
//
// Every op treats its operands as 2D: rows = numel / last_dim, cols = last_dim.
// Graph nodes are created only when some input requires a gradient and grad
// mode is enabled on the calling thread.

#include <functional>
#include <memory>
#include <vector>

#include "homa/array.hpp"

namespace homa::ag {

struct Node {
    Array value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var constant(Array value);
    static Var leaf(Array value, bool requires_grad = true);

    const Array& value() const { return node_->value; }
    Array& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t rows() const;
    std::int64_t cols() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }

    /// Accumulated gradient (zeros if none has flowed).
    Array grad() const;
    void zero_grad();

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Run reverse accumulation from a scalar.
void backward(const Var& loss);

// Linear algebra
Var matmul(const Var& a, const Var& b);
/// x [N,in] * w [in,out] + b [out]
Var linear(const Var& x, const Var& w, const Var& b);

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a [N,M] + r [1,M] broadcast over rows.
Var add_row(const Var& a, const Var& r);
/// a [N,M] * r [1,M] broadcast over rows.
Var mul_row(const Var& a, const Var& r);
Var silu(const Var& a);
Var gelu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);

/// Layer norm over the last axis, no affine parameters.
Var layer_norm(const Var& x, double eps = 1e-6);

/// Multi-head scaled dot-product attention. q [Lq,d], k [Lk,d], v [Lk,d].
/// `allow`, when non-null, is an Lq*Lk row-major 0/1 matrix; query rows
/// with no allowed key produce zeros.
Var attention(const Var& q, const Var& k, const Var& v, int heads,
              std::shared_ptr<const std::vector<std::uint8_t>> allow = nullptr);

/// Rotate channel pairs of each head by per-row phases; cos/sin are [L, d_head/2].
Var rope(const Var& x, const Array& cos, const Array& sin, int heads);

// Structural
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& x, std::int64_t begin, std::int64_t end);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& x, std::int64_t begin, std::int64_t end);
/// out[i] = x[index[i]] (index -1 yields a zero row).
Var gather_rows(const Var& x, std::shared_ptr<const std::vector<std::int64_t>> index);
Var reshape(const Var& x, Shape shape);
/// Rows with mask[r] == 0 are copied from x bit-exactly; others are x + update.
Var masked_add(const Var& x, const Var& update, std::shared_ptr<const std::vector<std::uint8_t>> mask);

// Reductions
Var mse(const Var& pred, const Array& target);
Var mean(const Var& x);

}  // namespace homa::ag
