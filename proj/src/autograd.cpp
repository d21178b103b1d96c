#include "homa/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace homa::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

std::int64_t rows_of(const Array& a) {
    if (a.rank() == 0) return 1;
    std::int64_t c = a.shape().back();
    return c == 0 ? 0 : a.numel() / c;
}
std::int64_t cols_of(const Array& a) { return a.rank() == 0 ? 1 : a.shape().back(); }

CMapM cmap(const Array& a) { return CMapM(a.ptr(), rows_of(a), cols_of(a)); }
MapM gmap(Node& n) {
    auto& g = n.grad_buffer();
    return MapM(g.data(), rows_of(n.value), cols_of(n.value));
}

Var make(Array value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool any = false;
    if (g_grad_enabled)
        for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (auto& v : inputs) node->parents.push_back(v.node());
        node->backward_fn = std::move(fn);
    }
    return Var(node);
}

void check_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

template <class F, class D>
Var unary(const Var& a, F f, D df) {
    Array out(a.shape());
    const auto& x = a.value();
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
    return make(std::move(out), {a}, [df](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i]);
    });
}

}  // namespace

std::vector<double>& Node::grad_buffer() {
    if (grad.size() != static_cast<std::size_t>(value.numel())) grad.assign(value.numel(), 0.0);
    return grad;
}

Var Var::constant(Array value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(n);
}

Var Var::leaf(Array value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(n);
}

std::int64_t Var::rows() const { return rows_of(value()); }
std::int64_t Var::cols() const { return cols_of(value()); }

Array Var::grad() const {
    if (node_->grad.empty()) return Array(shape());
    return Array(shape(), node_->grad);
}

void Var::zero_grad() { node_->grad.clear(); }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& loss) {
    if (loss.value().numel() != 1) throw std::invalid_argument("backward expects a scalar");
    if (!loss.requires_grad()) return;
    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !p->backward_fn) continue;  // leaf
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Free intermediate gradients; leaves keep theirs.
    for (Node* n : order)
        if (n->backward_fn) n->grad.clear();
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    Array out(Shape{a.rows(), b.cols()});
    MapM(out.ptr(), a.rows(), b.cols()).noalias() = cmap(a.value()) * cmap(b.value());
    return make(std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        CMapM g(self.grad.data(), rows_of(self.value), cols_of(self.value));
        if (pa.requires_grad) gmap(pa).noalias() += g * cmap(pb.value).transpose();
        if (pb.requires_grad) gmap(pb).noalias() += cmap(pa.value).transpose() * g;
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x.cols() != w.rows())
        throw std::invalid_argument("linear: input width " + std::to_string(x.cols()) + " vs weight " +
                                    shape_str(w.shape()));
    if (b.value().numel() != w.cols()) throw std::invalid_argument("linear: bias size mismatch");
    const std::int64_t n = x.rows(), m = w.cols();
    Array out(Shape{n, m});
    MapM o(out.ptr(), n, m);
    o.noalias() = cmap(x.value()) * cmap(w.value());
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().ptr(), m);
    return make(std::move(out), {x, w, b}, [](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];
        CMapM g(self.grad.data(), rows_of(self.value), cols_of(self.value));
        if (px.requires_grad) gmap(px).noalias() += g * cmap(pw.value).transpose();
        if (pw.requires_grad) gmap(pw).noalias() += cmap(px.value).transpose() * g;
        if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            Eigen::Map<Eigen::RowVectorXd>(gb.data(), g.cols()) += g.colwise().sum();
        }
    });
}

Var add(const Var& a, const Var& b) {
    check_same(a, b, "add");
    Array out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make(std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same(a, b, "sub");
    Array out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make(std::move(out), {a, b}, [](Node& self) {
        double sign = 1.0;
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
            }
            sign = -1.0;
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same(a, b, "mul");
    Array out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make(std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var add_row(const Var& a, const Var& r) {
    const std::int64_t n = a.rows(), m = a.cols();
    if (r.value().numel() != m) throw std::invalid_argument("add_row: width mismatch");
    Array out(a.shape());
    MapM(out.ptr(), n, m) = cmap(a.value()).rowwise() + Eigen::Map<const Eigen::RowVectorXd>(r.value().ptr(), m);
    return make(std::move(out), {a, r}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pr = *self.parents[1];
        CMapM g(self.grad.data(), rows_of(self.value), cols_of(self.value));
        if (pa.requires_grad) gmap(pa) += g;
        if (pr.requires_grad)
            Eigen::Map<Eigen::RowVectorXd>(pr.grad_buffer().data(), g.cols()) += g.colwise().sum();
    });
}

Var mul_row(const Var& a, const Var& r) {
    const std::int64_t n = a.rows(), m = a.cols();
    if (r.value().numel() != m) throw std::invalid_argument("mul_row: width mismatch");
    Array out(a.shape());
    Eigen::Map<const Eigen::RowVectorXd> rv(r.value().ptr(), m);
    MapM(out.ptr(), n, m) = cmap(a.value()).array().rowwise() * rv.array();
    return make(std::move(out), {a, r}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pr = *self.parents[1];
        const std::int64_t m = cols_of(self.value);
        CMapM g(self.grad.data(), rows_of(self.value), m);
        if (pa.requires_grad)
            gmap(pa).array() += g.array().rowwise() * Eigen::Map<const Eigen::RowVectorXd>(pr.value.ptr(), m).array();
        if (pr.requires_grad)
            Eigen::Map<Eigen::RowVectorXd>(pr.grad_buffer().data(), m) +=
                (g.array() * cmap(pa.value).array()).colwise().sum().matrix();
    });
}

Var silu(const Var& a) {
    return unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x) {
            double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var gelu(const Var& a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))); },
        [](double x) {
            double u = k * (x + 0.044715 * x * x * x);
            double t = std::tanh(u);
            double du = k * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Var tanh(const Var& a) {
    return unary(
        a, [](double x) { return std::tanh(x); },
        [](double x) {
            double t = std::tanh(x);
            return 1.0 - t * t;
        });
}

Var exp(const Var& a) {
    return unary(
        a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var layer_norm(const Var& x, double eps) {
    const std::int64_t n = x.rows(), m = x.cols();
    Array out(x.shape());
    auto inv_std = std::make_shared<std::vector<double>>(n);
    const double* src = x.value().ptr();
    for (std::int64_t r = 0; r < n; ++r) {
        const double* row = src + r * m;
        double mu = 0.0;
        for (std::int64_t c = 0; c < m; ++c) mu += row[c];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::int64_t c = 0; c < m; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(m);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::int64_t c = 0; c < m; ++c) out[r * m + c] = (row[c] - mu) * is;
    }
    return make(std::move(out), {x}, [inv_std](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        const std::int64_t n = rows_of(self.value), m = cols_of(self.value);
        auto& g = p.grad_buffer();
        for (std::int64_t r = 0; r < n; ++r) {
            const double* dy = self.grad.data() + r * m;
            const double* y = self.value.ptr() + r * m;
            double mdy = 0.0, mdyy = 0.0;
            for (std::int64_t c = 0; c < m; ++c) {
                mdy += dy[c];
                mdyy += dy[c] * y[c];
            }
            mdy /= static_cast<double>(m);
            mdyy /= static_cast<double>(m);
            for (std::int64_t c = 0; c < m; ++c) g[r * m + c] += (*inv_std)[r] * (dy[c] - mdy - y[c] * mdyy);
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads,
              std::shared_ptr<const std::vector<std::uint8_t>> allow) {
    const std::int64_t lq = q.rows(), lk = k.rows(), d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != lk)
        throw std::invalid_argument("attention: q/k/v shape mismatch");
    if (heads <= 0 || d % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
    if (allow && static_cast<std::int64_t>(allow->size()) != lq * lk)
        throw std::invalid_argument("attention: allow-matrix size mismatch");
    const std::int64_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    auto probs = std::make_shared<std::vector<RowMat>>(heads);
    Array out(Shape{lq, d});
    MapM o(out.ptr(), lq, d);
    CMapM qm = cmap(q.value()), km = cmap(k.value()), vm = cmap(v.value());
    for (int h = 0; h < heads; ++h) {
        RowMat s = (qm.middleCols(h * dh, dh) * km.middleCols(h * dh, dh).transpose()) * inv_sqrt;
        for (std::int64_t i = 0; i < lq; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t j = 0; j < lk; ++j)
                if (!allow || (*allow)[i * lk + j]) mx = std::max(mx, s(i, j));
            double z = 0.0;
            for (std::int64_t j = 0; j < lk; ++j) {
                double e = (!allow || (*allow)[i * lk + j]) ? std::exp(s(i, j) - mx) : 0.0;
                s(i, j) = e;
                z += e;
            }
            if (z > 0.0) s.row(i) /= z;
        }
        o.middleCols(h * dh, dh).noalias() = s * vm.middleCols(h * dh, dh);
        (*probs)[h] = std::move(s);
    }
    return make(std::move(out), {q, k, v}, [probs, heads, dh, inv_sqrt](Node& self) {
        Node& pq = *self.parents[0];
        Node& pk = *self.parents[1];
        Node& pv = *self.parents[2];
        const std::int64_t lq = rows_of(self.value), d = cols_of(self.value);
        CMapM g(self.grad.data(), lq, d);
        CMapM qm = cmap(pq.value), km = cmap(pk.value), vm = cmap(pv.value);
        for (int h = 0; h < heads; ++h) {
            const RowMat& p = (*probs)[h];
            auto gh = g.middleCols(h * dh, dh);
            if (pv.requires_grad) gmap(pv).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
            if (!pq.requires_grad && !pk.requires_grad) continue;
            RowMat dp = gh * vm.middleCols(h * dh, dh).transpose();
            Eigen::VectorXd rs = (dp.array() * p.array()).rowwise().sum();
            RowMat ds = p.array() * (dp.colwise() - rs).array();
            ds *= inv_sqrt;
            if (pq.requires_grad) gmap(pq).middleCols(h * dh, dh).noalias() += ds * km.middleCols(h * dh, dh);
            if (pk.requires_grad)
                gmap(pk).middleCols(h * dh, dh).noalias() += ds.transpose() * qm.middleCols(h * dh, dh);
        }
    });
}

Var rope(const Var& x, const Array& cos, const Array& sin, int heads) {
    const std::int64_t l = x.rows(), d = x.cols();
    if (d % heads != 0) throw std::invalid_argument("rope: width not divisible by heads");
    const std::int64_t dh = d / heads, half = dh / 2;
    if (dh % 2 != 0) throw std::invalid_argument("rope: head width must be even");
    if (cos.shape() != Shape{l, half} || sin.shape() != Shape{l, half})
        throw std::invalid_argument("rope: phase table shape " + shape_str(cos.shape()) + " expected [" +
                                    std::to_string(l) + "," + std::to_string(half) + "]");
    Array out(x.shape());
    const double* src = x.value().ptr();
    for (std::int64_t r = 0; r < l; ++r)
        for (int h = 0; h < heads; ++h)
            for (std::int64_t i = 0; i < half; ++i) {
                double c = cos[r * half + i], s = sin[r * half + i];
                std::int64_t o = r * d + h * dh + 2 * i;
                out[o] = src[o] * c - src[o + 1] * s;
                out[o + 1] = src[o] * s + src[o + 1] * c;
            }
    auto cs = std::make_shared<std::pair<Array, Array>>(cos, sin);
    return make(std::move(out), {x}, [cs, heads](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        const std::int64_t l = rows_of(self.value), d = cols_of(self.value), dh = d / heads, half = dh / 2;
        auto& g = p.grad_buffer();
        for (std::int64_t r = 0; r < l; ++r)
            for (int h = 0; h < heads; ++h)
                for (std::int64_t i = 0; i < half; ++i) {
                    double c = cs->first[r * half + i], s = cs->second[r * half + i];
                    std::int64_t o = r * d + h * dh + 2 * i;
                    double g0 = self.grad[o], g1 = self.grad[o + 1];
                    g[o] += g0 * c + g1 * s;
                    g[o + 1] += -g0 * s + g1 * c;
                }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
    const std::int64_t m = parts[0].cols();
    std::int64_t n = 0;
    for (const auto& p : parts) {
        if (p.cols() != m) throw std::invalid_argument("concat_rows: width mismatch");
        n += p.rows();
    }
    Array out(Shape{n, m});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.value().ptr(), p.value().numel(), out.ptr() + off);
        off += p.value().numel();
    }
    return make(std::move(out), parts, [](Node& self) {
        std::int64_t off = 0;
        for (auto& p : self.parents) {
            std::int64_t cnt = p->value.numel();
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::int64_t i = 0; i < cnt; ++i) g[i] += self.grad[off + i];
            }
            off += cnt;
        }
    });
}

Var slice_rows(const Var& x, std::int64_t begin, std::int64_t end) {
    const std::int64_t m = x.cols();
    if (begin < 0 || end > x.rows() || begin > end) throw std::out_of_range("slice_rows out of range");
    Array out(Shape{end - begin, m},
              std::vector<double>(x.value().ptr() + begin * m, x.value().ptr() + end * m));
    return make(std::move(out), {x}, [begin](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        std::int64_t off = begin * cols_of(p.value);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
    const std::int64_t n = parts[0].rows();
    std::int64_t m = 0;
    for (const auto& p : parts) {
        if (p.rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
        m += p.cols();
    }
    Array out(Shape{n, m});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        MapM(out.ptr(), n, m).middleCols(off, p.cols()) = cmap(p.value());
        off += p.cols();
    }
    return make(std::move(out), parts, [](Node& self) {
        const std::int64_t n = rows_of(self.value), m = cols_of(self.value);
        CMapM g(self.grad.data(), n, m);
        std::int64_t off = 0;
        for (auto& p : self.parents) {
            std::int64_t c = cols_of(p->value);
            if (p->requires_grad) gmap(*p) += g.middleCols(off, c);
            off += c;
        }
    });
}

Var slice_cols(const Var& x, std::int64_t begin, std::int64_t end) {
    const std::int64_t n = x.rows();
    if (begin < 0 || end > x.cols() || begin > end) throw std::out_of_range("slice_cols out of range");
    Array out(Shape{n, end - begin});
    MapM(out.ptr(), n, end - begin) = cmap(x.value()).middleCols(begin, end - begin);
    return make(std::move(out), {x}, [begin](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        const std::int64_t w = cols_of(self.value);
        gmap(p).middleCols(begin, w) += CMapM(self.grad.data(), rows_of(self.value), w);
    });
}

Var gather_rows(const Var& x, std::shared_ptr<const std::vector<std::int64_t>> index) {
    const std::int64_t m = x.cols(), n = x.rows();
    Array out(Shape{static_cast<std::int64_t>(index->size()), m});
    for (std::size_t i = 0; i < index->size(); ++i) {
        std::int64_t src = (*index)[i];
        if (src < -1 || src >= n) throw std::out_of_range("gather_rows index out of range");
        if (src >= 0) std::copy_n(x.value().ptr() + src * m, m, out.ptr() + i * m);
    }
    return make(std::move(out), {x}, [index](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        const std::int64_t m = cols_of(self.value);
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < index->size(); ++i) {
            std::int64_t src = (*index)[i];
            if (src < 0) continue;
            for (std::int64_t c = 0; c < m; ++c) g[src * m + c] += self.grad[i * m + c];
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Array out = x.value().reshaped(std::move(shape));
    return make(std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var masked_add(const Var& x, const Var& update, std::shared_ptr<const std::vector<std::uint8_t>> mask) {
    check_same(x, update, "masked_add");
    const std::int64_t n = x.rows(), m = x.cols();
    if (static_cast<std::int64_t>(mask->size()) != n) throw std::invalid_argument("masked_add: mask length mismatch");
    Array out = x.value();
    for (std::int64_t r = 0; r < n; ++r)
        if ((*mask)[r])
            for (std::int64_t c = 0; c < m; ++c) out[r * m + c] += update.value()[r * m + c];
    return make(std::move(out), {x, update}, [mask](Node& self) {
        Node& px = *self.parents[0];
        Node& pu = *self.parents[1];
        const std::int64_t m = cols_of(self.value);
        if (px.requires_grad) {
            auto& g = px.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pu.requires_grad) {
            auto& g = pu.grad_buffer();
            for (std::size_t r = 0; r < mask->size(); ++r)
                if ((*mask)[r])
                    for (std::int64_t c = 0; c < m; ++c) g[r * m + c] += self.grad[r * m + c];
        }
    });
}

Var mse(const Var& pred, const Array& target) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                    shape_str(target.shape()));
    const std::int64_t n = target.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double e = pred.value()[i] - target[i];
        acc += e * e;
    }
    auto tgt = std::make_shared<Array>(target);
    return make(Array(Shape{1}, std::vector<double>{acc / static_cast<double>(n)}), {pred}, [tgt](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        const double k = 2.0 * self.grad[0] / static_cast<double>(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (p.value[i] - (*tgt)[i]);
    });
}

Var mean(const Var& x) {
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    const double n = static_cast<double>(x.value().numel());
    return make(Array(Shape{1}, std::vector<double>{acc / n}), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        const double k = self.grad[0] / static_cast<double>(g.size());
        for (auto& v : g) v += k;
    });
}

}  // namespace homa::ag
