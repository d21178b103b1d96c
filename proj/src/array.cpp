#include "homa/array.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace homa {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

Array::Array(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
        throw std::invalid_argument("data size " + std::to_string(data_.size()) + " does not match shape " +
                                    shape_str(shape_));
}

std::int64_t Array::offset(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape_.size()) throw std::out_of_range("index rank mismatch");
    std::int64_t off = 0;
    std::size_t k = 0;
    for (auto i : idx) {
        if (i < 0 || i >= shape_[k]) throw std::out_of_range("index out of range for shape " + shape_str(shape_));
        off = off * shape_[k] + i;
        ++k;
    }
    return off;
}

Array Array::reshaped(Shape s) const {
    if (shape_numel(s) != numel())
        throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Array(std::move(s), data_);
}

bool Array::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Array::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Array& a, const Array& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Array concat_last(std::span<const Array* const> parts) {
    if (parts.empty()) throw std::invalid_argument("concat of nothing");
    Shape lead(parts[0]->shape().begin(), parts[0]->shape().end() - 1);
    std::int64_t rows = shape_numel(lead);
    std::int64_t total = 0;
    for (const Array* p : parts) {
        Shape l(p->shape().begin(), p->shape().end() - 1);
        if (l != lead)
            throw std::invalid_argument("concat shape mismatch " + shape_str(parts[0]->shape()) + " vs " +
                                        shape_str(p->shape()));
        total += p->shape().back();
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    Array out(out_shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        double* dst = out.ptr() + r * total;
        for (const Array* p : parts) {
            std::int64_t c = p->shape().back();
            std::copy_n(p->ptr() + r * c, c, dst);
            dst += c;
        }
    }
    return out;
}

Array slice_last(const Array& a, std::int64_t begin, std::int64_t end) {
    std::int64_t c = a.shape().back();
    if (begin < 0 || end > c || begin > end) throw std::out_of_range("slice_last out of range");
    Shape s = a.shape();
    s.back() = end - begin;
    Array out(s);
    std::int64_t rows = c == 0 ? 0 : a.numel() / c;
    for (std::int64_t r = 0; r < rows; ++r)
        std::copy_n(a.ptr() + r * c + begin, end - begin, out.ptr() + r * (end - begin));
    return out;
}

Array slice_axis1(const Array& a, std::int64_t begin, std::int64_t end) {
    if (a.rank() < 2) throw std::invalid_argument("slice_axis1 needs rank >= 2");
    std::int64_t f = a.dim(1);
    if (begin < 0 || end > f || begin > end) throw std::out_of_range("slice_axis1 out of range");
    std::int64_t inner = f == 0 ? 0 : a.numel() / (a.dim(0) * f);
    Shape s = a.shape();
    s[1] = end - begin;
    Array out(s);
    for (std::int64_t b = 0; b < a.dim(0); ++b)
        std::copy_n(a.ptr() + (b * f + begin) * inner, (end - begin) * inner,
                    out.ptr() + b * (end - begin) * inner);
    return out;
}

Array concat_axis1(std::span<const Array* const> parts) {
    if (parts.empty()) throw std::invalid_argument("concat of nothing");
    const Shape& s0 = parts[0]->shape();
    std::int64_t total = 0;
    for (const Array* p : parts) {
        const Shape& s = p->shape();
        if (s.size() != s0.size() || s[0] != s0[0] || !std::equal(s.begin() + 2, s.end(), s0.begin() + 2))
            throw std::invalid_argument("concat_axis1 shape mismatch");
        total += s[1];
    }
    Shape out_shape = s0;
    out_shape[1] = total;
    Array out(out_shape);
    std::int64_t inner = shape_numel(Shape(s0.begin() + 2, s0.end()));
    for (std::int64_t b = 0; b < s0[0]; ++b) {
        double* dst = out.ptr() + b * total * inner;
        for (const Array* p : parts) {
            std::int64_t n = p->dim(1) * inner;
            std::copy_n(p->ptr() + b * n, n, dst);
            dst += n;
        }
    }
    return out;
}

Array take_batch(const Array& a, std::int64_t index) {
    if (index < 0 || index >= a.dim(0)) throw std::out_of_range("batch index out of range");
    Shape s = a.shape();
    s[0] = 1;
    std::int64_t inner = shape_numel(s);
    return Array(s, std::vector<double>(a.ptr() + index * inner, a.ptr() + (index + 1) * inner));
}

}  // namespace homa
