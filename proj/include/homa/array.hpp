#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace homa {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

/// Dense row-major array of doubles. Value type: copies are deep.
class Array {
public:
    Array() = default;
    explicit Array(Shape shape, double fill = 0.0);
    Array(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::int64_t dim(int i) const { return shape_.at(i < 0 ? shape_.size() + i : i); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[i]; }
    double operator[](std::int64_t i) const { return data_[i]; }

    std::int64_t offset(std::initializer_list<std::int64_t> idx) const;
    double& at(std::initializer_list<std::int64_t> idx) { return data_[offset(idx)]; }
    double at(std::initializer_list<std::int64_t> idx) const { return data_[offset(idx)]; }

    /// Same data, new shape with equal element count.
    Array reshaped(Shape s) const;

    bool all_finite() const;
    double max_abs() const;

    friend bool operator==(const Array& a, const Array& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

double max_abs_diff(const Array& a, const Array& b);

/// Concatenate along the last axis.
Array concat_last(std::span<const Array* const> parts);
/// Slice [begin, end) of the last axis.
Array slice_last(const Array& a, std::int64_t begin, std::int64_t end);
/// Slice [begin, end) along axis 1 (frame axis of [b,f,...] tensors).
Array slice_axis1(const Array& a, std::int64_t begin, std::int64_t end);
/// Concatenate along axis 1.
Array concat_axis1(std::span<const Array* const> parts);
/// Select one item along axis 0, keeping the axis.
Array take_batch(const Array& a, std::int64_t index);

}  // namespace homa
