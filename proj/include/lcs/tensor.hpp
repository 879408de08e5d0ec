#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcs {

// Single error type for the whole library; messages name the failing
// operation and the offending shapes/values.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major f64 tensor. Rank 0 is a scalar (one value, empty shape).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}
    Tensor(std::vector<int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_numel(shape_))
            throw Error("tensor: value count " + std::to_string(data_.size()) +
                        " does not match shape " + shape_str());
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
    size_t numel() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    // rank-2 row access
    double* row(int64_t r) { return data_.data() + static_cast<size_t>(r) * cols(); }
    const double* row(int64_t r) const { return data_.data() + static_cast<size_t>(r) * cols(); }
    int64_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
    int64_t cols() const { return rank() < 2 ? 1 : shape_[1]; }

    double item() const {
        if (data_.size() != 1) throw Error("tensor: item() on non-scalar shape " + shape_str());
        return data_[0];
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i > 0) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static size_t checked_numel(const std::vector<int64_t>& shape) {
        size_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw Error("tensor: negative dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

}  // namespace lcs
