#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpgan {

/// Dense row-major tensor of doubles. Copies are shallow (shared storage);
/// use clone() when a private buffer is needed. Convention for 4D data is
/// [batch, channel, row, col].
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape(std::move(shape)) {
        store_ = std::make_shared<std::vector<double>>(count(this->shape), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> values) : shape(std::move(shape)) {
        if (count(this->shape) != values.size())
            throw std::invalid_argument("tensor: value count does not match shape");
        store_ = std::make_shared<std::vector<double>>(std::move(values));
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : *t.store_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    bool defined() const { return store_ != nullptr; }
    int rank() const { return static_cast<int>(shape.size()); }

    int dim(int i) const {
        if (i < 0 || i >= rank()) throw std::out_of_range("tensor: dim index");
        return shape[static_cast<size_t>(i)];
    }

    std::size_t size() const { return store_ ? store_->size() : 0; }

    double* data() { return store_->data(); }
    const double* data() const { return store_->data(); }

    double& operator[](std::size_t i) { return (*store_)[i]; }
    double operator[](std::size_t i) const { return (*store_)[i]; }

    // 4D accessors; no bounds checking in release builds.
    double& at4(int n, int c, int y, int x) {
        return (*store_)[idx4(n, c, y, x)];
    }
    double at4(int n, int c, int y, int x) const {
        return (*store_)[idx4(n, c, y, x)];
    }

    std::size_t idx4(int n, int c, int y, int x) const {
        const auto& s = shape;
        return ((static_cast<std::size_t>(n) * s[1] + c) * s[2] + y) * s[3] + x;
    }

    // 3D accessors for [channel, row, col] data.
    double& at3(int c, int y, int x) { return (*store_)[idx3(c, y, x)]; }
    double at3(int c, int y, int x) const { return (*store_)[idx3(c, y, x)]; }

    std::size_t idx3(int c, int y, int x) const {
        const auto& s = shape;
        return (static_cast<std::size_t>(c) * s[1] + y) * s[2] + x;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.store_ = std::make_shared<std::vector<double>>(*store_);
        return t;
    }

    /// Copies values from `src` into this tensor's existing storage.
    void copy_from(const Tensor& src) {
        if (!same_shape(src)) throw std::invalid_argument("tensor: copy_from shape mismatch");
        *store_ = *src.store_;
    }

    void fill(double v) {
        for (auto& x : *store_) x = v;
    }

    bool shares_storage(const Tensor& o) const { return store_ == o.store_; }

    std::string shape_str() const {
        std::string s = "(";
        for (int i = 0; i < rank(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[static_cast<size_t>(i)]);
        }
        return s + ")";
    }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::vector<int> shape;

private:
    std::shared_ptr<std::vector<double>> store_;
};

inline bool all_finite(const Tensor& t) {
    const double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace dpgan
