#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lns/error.hpp"

namespace lns {

/// Dense n-dimensional array of doubles in row-major order. The single
/// numeric currency of the library: feature maps, weights, assignments and
/// masks are all Tensors. An optional gradient buffer of identical shape can
/// be attached for learnable parameters.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless ensure_grad() was called

    Tensor() = default;

    explicit Tensor(std::vector<int> s, double fill = 0.0)
        : shape(std::move(s)), data(numel(shape), fill) {
        check_shape();
    }

    Tensor(std::vector<int> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        check_shape();
        if (data.size() != numel(shape)) {
            throw InvalidArgument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape product " + std::to_string(numel(shape)));
        }
    }

    static std::size_t numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int e : s) n *= static_cast<std::size_t>(e);
        return n;
    }

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double& operator[](std::size_t i) { return data[i]; }
    const double& operator[](std::size_t i) const { return data[i]; }

    // rank-2 access
    double& operator()(int i, int j) {
        return data[static_cast<std::size_t>(i) * dim(1) + j];
    }
    const double& operator()(int i, int j) const {
        return data[static_cast<std::size_t>(i) * dim(1) + j];
    }

    // rank-3 access (channel, row, col)
    double& operator()(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
    }
    const double& operator()(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
    }

    // rank-4 access (out channel, in channel, kernel row, kernel col)
    double& operator()(int o, int i, int y, int x) {
        return data[((static_cast<std::size_t>(o) * dim(1) + i) * dim(2) + y) * dim(3) + x];
    }
    const double& operator()(int o, int i, int y, int x) const {
        return data[((static_cast<std::size_t>(o) * dim(1) + i) * dim(2) + y) * dim(3) + x];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

private:
    void check_shape() const {
        for (int e : shape) {
            if (e <= 0) throw InvalidArgument("tensor extents must be positive");
        }
    }
};

inline std::string shape_string(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace lns
