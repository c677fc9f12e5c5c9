#pragma once

// Dense row-major f64 tensor. Copying a Tensor is shallow (shared buffers);
// clone() is the deep copy. A Tensor becomes differentiable only once a
// Tape registers it, which is recorded in `node`.

#include <cstdint>
#include <memory>
#include <numeric>
#include <vector>

#include "mtenc/common.hpp"

namespace mtenc {

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dims must be positive");
        n *= d;
    }
    return n;
}

struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // allocated when watched
    int node = -1;                              // tape node id, -1 = detached

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape) {
        Tensor t;
        t.data = std::make_shared<std::vector<double>>(shape_numel(shape), 0.0);
        t.shape = std::move(shape);
        return t;
    }

    static Tensor full(std::vector<int> shape, double value) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : *t.data) v = value;
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<double> values) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw ShapeError("tensor values do not fill the given shape");
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<double>>(std::move(values));
        return t;
    }

    static Tensor scalar(double value) { return from({1}, {value}); }

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }

    double item() const {
        if (numel() != 1) throw ShapeError("item() needs a single-element tensor");
        return (*data)[0];
    }

    double* ptr() { return data->data(); }
    const double* ptr() const { return data->data(); }

    // deep copy of values; grad and tape attachment do not carry over
    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<double>>(*data);
        return t;
    }

    void ensure_grad() {
        if (!grad) grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
    }

    void zero_grad() {
        if (grad)
            for (auto& g : *grad) g = 0.0;
    }
};

}  // namespace mtenc
