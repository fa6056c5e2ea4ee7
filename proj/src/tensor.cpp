#include "advlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "advlab/errors.hpp"

namespace advlab {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_in, std::vector<double> values_in)
    : shape(std::move(shape_in)), values(std::move(values_in)) {
    if (shape_product(shape) != values.size()) {
        throw ConfigError("tensor: shape " + shape_string(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape_in) {
    const std::size_t n = shape_product(shape_in);
    return Tensor(std::move(shape_in), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape_in, double value) {
    const std::size_t n = shape_product(shape_in);
    return Tensor(std::move(shape_in), std::vector<double>(n, value));
}

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= shape.size()) {
        throw ConfigError("tensor: dim " + std::to_string(i) + " out of rank " +
                          std::to_string(shape.size()));
    }
    return shape[i];
}

bool Tensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

double& Tensor::at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return values[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
}

double Tensor::at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return values[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
}

std::size_t per_item_size(const Tensor& t) {
    if (t.rank() == 0 || t.shape[0] == 0) {
        return 0;
    }
    return t.numel() / t.shape[0];
}

Tensor slice_item(const Tensor& batch, std::size_t n) {
    const std::size_t item = per_item_size(batch);
    std::vector<std::size_t> shape = batch.shape;
    shape[0] = 1;
    std::vector<double> vals(batch.values.begin() + static_cast<std::ptrdiff_t>(n * item),
                             batch.values.begin() + static_cast<std::ptrdiff_t>((n + 1) * item));
    return Tensor(std::move(shape), std::move(vals));
}

void paste_item(Tensor& batch, std::size_t n, const Tensor& item) {
    const std::size_t sz = per_item_size(batch);
    if (item.numel() != sz) {
        throw ConfigError("paste_item: size mismatch");
    }
    std::copy(item.values.begin(), item.values.end(),
              batch.values.begin() + static_cast<std::ptrdiff_t>(n * sz));
}

double l1_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values) {
        s += std::fabs(v);
    }
    return s;
}

double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values) {
        s += v * v;
    }
    return std::sqrt(s);
}

double linf_distance(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        m = std::max(m, std::fabs(a.values[i] - b.values[i]));
    }
    return m;
}

}  // namespace advlab
