#pragma once

#include <cstddef>
#include <vector>

namespace advlab {

// Dense multi-dimensional array of doubles. The one value type for images,
// logits and gradients. Invariant: product(shape) == values.size().
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_in, std::vector<double> values_in);

    static Tensor zeros(std::vector<std::size_t> shape_in);
    static Tensor full(std::vector<std::size_t> shape_in, double value);

    std::size_t numel() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    // Index into an N x C x H x W tensor.
    double& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    double at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
};

// Number of elements per leading-axis entry (e.g. pixels per image).
std::size_t per_item_size(const Tensor& t);

// Copies item n of a batched tensor into a batch-of-one tensor, and back.
Tensor slice_item(const Tensor& batch, std::size_t n);
void paste_item(Tensor& batch, std::size_t n, const Tensor& item);

double l1_norm(const Tensor& t);
double l2_norm(const Tensor& t);
double linf_distance(const Tensor& a, const Tensor& b);

}  // namespace advlab
