#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

// Feed-forward classifiers assembled from a fixed layer set: affine,
// conv2d (stride 1, zero padding), ReLU, 2x2 average pool, with softmax
// cross-entropy on the logits. Gradients are analytic per layer; there is
// no tape. The forward pass is a pure function of (parameters, input),
// so concurrent evaluation on disjoint batches is safe.

struct AffineLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    Tensor w;  // out x in
    Tensor b;  // out
};

struct Conv2dLayer {
    std::size_t in_ch = 0, out_ch = 0;
    std::size_t kernel = 0, pad = 0;
    std::size_t in_h = 0, in_w = 0;
    Tensor w;  // out_ch x in_ch x k x k
    Tensor b;  // out_ch
    std::size_t out_h() const { return in_h + 2 * pad - kernel + 1; }
    std::size_t out_w() const { return in_w + 2 * pad - kernel + 1; }
};

// ReLU with subgradient 0 at 0.
struct ReluLayer {};

// 2x2 average pool, stride 2; input height/width must be even.
struct AvgPoolLayer {
    std::size_t channels = 0;
    std::size_t in_h = 0, in_w = 0;
};

using Layer = std::variant<AffineLayer, Conv2dLayer, ReluLayer, AvgPoolLayer>;

struct TrainMeta {
    std::uint64_t seed = 0;
    std::uint64_t epochs = 0;
    double final_test_accuracy = -1.0;  // -1 = untrained
};

struct Model {
    std::string arch_id;
    std::array<std::size_t, 3> input_shape{0, 0, 0};  // C, H, W
    std::size_t num_classes = 0;
    std::vector<Layer> layers;
    TrainMeta meta;

    std::size_t parameter_count() const;
    // One line per layer, e.g. "conv(8,k3,p1)|relu|pool|affine(4)".
    std::string structure() const;
};

struct LossValueAndGrad {
    double loss = 0.0;   // mean cross-entropy over the batch
    Tensor input_grad;   // same shape as the input batch
};

// Per-image cross-entropy losses and input gradients, unscaled by batch
// size (each image is treated as its own batch of one). This is the path
// attacks use; it makes results independent of batch partitioning.
struct PerImageLossGrad {
    std::vector<double> loss;
    Tensor input_grad;
};

// Logits for a batch of images (N x C x H x W -> N x num_classes).
Tensor forward(const Model& model, const Tensor& images);

std::vector<int> predict(const Model& model, const Tensor& images);

LossValueAndGrad loss_and_input_gradient(const Model& model, const Tensor& images,
                                         const std::vector<int>& labels);

PerImageLossGrad per_image_loss_and_grad(const Model& model, const Tensor& images,
                                         const std::vector<int>& labels);

// Max over sampled coordinates of the guarded relative error between the
// analytic input gradient of the mean loss and a central finite difference
// with the given step. Error denominator: max(|analytic|, |fd|, 1e-6).
double check_gradient(const Model& model, const Tensor& images, const std::vector<int>& labels,
                      double fd_step, std::size_t max_coords = 32, std::uint64_t seed = 17);

// Parameter gradients of the mean batch loss, for training.
struct ParamGrads {
    std::vector<Tensor> w;  // empty tensor for parameterless layers
    std::vector<Tensor> b;
};
double loss_and_param_grads(const Model& model, const Tensor& images,
                            const std::vector<int>& labels, ParamGrads& grads);

// Counts backward passes through a model (one per batch gradient call).
std::uint64_t gradient_eval_count();
void reset_gradient_eval_count();

// Stable per-sample softmax cross-entropy. If dlogits is non-null it
// receives softmax(logits) - onehot(label) per sample (unscaled).
std::vector<double> softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                          Tensor* dlogits);

}  // namespace advlab
