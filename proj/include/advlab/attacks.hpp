#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advlab/model.hpp"
#include "advlab/tensor.hpp"

namespace advlab::attacks {

// Below this, a gradient norm is treated as zero: normalized directions
// (the flatness probe, momentum's L1 scaling) fall back to the plain
// gradient for that image and the image index is flagged in the trace.
inline constexpr double kZeroNormThreshold = 1e-12;

struct AttackConfig {
    double epsilon = 8.0 / 255.0;      // L-inf budget in [0,1] pixel units
    std::size_t steps = 20;            // T
    std::optional<double> step_size;   // alpha; defaults to epsilon/steps
    double momentum_decay = 1.0;       // mu, used by mifgsm
    bool gnp_enabled = false;
    double gnp_r = 0.01;               // probe step length
    double gnp_beta = 0.8;             // penalty coefficient
    double dim_probability = 0.0;      // 0 disables input diversity
    std::size_t tim_kernel = 0;        // odd kernel width; 0 disables
    std::uint64_t seed = 0;
    unsigned workers = 1;
    bool record_trace = false;

    double alpha() const { return step_size ? *step_size : epsilon / static_cast<double>(steps); }
    double lambda() const { return gnp_beta * gnp_r; }  // penalty weight
    void validate() const;  // throws ConfigError on any out-of-range field
};

// Per-iteration means over the batch, plus the indices of images whose
// gradient norm fell under kZeroNormThreshold at least once.
struct IterationTrace {
    std::vector<double> mean_loss;       // one entry per iteration
    std::vector<double> mean_grad_norm;  // L2 of the raw gradient, per image mean
    std::vector<std::size_t> fallback_images;
};

struct AdversarialBatch {
    Tensor originals;
    Tensor perturbed;
    std::vector<int> labels;
    std::vector<std::uint8_t> source_misclassified;  // per image, on `perturbed`
    AttackConfig config;
    std::string method;
    IterationTrace trace;  // filled when config.record_trace

    std::size_t size() const { return labels.size(); }
    double source_success_rate() const;
};

// The per-iteration gradient pipeline. Stages always run in this order:
// input transform -> gradient source -> kernel smoothing -> momentum.
// The enum makes "exactly one gradient source" true by construction.
enum class GradientSource { plain, gnp };

struct GradientPipeline {
    bool input_diversity = false;  // DIM pre-transform
    GradientSource source = GradientSource::plain;
    std::size_t tim_kernel = 0;    // 0 = no smoothing
    bool momentum = false;
    void validate() const;
};

GradientPipeline pipeline_for(const AttackConfig& cfg, const std::string& method);

// Per-pixel clamp to [original - eps, original + eps], then to [0, 1].
Tensor project_clip(const Tensor& perturbed, const Tensor& originals, double epsilon);

// Two-evaluation gradient of the penalized loss l - beta*r*|grad l|:
// (1+beta)*grad(x) - beta*grad(x + r*grad(x)/|grad(x)|), norms per image.
// The probe point is a Taylor probe of the loss surface, not an image,
// so it is NOT clipped to [0,1]. Images with near-zero gradient norm keep
// the plain gradient and are appended to `fallback` if given.
Tensor gnp_gradient(const Model& model, const Tensor& images, const std::vector<int>& labels,
                    double r, double beta, std::vector<std::size_t>* fallback = nullptr);

// The same combination for any differentiable scalar loss, expressed
// through its gradient function. Shares its arithmetic with gnp_gradient
// so the two agree bit for bit.
std::vector<double> gnp_combine(
    const std::function<std::vector<double>(const std::vector<double>&)>& grad_fn,
    const std::vector<double>& x, double r, double beta, bool* fell_back = nullptr);

// Random resize-and-pad input diversity. Per image, with probability p:
// bilinear downscale to s in [resize_low, resize_high] and zero-pad back
// to full size at a random offset; otherwise identity. Deterministic in
// (seed, image index).
Tensor dim_transform(const Tensor& images, double p, std::uint64_t seed,
                     std::size_t resize_low, std::size_t resize_high);

std::size_t default_dim_resize_low(std::size_t height);  // floor(0.85 * height)

// Per-channel convolution with a normalized Gaussian kernel
// (sigma = width/6), same-size zero-padded output.
Tensor tim_smooth(const Tensor& grad, std::size_t kernel_width);

std::size_t default_tim_kernel(std::size_t height);  // 7 at height 28, scaled

// One-step attack: clip01(x + eps * sign(grad)). Single gradient evaluation.
AdversarialBatch fgsm(const Model& model, const Tensor& images, const std::vector<int>& labels,
                      double epsilon);

// T projected sign-gradient steps (momentum off / on).
AdversarialBatch ifgsm(const Model& model, const Tensor& images, const std::vector<int>& labels,
                       const AttackConfig& cfg);
AdversarialBatch mifgsm(const Model& model, const Tensor& images, const std::vector<int>& labels,
                        const AttackConfig& cfg);

// The engine behind ifgsm/mifgsm: T iterations composing the pipeline
// stages in fixed order at the current iterate, projected each step.
// Images are processed independently with per-image derived seeds, so
// results are identical for any batch partitioning or worker count.
AdversarialBatch run_attack(const GradientPipeline& pipeline, const AttackConfig& cfg,
                            const Model& model, const Tensor& images,
                            const std::vector<int>& labels);

// Dispatch on method name: "fgsm" (steps forced to 1, alpha = eps),
// "ifgsm", "mifgsm". Unknown names raise a config error listing the
// known methods.
AdversarialBatch craft(const std::string& method, const Model& model, const Tensor& images,
                       const std::vector<int>& labels, const AttackConfig& cfg);

std::vector<std::string> known_methods();

// Adversarial batches persist as a lossless double-precision image file,
// a label file and a JSON sidecar holding the config snapshot and flags.
void save_batch(const AdversarialBatch& batch, const std::string& prefix);
AdversarialBatch load_batch(const std::string& prefix);

}  // namespace advlab::attacks
