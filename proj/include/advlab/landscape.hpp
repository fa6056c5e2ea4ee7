#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advlab/model.hpp"
#include "advlab/rng.hpp"
#include "advlab/tensor.hpp"

namespace advlab::landscape {

// Loss values along straight lines through one image, used to judge how
// flat the surface is around an adversarial example.
struct FlatnessProbe {
    Tensor center;                          // 1 x C x H x W
    std::vector<double> radii;              // as requested, ascending
    std::vector<double> signed_radii;       // -r_max ... +r_max (0 kept once)
    std::vector<std::vector<double>> loss;  // [direction][signed radius]
    double center_loss = 0.0;
    double center_grad_norm = 0.0;
};

// Per-image L2 norm of the input gradient of the cross-entropy loss.
std::vector<double> gradient_norm_at(const Model& model, const Tensor& images,
                                     const std::vector<int>& labels);

// Evaluates the loss at clip01(x + rho * d) for every direction d and every
// signed radius rho = +-r. Directions must be unit length (zero directions
// are rejected); radii must be non-negative and strictly ascending. A
// radius of 0 reproduces the center loss exactly.
FlatnessProbe loss_slice(const Model& model, const Tensor& image, int label,
                         const std::vector<Tensor>& directions,
                         const std::vector<double>& radii);

// Mean over images and sampled unit directions of the one-sided loss drop
// [loss(x) - loss(clip01(x + radius*d))]+ . Adversarial examples sit at
// loss maxima, so a drop (not a rise) measures sharpness; the statistic is
// non-negative and 0 for constant models. Deterministic in (seed, image
// index), so results do not depend on batch partitioning.
double sharpness(const Model& model, const Tensor& images, const std::vector<int>& labels,
                 double radius, std::size_t n_samples, std::uint64_t seed);

// Uniformly distributed unit vector of the given shape.
Tensor random_unit_direction(const std::vector<std::size_t>& shape, rng::Stream& stream);

// Long-format CSV: image-id, direction-id, radius, loss.
std::string probe_csv(const std::vector<FlatnessProbe>& probes);
void write_probe_csv(const std::vector<FlatnessProbe>& probes, const std::string& path);

}  // namespace advlab::landscape
