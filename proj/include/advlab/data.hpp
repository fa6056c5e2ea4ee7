#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advlab/model.hpp"
#include "advlab/tensor.hpp"

namespace advlab::data {

// Images live in [0,1]; labels within num_classes.
struct Dataset {
    Tensor images;  // N x C x H x W
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::string split;   // "train" | "test"
    std::string source;  // descriptor (file path or generator string)

    std::size_t size() const { return labels.size(); }
};

// IDX container (MNIST-style): big-endian headers, magic 0x00000803 for
// ubyte image files and 0x00000801 for ubyte label files. Pixels are
// divided by 255 into [0,1] on load.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// IDX with type double (magic 0x00000E04, 4 dims), used to persist
// adversarial batches without quantization.
void write_idx_double(const Tensor& t, const std::string& path);
Tensor read_idx_double(const std::string& path);
void write_idx_labels(const std::vector<int>& labels, const std::string& path);
std::vector<int> read_idx_labels(const std::string& path);

// Synthetic classification task with two label channels at different
// spatial scales, mimicking the robust-plus-brittle feature split of
// natural image classifiers.
//
// Smooth channel: a fixed orthonormal basis of `subspace` smooth fields
// (box-blurred uniform noise, Gram-Schmidt in pixel space) spans the
// data manifold; each class owns `modes_per_class` cluster centers drawn
// uniformly from a ball of radius 1.6*separation inside that subspace,
// rejected until every pair of centers (same or different class) is at
// least `separation` apart in L2. `separation` is chosen well above the
// L-inf attack budgets of a few /255, so this channel is robust.
//
// Texture channel: each (class, mode) pair also owns a high-frequency
// pattern of tiny L2 norm `texture`, orthonormal to the smooth basis and
// to every other pattern. Patterns are noise-free in the samples, so
// trained models amplify them with large weights — the brittle,
// high-curvature features an attack inside the budget can flip.
//
// A sample of class c and mode m is
//
//   0.5 + center(c,m) + jitter + texture(c,m) + nuisance + U(-noise, noise)
//
// per pixel, clipped to [0,1], with label i % classes (balanced by
// construction). `jitter` is per-image uniform coefficient noise inside
// the smooth subspace (it moves samples along the manifold without
// touching the texture channel); `nuisance` is a fresh smooth field per
// image projected orthogonal to both channels and scaled to that L2
// norm, giving models label-free directions to overfit; `noise` is
// ordinary per-pixel uniform noise and stays small so it does not
// drown the texture channel.
struct SynthParams {
    std::size_t classes = 4;
    std::size_t image_size = 16;
    std::size_t modes_per_class = 8;
    std::size_t blur_passes = 2;
    std::size_t subspace = 24;
    double separation = 1.6;
    double texture = 0.05;
    double jitter = 0.15;
    double nuisance = 0.8;
    double noise = 0.02;
};

Dataset synth_dataset(std::uint64_t seed, std::size_t n, const SynthParams& params,
                      const std::string& split);
Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes,
                      std::size_t image_size);

// Content-address key for caching generated datasets on disk.
std::string synth_cache_key(std::uint64_t seed, std::size_t n, const SynthParams& params);

// Uniformly seeded sample of `n` images classified correctly by every
// model. Throws CapacityError (with the qualifying count) if fewer than
// `n` qualify.
Dataset select_correctly_classified(const std::vector<const Model*>& models, const Dataset& ds,
                                    std::size_t n, std::uint64_t seed);

}  // namespace advlab::data
