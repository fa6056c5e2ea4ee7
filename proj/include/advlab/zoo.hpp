#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "advlab/data.hpp"
#include "advlab/model.hpp"

namespace advlab::zoo {

// Architecture description. Layers listed here are the feature stack; a
// final affine layer onto the class count is appended at build time.
struct AffineSpec {
    std::size_t width = 0;
};
struct ConvSpec {
    std::size_t channels = 0;
    std::size_t kernel = 3;  // odd; zero padding (kernel-1)/2, stride 1
};
struct ReluSpec {};
struct PoolSpec {};  // 2x2 average pool

using ArchLayer = std::variant<AffineSpec, ConvSpec, ReluSpec, PoolSpec>;

struct ArchSpec {
    std::string id;
    std::vector<ArchLayer> layers;
    std::array<std::size_t, 3> input{1, 16, 16};  // C, H, W
    std::size_t classes = 4;
};

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

struct TrainResult {
    Model model;
    std::vector<double> train_accuracy;  // per epoch
    std::vector<double> test_accuracy;   // per epoch
    double final_test_accuracy = 0.0;
};

// Parameters drawn uniformly from +-sqrt(6/fan_in), biases zero;
// deterministic in (spec, seed).
Model build(const ArchSpec& spec, std::uint64_t seed);

// Plain SGD with momentum over shuffled minibatches. Deterministic in
// (cfg.seed, data). Throws NumericError if the loss stops being finite.
TrainResult train(const Model& model, const data::Dataset& train_data,
                  const data::Dataset& test_data, const TrainConfig& cfg);

double accuracy(const Model& model, const data::Dataset& ds);

// Versioned little-endian binary with a trailing checksum, plus a
// human-readable sidecar at <path>.meta.json.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

// The default zoo: two MLPs and four CNNs differing in depth, width and
// pooling. Every pair differs in structure or parameter count.
std::vector<ArchSpec> default_zoo(std::array<std::size_t, 3> input, std::size_t classes);
ArchSpec arch_by_id(const std::string& id, std::array<std::size_t, 3> input, std::size_t classes);
std::vector<std::string> known_arch_ids();
const std::string& default_source_id();

bool zoo_is_diverse(const std::vector<ArchSpec>& specs);

}  // namespace advlab::zoo
