#include "advlab/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "advlab/errors.hpp"
#include "advlab/rng.hpp"
#include "advlab/util.hpp"

namespace advlab::zoo {

namespace {

std::string layer_label(std::size_t index, const char* kind) {
    std::ostringstream os;
    os << "layer " << index << " (" << kind << ")";
    return os.str();
}

}  // namespace

Model build(const ArchSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) {
        throw ConfigError("architecture '" + spec.id + "': needs at least 2 classes");
    }
    if (spec.input[0] == 0 || spec.input[1] == 0 || spec.input[2] == 0) {
        throw ConfigError("architecture '" + spec.id + "': input dimensions must be nonzero");
    }

    Model model;
    model.arch_id = spec.id;
    model.input_shape = spec.input;
    model.num_classes = spec.classes;

    // Track the running activation shape: spatial (C,H,W) until the first
    // affine layer flattens it, flat afterwards.
    bool spatial = true;
    std::size_t c = spec.input[0], h = spec.input[1], w = spec.input[2];
    std::size_t flat = 0;

    auto require_spatial = [&](std::size_t index, const char* kind) {
        if (!spatial) {
            throw ConfigError("architecture '" + spec.id + "': " + layer_label(index, kind) +
                              " needs a spatial input, but an earlier affine layer flattened it");
        }
    };

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const ArchLayer& layer = spec.layers[i];
        if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
            require_spatial(i, "conv2d");
            if (conv->channels == 0) {
                throw ConfigError("architecture '" + spec.id + "': " + layer_label(i, "conv2d") +
                                  " has zero output channels");
            }
            if (conv->kernel == 0 || conv->kernel % 2 == 0) {
                throw ConfigError("architecture '" + spec.id + "': " + layer_label(i, "conv2d") +
                                  " needs an odd kernel size, got " + std::to_string(conv->kernel));
            }
            Conv2dLayer built;
            built.in_ch = c;
            built.out_ch = conv->channels;
            built.kernel = conv->kernel;
            built.pad = (conv->kernel - 1) / 2;
            built.in_h = h;
            built.in_w = w;
            built.w = Tensor::zeros({conv->channels, c, conv->kernel, conv->kernel});
            built.b = Tensor::zeros({conv->channels});
            model.layers.emplace_back(std::move(built));
            c = conv->channels;  // same-size padding keeps h, w
        } else if (std::holds_alternative<PoolSpec>(layer)) {
            require_spatial(i, "avgpool");
            if (h % 2 != 0 || w % 2 != 0) {
                throw ConfigError("architecture '" + spec.id + "': " + layer_label(i, "avgpool") +
                                  " needs even spatial dims, got " + std::to_string(h) + "x" +
                                  std::to_string(w));
            }
            model.layers.emplace_back(AvgPoolLayer{c, h, w});
            h /= 2;
            w /= 2;
        } else if (std::holds_alternative<ReluSpec>(layer)) {
            model.layers.emplace_back(ReluLayer{});
        } else {
            const auto& aff = std::get<AffineSpec>(layer);
            if (aff.width == 0) {
                throw ConfigError("architecture '" + spec.id + "': " + layer_label(i, "affine") +
                                  " has zero width");
            }
            const std::size_t in = spatial ? c * h * w : flat;
            AffineLayer built;
            built.in = in;
            built.out = aff.width;
            built.w = Tensor::zeros({aff.width, in});
            built.b = Tensor::zeros({aff.width});
            model.layers.emplace_back(std::move(built));
            spatial = false;
            flat = aff.width;
        }
    }

    // Classification head.
    {
        const std::size_t in = spatial ? c * h * w : flat;
        AffineLayer head;
        head.in = in;
        head.out = spec.classes;
        head.w = Tensor::zeros({spec.classes, in});
        head.b = Tensor::zeros({spec.classes});
        model.layers.emplace_back(std::move(head));
    }

    // Initialize weights layer by layer from named substreams so that the
    // result depends only on (spec, seed).
    std::size_t param_index = 0;
    for (Layer& layer : model.layers) {
        Tensor* weights = nullptr;
        std::size_t fan_in = 0;
        if (auto* aff = std::get_if<AffineLayer>(&layer)) {
            weights = &aff->w;
            fan_in = aff->in;
        } else if (auto* conv = std::get_if<Conv2dLayer>(&layer)) {
            weights = &conv->w;
            fan_in = conv->in_ch * conv->kernel * conv->kernel;
        }
        if (weights == nullptr) {
            continue;
        }
        rng::Stream stream(rng::derive(seed, "init", param_index));
        // Variance-preserving uniform bound for ReLU stacks; the plain
        // 1/sqrt(fan_in) bound shrinks activations enough that the deeper
        // members train unreliably.
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : weights->values) {
            v = stream.uniform(-bound, bound);
        }
        ++param_index;
    }

    model.meta.seed = seed;
    return model;
}

double accuracy(const Model& model, const data::Dataset& ds) {
    if (ds.size() == 0) {
        throw ConfigError("accuracy over an empty dataset is undefined");
    }
    const std::size_t item = per_item_size(ds.images);
    const std::size_t chunk = 64;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        const std::size_t count = std::min(chunk, ds.size() - start);
        Tensor batch({count, ds.images.shape[1], ds.images.shape[2], ds.images.shape[3]},
                     std::vector<double>(ds.images.values.begin() + start * item,
                                         ds.images.values.begin() + (start + count) * item));
        const std::vector<int> pred = predict(model, batch);
        for (std::size_t i = 0; i < count; ++i) {
            if (pred[i] == ds.labels[start + i]) {
                ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

TrainResult train(const Model& model, const data::Dataset& train_data,
                  const data::Dataset& test_data, const TrainConfig& cfg) {
    if (train_data.size() == 0) {
        throw ConfigError("training data is empty");
    }
    if (cfg.epochs == 0) {
        throw ConfigError("training needs at least one epoch");
    }
    if (cfg.batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
    if (cfg.learning_rate < 0.0 || !std::isfinite(cfg.learning_rate)) {
        throw ConfigError("learning rate must be finite and non-negative");
    }
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (train_data.num_classes > model.num_classes) {
        throw ConfigError("training data has " + std::to_string(train_data.num_classes) +
                          " classes but the model only has " +
                          std::to_string(model.num_classes) + " outputs");
    }

    TrainResult result;
    result.model = model;
    Model& m = result.model;

    // One velocity tensor per parameter tensor, in layer order.
    std::vector<Tensor> vel_w, vel_b;
    for (const Layer& layer : m.layers) {
        if (const auto* aff = std::get_if<AffineLayer>(&layer)) {
            vel_w.push_back(Tensor::zeros(aff->w.shape));
            vel_b.push_back(Tensor::zeros(aff->b.shape));
        } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
            vel_w.push_back(Tensor::zeros(conv->w.shape));
            vel_b.push_back(Tensor::zeros(conv->b.shape));
        } else {
            vel_w.emplace_back(Tensor{});
            vel_b.emplace_back(Tensor{});
        }
    }

    const std::size_t n = train_data.size();
    const std::size_t item = per_item_size(train_data.images);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    // Fixed schedule: short linear warmup, then cosine decay to zero. The
    // warmup keeps momentum from amplifying the large, noisy first-epoch
    // gradients into a dead-ReLU collapse on low-margin data; the decay
    // settles the last fraction of accuracy that constant-rate SGD walks
    // past. Gradients are clipped at a global L2 norm of 5 for the same
    // early-stability reason.
    const double kClipNorm = 5.0;
    const std::size_t warmup = std::min<std::size_t>(2, cfg.epochs - 1);
    const auto epoch_rate = [&](std::size_t epoch) {
        if (epoch < warmup) {
            return cfg.learning_rate * static_cast<double>(epoch + 1) /
                   static_cast<double>(warmup + 1);
        }
        const double progress = static_cast<double>(epoch - warmup) /
                                static_cast<double>(std::max<std::size_t>(1, cfg.epochs - warmup));
        return cfg.learning_rate * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double rate = epoch_rate(epoch);
        rng::Stream shuffle_stream(rng::derive(cfg.seed, "shuffle", epoch));
        shuffle_stream.shuffle(order);

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n - start);
            Tensor batch = Tensor::zeros({count, train_data.images.shape[1],
                                          train_data.images.shape[2],
                                          train_data.images.shape[3]});
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t src = order[start + i];
                std::copy(train_data.images.values.begin() + src * item,
                          train_data.images.values.begin() + (src + 1) * item,
                          batch.values.begin() + i * item);
                labels[i] = train_data.labels[src];
            }

            const auto diverged = [&epoch] {
                return NumericError("training diverged at epoch " + std::to_string(epoch) +
                                    " (non-finite loss); try a smaller learning rate");
            };
            ParamGrads grads;
            double batch_loss = 0.0;
            try {
                batch_loss = loss_and_param_grads(m, batch, labels, grads);
            } catch (const NumericError&) {
                // Exploded parameters surface as non-finite logits inside the
                // forward pass; report them as what they are: divergence.
                throw diverged();
            }
            if (!std::isfinite(batch_loss)) {
                throw diverged();
            }

            double grad_sq = 0.0;
            for (std::size_t li = 0; li < grads.w.size(); ++li) {
                for (double g : grads.w[li].values) {
                    grad_sq += g * g;
                }
                for (double g : grads.b[li].values) {
                    grad_sq += g * g;
                }
            }
            const double grad_norm = std::sqrt(grad_sq);
            const double clip = grad_norm > kClipNorm ? kClipNorm / grad_norm : 1.0;

            for (std::size_t li = 0; li < m.layers.size(); ++li) {
                Tensor* w = nullptr;
                Tensor* b = nullptr;
                if (auto* aff = std::get_if<AffineLayer>(&m.layers[li])) {
                    w = &aff->w;
                    b = &aff->b;
                } else if (auto* conv = std::get_if<Conv2dLayer>(&m.layers[li])) {
                    w = &conv->w;
                    b = &conv->b;
                }
                if (w == nullptr) {
                    continue;
                }
                for (std::size_t k = 0; k < w->values.size(); ++k) {
                    vel_w[li].values[k] =
                        cfg.momentum * vel_w[li].values[k] + clip * grads.w[li].values[k];
                    w->values[k] -= rate * vel_w[li].values[k];
                }
                for (std::size_t k = 0; k < b->values.size(); ++k) {
                    vel_b[li].values[k] =
                        cfg.momentum * vel_b[li].values[k] + clip * grads.b[li].values[k];
                    b->values[k] -= rate * vel_b[li].values[k];
                }
            }
        }

        result.train_accuracy.push_back(accuracy(m, train_data));
        result.test_accuracy.push_back(test_data.size() > 0 ? accuracy(m, test_data)
                                                            : result.train_accuracy.back());
    }

    result.final_test_accuracy = result.test_accuracy.back();
    m.meta.seed = cfg.seed;
    m.meta.epochs = cfg.epochs;
    m.meta.final_test_accuracy = result.final_test_accuracy;
    return result;
}

namespace {

constexpr std::uint32_t kModelVersion = 1;
const char kModelMagic[4] = {'A', 'L', 'Z', 'M'};

enum class LayerKind : std::uint8_t { affine = 0, conv2d = 1, relu = 2, avgpool = 3 };

void write_tensor(util::ByteWriter& w, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) {
        w.u64(d);
    }
    w.u64(t.values.size());
    for (double v : t.values) {
        w.f64(v);
    }
}

Tensor read_tensor(util::ByteReader& r) {
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = r.u64();
    }
    const std::uint64_t count = r.u64();
    std::vector<double> values(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        values[i] = r.f64();
    }
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
    util::ByteWriter w;
    w.bytes(kModelMagic, sizeof(kModelMagic));
    w.u32(kModelVersion);
    w.str(model.arch_id);
    w.u32(static_cast<std::uint32_t>(model.input_shape[0]));
    w.u32(static_cast<std::uint32_t>(model.input_shape[1]));
    w.u32(static_cast<std::uint32_t>(model.input_shape[2]));
    w.u32(static_cast<std::uint32_t>(model.num_classes));
    w.u64(model.meta.seed);
    w.u64(model.meta.epochs);
    w.f64(model.meta.final_test_accuracy);
    w.u32(static_cast<std::uint32_t>(model.layers.size()));
    for (const Layer& layer : model.layers) {
        if (const auto* aff = std::get_if<AffineLayer>(&layer)) {
            w.u8(static_cast<std::uint8_t>(LayerKind::affine));
            w.u64(aff->in);
            w.u64(aff->out);
            write_tensor(w, aff->w);
            write_tensor(w, aff->b);
        } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
            w.u8(static_cast<std::uint8_t>(LayerKind::conv2d));
            w.u64(conv->in_ch);
            w.u64(conv->out_ch);
            w.u64(conv->kernel);
            w.u64(conv->pad);
            w.u64(conv->in_h);
            w.u64(conv->in_w);
            write_tensor(w, conv->w);
            write_tensor(w, conv->b);
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            w.u8(static_cast<std::uint8_t>(LayerKind::relu));
        } else {
            const auto& pool = std::get<AvgPoolLayer>(layer);
            w.u8(static_cast<std::uint8_t>(LayerKind::avgpool));
            w.u64(pool.channels);
            w.u64(pool.in_h);
            w.u64(pool.in_w);
        }
    }
    const std::uint64_t checksum = util::fnv1a64(w.buffer().data(), w.buffer().size());
    w.u64(checksum);
    util::write_binary_file(path, w.buffer());

    nlohmann::json meta;
    meta["format_version"] = kModelVersion;
    meta["arch_id"] = model.arch_id;
    meta["structure"] = model.structure();
    meta["input"] = {model.input_shape[0], model.input_shape[1], model.input_shape[2]};
    meta["classes"] = model.num_classes;
    meta["parameter_count"] = model.parameter_count();
    meta["train_seed"] = model.meta.seed;
    meta["train_epochs"] = model.meta.epochs;
    meta["final_test_accuracy"] = model.meta.final_test_accuracy;
    meta["checksum"] = util::to_hex(checksum);
    std::ofstream out(path + ".meta.json");
    if (!out) {
        throw DataError("cannot write '" + path + ".meta.json'");
    }
    out << meta.dump(2) << "\n";
}

Model load_model(const std::string& path) {
    const std::string buf = util::read_binary_file(path);
    if (buf.size() < sizeof(kModelMagic) + 8) {
        throw DataError("'" + path + "' is too short to be a model file");
    }
    if (std::memcmp(buf.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
        throw DataError("'" + path + "' is not a model file (bad magic)");
    }
    std::uint64_t stored = 0;
    for (int i = 7; i >= 0; --i) {
        stored = (stored << 8) |
                 static_cast<std::uint8_t>(buf[buf.size() - 8 + static_cast<std::size_t>(i)]);
    }
    const std::uint64_t actual = util::fnv1a64(buf.data(), buf.size() - 8);
    if (stored != actual) {
        throw DataError("'" + path + "' failed its checksum (corrupt or truncated file)");
    }

    util::ByteReader r(std::string_view(buf.data(), buf.size() - 8), path);
    r.raw(sizeof(kModelMagic));
    const std::uint32_t version = r.u32();
    if (version != kModelVersion) {
        throw DataError("'" + path + "' has unsupported model format version " +
                        std::to_string(version) + " (expected " + std::to_string(kModelVersion) +
                        ")");
    }
    Model model;
    model.arch_id = r.str();
    model.input_shape[0] = r.u32();
    model.input_shape[1] = r.u32();
    model.input_shape[2] = r.u32();
    model.num_classes = r.u32();
    model.meta.seed = r.u64();
    model.meta.epochs = r.u64();
    model.meta.final_test_accuracy = r.f64();
    const std::uint32_t layer_count = r.u32();
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        const auto kind = static_cast<LayerKind>(r.u8());
        switch (kind) {
            case LayerKind::affine: {
                AffineLayer aff;
                aff.in = r.u64();
                aff.out = r.u64();
                aff.w = read_tensor(r);
                aff.b = read_tensor(r);
                model.layers.emplace_back(std::move(aff));
                break;
            }
            case LayerKind::conv2d: {
                Conv2dLayer conv;
                conv.in_ch = r.u64();
                conv.out_ch = r.u64();
                conv.kernel = r.u64();
                conv.pad = r.u64();
                conv.in_h = r.u64();
                conv.in_w = r.u64();
                conv.w = read_tensor(r);
                conv.b = read_tensor(r);
                model.layers.emplace_back(std::move(conv));
                break;
            }
            case LayerKind::relu:
                model.layers.emplace_back(ReluLayer{});
                break;
            case LayerKind::avgpool: {
                AvgPoolLayer pool;
                pool.channels = r.u64();
                pool.in_h = r.u64();
                pool.in_w = r.u64();
                model.layers.emplace_back(std::move(pool));
                break;
            }
            default:
                throw DataError("'" + path + "' contains an unknown layer kind " +
                                std::to_string(static_cast<int>(kind)));
        }
    }
    return model;
}

std::vector<ArchSpec> default_zoo(std::array<std::size_t, 3> input, std::size_t classes) {
    std::vector<ArchSpec> specs;
    for (const std::string& id : known_arch_ids()) {
        specs.push_back(arch_by_id(id, input, classes));
    }
    return specs;
}

std::vector<std::string> known_arch_ids() {
    return {"mlp-64", "mlp-128-64", "cnn-8", "cnn-8-16", "cnn-16k5-32", "cnn-4-8"};
}

const std::string& default_source_id() {
    static const std::string id = "cnn-8-16";
    return id;
}

ArchSpec arch_by_id(const std::string& id, std::array<std::size_t, 3> input,
                    std::size_t classes) {
    ArchSpec spec;
    spec.id = id;
    spec.input = input;
    spec.classes = classes;
    if (id == "mlp-64") {
        spec.layers = {AffineSpec{64}, ReluSpec{}};
    } else if (id == "mlp-128-64") {
        spec.layers = {AffineSpec{128}, ReluSpec{}, AffineSpec{64}, ReluSpec{}};
    } else if (id == "cnn-8") {
        spec.layers = {ConvSpec{8, 3}, ReluSpec{}, PoolSpec{}};
    } else if (id == "cnn-8-16") {
        spec.layers = {ConvSpec{8, 3}, ReluSpec{}, PoolSpec{},
                       ConvSpec{16, 3}, ReluSpec{}, PoolSpec{}};
    } else if (id == "cnn-16k5-32") {
        spec.layers = {ConvSpec{16, 5}, ReluSpec{}, PoolSpec{}, AffineSpec{32}, ReluSpec{}};
    } else if (id == "cnn-4-8") {
        spec.layers = {ConvSpec{4, 3}, ReluSpec{}, ConvSpec{8, 3}, ReluSpec{}, PoolSpec{}};
    } else {
        std::string known;
        for (const std::string& k : known_arch_ids()) {
            known += known.empty() ? k : ", " + k;
        }
        throw ConfigError("unknown architecture id '" + id + "' (known: " + known + ")");
    }
    return spec;
}

bool zoo_is_diverse(const std::vector<ArchSpec>& specs) {
    std::vector<std::string> structures;
    std::vector<std::size_t> counts;
    for (const ArchSpec& spec : specs) {
        const Model m = build(spec, 0);
        structures.push_back(m.structure());
        counts.push_back(m.parameter_count());
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        for (std::size_t j = i + 1; j < specs.size(); ++j) {
            if (structures[i] == structures[j] && counts[i] == counts[j]) {
                return false;
            }
        }
    }
    return true;
}

}  // namespace advlab::zoo
