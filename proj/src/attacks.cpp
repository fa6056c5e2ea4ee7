#include "advlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "advlab/data.hpp"
#include "advlab/errors.hpp"
#include "advlab/rng.hpp"
#include "advlab/util.hpp"

namespace advlab::attacks {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// The two arithmetic pieces of the penalized gradient. Both the batch
// path and the generic path go through these, so they agree bit for bit.
double probe_scale(double r, double norm) { return r / norm; }
double mix_grads(double beta, double g1, double g2) { return (1.0 + beta) * g1 - beta * g2; }

void require_images(const Tensor& images, const std::vector<int>& labels) {
    if (images.rank() != 4) {
        throw ConfigError("attack input must be a batch of images (4 axes), got rank " +
                          std::to_string(images.rank()));
    }
    if (images.dim(0) != labels.size()) {
        throw ConfigError("batch has " + std::to_string(images.dim(0)) + " images but " +
                          std::to_string(labels.size()) + " labels");
    }
    for (double v : images.values) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ConfigError("attack input pixels must lie in [0,1]");
        }
    }
}

std::vector<std::uint8_t> misclassified_flags(const Model& model, const Tensor& images,
                                              const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    std::vector<std::uint8_t> flags(n, 0);
    const std::size_t item = per_item_size(images);
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t count = std::min(chunk, n - start);
        Tensor batch({count, images.shape[1], images.shape[2], images.shape[3]},
                     std::vector<double>(images.values.begin() + start * item,
                                         images.values.begin() + (start + count) * item));
        const std::vector<int> pred = predict(model, batch);
        for (std::size_t i = 0; i < count; ++i) {
            flags[start + i] = pred[i] != labels[start + i] ? 1 : 0;
        }
    }
    return flags;
}

// Core of gnp_gradient; optionally reports the first evaluation's
// per-image losses (the loss at `images`) for trace recording.
Tensor gnp_gradient_impl(const Model& model, const Tensor& images, const std::vector<int>& labels,
                         double r, double beta, std::vector<std::size_t>* fallback,
                         std::vector<double>* loss_out) {
    if (!(r > 0.0)) {
        throw ConfigError("probe step length r must be positive, got " + std::to_string(r));
    }
    if (beta < 0.0) {
        throw ConfigError("penalty coefficient beta must be non-negative, got " +
                          std::to_string(beta));
    }
    require_images(images, labels);

    const std::size_t n = labels.size();
    const std::size_t item = per_item_size(images);
    const PerImageLossGrad first = per_image_loss_and_grad(model, images, labels);
    if (loss_out != nullptr) {
        *loss_out = first.loss;
    }

    // Probe point per image: x + r * g / |g|, left unclipped on purpose —
    // it probes the loss surface, it is not an image.
    Tensor probe = images;
    std::vector<std::uint8_t> fell(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = i * item; j < (i + 1) * item; ++j) {
            sq += first.input_grad[j] * first.input_grad[j];
        }
        const double norm = std::sqrt(sq);
        if (norm < kZeroNormThreshold) {
            fell[i] = 1;  // probe stays at x; the plain gradient is returned below
            continue;
        }
        const double scale = probe_scale(r, norm);
        for (std::size_t j = i * item; j < (i + 1) * item; ++j) {
            probe[j] = images[j] + scale * first.input_grad[j];
        }
    }

    const PerImageLossGrad second = per_image_loss_and_grad(model, probe, labels);

    Tensor out = Tensor::zeros(images.shape);
    for (std::size_t i = 0; i < n; ++i) {
        if (fell[i] != 0 || beta == 0.0) {
            std::copy(first.input_grad.values.begin() + i * item,
                      first.input_grad.values.begin() + (i + 1) * item,
                      out.values.begin() + i * item);
            if (fell[i] != 0 && fallback != nullptr) {
                fallback->push_back(i);
            }
            continue;
        }
        for (std::size_t j = i * item; j < (i + 1) * item; ++j) {
            out[j] = mix_grads(beta, first.input_grad[j], second.input_grad[j]);
        }
    }
    return out;
}

}  // namespace

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        throw ConfigError("epsilon must lie in [0,1], got " + std::to_string(epsilon));
    }
    if (steps == 0) {
        throw ConfigError("steps must be at least 1");
    }
    if (step_size && (!(*step_size >= 0.0) || !std::isfinite(*step_size))) {
        throw ConfigError("step_size must be finite and non-negative");
    }
    if (!(momentum_decay >= 0.0) || !std::isfinite(momentum_decay)) {
        throw ConfigError("momentum_decay must be finite and non-negative");
    }
    if (gnp_enabled) {
        if (!(gnp_r > 0.0)) {
            throw ConfigError("gnp_r must be positive, got " + std::to_string(gnp_r));
        }
        if (gnp_beta < 0.0) {
            throw ConfigError("gnp_beta must be non-negative, got " + std::to_string(gnp_beta));
        }
    }
    if (!(dim_probability >= 0.0 && dim_probability <= 1.0)) {
        throw ConfigError("dim_probability must lie in [0,1], got " +
                          std::to_string(dim_probability));
    }
    if (tim_kernel != 0 && tim_kernel % 2 == 0) {
        throw ConfigError("tim_kernel must be odd (or 0 to disable), got " +
                          std::to_string(tim_kernel));
    }
    if (workers == 0) {
        throw ConfigError("workers must be at least 1");
    }
}

void GradientPipeline::validate() const {
    if (tim_kernel != 0 && tim_kernel % 2 == 0) {
        throw ConfigError("smoothing kernel width must be odd, got " +
                          std::to_string(tim_kernel));
    }
}

double AdversarialBatch::source_success_rate() const {
    if (source_misclassified.empty()) {
        throw ConfigError("success rate over an empty batch is undefined");
    }
    std::size_t hits = 0;
    for (std::uint8_t f : source_misclassified) {
        hits += f;
    }
    return static_cast<double>(hits) / static_cast<double>(source_misclassified.size());
}

GradientPipeline pipeline_for(const AttackConfig& cfg, const std::string& method) {
    if (std::find(known_methods().begin(), known_methods().end(), method) ==
        known_methods().end()) {
        std::string known;
        for (const std::string& m : known_methods()) {
            known += known.empty() ? m : ", " + m;
        }
        throw ConfigError("unknown attack method '" + method + "' (known: " + known + ")");
    }
    GradientPipeline p;
    p.input_diversity = cfg.dim_probability > 0.0;
    p.source = cfg.gnp_enabled ? GradientSource::gnp : GradientSource::plain;
    p.tim_kernel = cfg.tim_kernel;
    p.momentum = method == "mifgsm";
    return p;
}

std::vector<std::string> known_methods() { return {"fgsm", "ifgsm", "mifgsm"}; }

Tensor project_clip(const Tensor& perturbed, const Tensor& originals, double epsilon) {
    if (!perturbed.same_shape(originals)) {
        throw ConfigError("projection needs matching shapes");
    }
    if (epsilon < 0.0) {
        throw ConfigError("epsilon must be non-negative, got " + std::to_string(epsilon));
    }
    Tensor out = perturbed;
    for (std::size_t j = 0; j < out.numel(); ++j) {
        const double lo = originals[j] - epsilon;
        const double hi = originals[j] + epsilon;
        double v = out[j];
        v = v < lo ? lo : (v > hi ? hi : v);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        out[j] = v;
    }
    return out;
}

Tensor gnp_gradient(const Model& model, const Tensor& images, const std::vector<int>& labels,
                    double r, double beta, std::vector<std::size_t>* fallback) {
    return gnp_gradient_impl(model, images, labels, r, beta, fallback, nullptr);
}

std::vector<double> gnp_combine(
    const std::function<std::vector<double>(const std::vector<double>&)>& grad_fn,
    const std::vector<double>& x, double r, double beta, bool* fell_back) {
    if (!(r > 0.0)) {
        throw ConfigError("probe step length r must be positive, got " + std::to_string(r));
    }
    if (beta < 0.0) {
        throw ConfigError("penalty coefficient beta must be non-negative, got " +
                          std::to_string(beta));
    }
    const std::vector<double> g1 = grad_fn(x);
    if (g1.size() != x.size()) {
        throw ConfigError("gradient function returned the wrong dimension");
    }
    double sq = 0.0;
    for (double v : g1) {
        sq += v * v;
    }
    const double norm = std::sqrt(sq);
    const bool fell = norm < kZeroNormThreshold;
    if (fell_back != nullptr) {
        *fell_back = fell;
    }

    std::vector<double> probe = x;
    if (!fell) {
        const double scale = probe_scale(r, norm);
        for (std::size_t j = 0; j < x.size(); ++j) {
            probe[j] = x[j] + scale * g1[j];
        }
    }
    const std::vector<double> g2 = grad_fn(probe);
    if (fell || beta == 0.0) {
        return g1;
    }
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        out[j] = mix_grads(beta, g1[j], g2[j]);
    }
    return out;
}

std::size_t default_dim_resize_low(std::size_t height) {
    return static_cast<std::size_t>(std::floor(0.85 * static_cast<double>(height)));
}

std::size_t default_tim_kernel(std::size_t height) {
    // 7 at height 28, scaled proportionally and forced odd.
    const double w = 7.0 * static_cast<double>(height) / 28.0;
    const long odd = 2 * std::lround((w - 1.0) / 2.0) + 1;
    return static_cast<std::size_t>(std::max(1L, odd));
}

Tensor dim_transform(const Tensor& images, double p, std::uint64_t seed,
                     std::size_t resize_low, std::size_t resize_high) {
    if (images.rank() != 4) {
        throw ConfigError("input diversity expects a batch of images (4 axes)");
    }
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError("diversity probability must lie in [0,1], got " + std::to_string(p));
    }
    const std::size_t n = images.dim(0);
    const std::size_t channels = images.dim(1);
    const std::size_t height = images.dim(2);
    const std::size_t width = images.dim(3);
    const std::size_t max_edge = std::min(height, width);
    if (resize_low < 1 || resize_low > resize_high || resize_high > max_edge) {
        throw ConfigError("resize bounds [" + std::to_string(resize_low) + ", " +
                          std::to_string(resize_high) + "] must satisfy 1 <= low <= high <= " +
                          std::to_string(max_edge));
    }

    Tensor out = images;
    for (std::size_t i = 0; i < n; ++i) {
        rng::Stream stream(rng::derive(seed, "dim", i));
        if (stream.uniform() >= p) {
            continue;  // identity for this image
        }
        const std::size_t s = resize_low + stream.index(resize_high - resize_low + 1);
        const std::size_t off_h = stream.index(height - s + 1);
        const std::size_t off_w = stream.index(width - s + 1);

        // Bilinear downscale to s x s, then zero-pad back at the offset.
        const double scale_h = static_cast<double>(height) / static_cast<double>(s);
        const double scale_w = static_cast<double>(width) / static_cast<double>(s);
        for (std::size_t c = 0; c < channels; ++c) {
            std::vector<double> small(s * s, 0.0);
            for (std::size_t oy = 0; oy < s; ++oy) {
                double sy = (static_cast<double>(oy) + 0.5) * scale_h - 0.5;
                sy = std::clamp(sy, 0.0, static_cast<double>(height - 1));
                const std::size_t y0 = static_cast<std::size_t>(sy);
                const double dy = sy - static_cast<double>(y0);
                const std::size_t y1 = std::min(y0 + 1, height - 1);
                for (std::size_t ox = 0; ox < s; ++ox) {
                    double sx = (static_cast<double>(ox) + 0.5) * scale_w - 0.5;
                    sx = std::clamp(sx, 0.0, static_cast<double>(width - 1));
                    const std::size_t x0 = static_cast<std::size_t>(sx);
                    const double dx = sx - static_cast<double>(x0);
                    const std::size_t x1 = std::min(x0 + 1, width - 1);
                    const double v00 = images.at4(i, c, y0, x0);
                    double v = v00;
                    if (dx != 0.0 || dy != 0.0) {
                        const double v01 = images.at4(i, c, y0, x1);
                        const double v10 = images.at4(i, c, y1, x0);
                        const double v11 = images.at4(i, c, y1, x1);
                        v = (1.0 - dy) * ((1.0 - dx) * v00 + dx * v01) +
                            dy * ((1.0 - dx) * v10 + dx * v11);
                    }
                    small[oy * s + ox] = v;
                }
            }
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    const bool inside = y >= off_h && y < off_h + s && x >= off_w && x < off_w + s;
                    out.at4(i, c, y, x) = inside ? small[(y - off_h) * s + (x - off_w)] : 0.0;
                }
            }
        }
    }
    return out;
}

Tensor tim_smooth(const Tensor& grad, std::size_t kernel_width) {
    if (grad.rank() != 4) {
        throw ConfigError("gradient smoothing expects a batch of images (4 axes)");
    }
    if (kernel_width == 0 || kernel_width % 2 == 0) {
        throw ConfigError("smoothing kernel width must be odd, got " +
                          std::to_string(kernel_width));
    }
    if (kernel_width == 1) {
        return grad;  // delta kernel
    }
    const std::size_t k = kernel_width;
    const long c = static_cast<long>(k / 2);
    const double sigma = static_cast<double>(k) / 6.0;
    std::vector<double> kern(k * k);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const double di = static_cast<double>(static_cast<long>(i) - c);
            const double dj = static_cast<double>(static_cast<long>(j) - c);
            kern[i * k + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            sum += kern[i * k + j];
        }
    }
    for (double& v : kern) {
        v /= sum;
    }

    const std::size_t n = grad.dim(0), channels = grad.dim(1);
    const std::size_t height = grad.dim(2), width = grad.dim(3);
    Tensor out = Tensor::zeros(grad.shape);
    for (std::size_t img = 0; img < n; ++img) {
        for (std::size_t ch = 0; ch < channels; ++ch) {
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < k; ++i) {
                        const long sy = static_cast<long>(y) + static_cast<long>(i) - c;
                        if (sy < 0 || sy >= static_cast<long>(height)) {
                            continue;
                        }
                        for (std::size_t j = 0; j < k; ++j) {
                            const long sx = static_cast<long>(x) + static_cast<long>(j) - c;
                            if (sx < 0 || sx >= static_cast<long>(width)) {
                                continue;
                            }
                            acc += kern[i * k + j] *
                                   grad.at4(img, ch, static_cast<std::size_t>(sy),
                                            static_cast<std::size_t>(sx));
                        }
                    }
                    out.at4(img, ch, y, x) = acc;
                }
            }
        }
    }
    return out;
}

AdversarialBatch run_attack(const GradientPipeline& pipeline, const AttackConfig& cfg,
                            const Model& model, const Tensor& images,
                            const std::vector<int>& labels) {
    cfg.validate();
    pipeline.validate();
    require_images(images, labels);

    const std::size_t n = labels.size();
    const std::size_t item = per_item_size(images);
    const std::size_t steps = cfg.steps;
    const double alpha = cfg.alpha();
    const std::size_t max_edge = std::min(images.dim(2), images.dim(3));
    const std::size_t dim_low = default_dim_resize_low(max_edge);
    const std::size_t dim_high = max_edge;

    AdversarialBatch batch;
    batch.originals = images;
    batch.perturbed = images;
    batch.labels = labels;
    batch.config = cfg;

    // Per-(image, iteration) slots so results do not depend on the worker
    // partition; reductions happen after the join, in index order.
    std::vector<double> loss_slots, gnorm_slots;
    if (cfg.record_trace) {
        loss_slots.assign(n * steps, 0.0);
        gnorm_slots.assign(n * steps, 0.0);
    }
    std::vector<std::uint8_t> fell(n, 0);

    util::parallel_for(n, cfg.workers, [&](std::size_t i) {
        const Tensor orig = slice_item(images, i);
        Tensor x = orig;
        const std::vector<int> lab{labels[i]};
        Tensor acc = pipeline.momentum ? Tensor::zeros(orig.shape) : Tensor();
        const std::uint64_t image_seed = rng::derive(cfg.seed, "image", i);

        for (std::size_t t = 0; t < steps; ++t) {
            Tensor x_in = x;
            if (pipeline.input_diversity) {
                x_in = dim_transform(x, cfg.dim_probability, rng::derive(image_seed, "dim", t),
                                     dim_low, dim_high);
            }

            Tensor g;
            double loss_here = 0.0;
            if (pipeline.source == GradientSource::gnp) {
                std::vector<std::size_t> gnp_fell;
                std::vector<double> loss1;
                g = gnp_gradient_impl(model, x_in, lab, cfg.gnp_r, cfg.gnp_beta, &gnp_fell,
                                      &loss1);
                loss_here = loss1[0];
                if (!gnp_fell.empty()) {
                    fell[i] = 1;
                }
            } else {
                const PerImageLossGrad plain = per_image_loss_and_grad(model, x_in, lab);
                g = plain.input_grad;
                loss_here = plain.loss[0];
            }
            if (cfg.record_trace) {
                loss_slots[i * steps + t] = loss_here;
                gnorm_slots[i * steps + t] = l2_norm(g);
            }

            if (pipeline.tim_kernel != 0) {
                g = tim_smooth(g, pipeline.tim_kernel);
            }

            const Tensor* direction = &g;
            if (pipeline.momentum) {
                const double l1 = l1_norm(g);
                if (l1 < kZeroNormThreshold) {
                    fell[i] = 1;  // keep g unnormalized
                    for (std::size_t j = 0; j < acc.numel(); ++j) {
                        acc[j] = cfg.momentum_decay * acc[j] + g[j];
                    }
                } else {
                    for (std::size_t j = 0; j < acc.numel(); ++j) {
                        acc[j] = cfg.momentum_decay * acc[j] + g[j] / l1;
                    }
                }
                direction = &acc;
            }

            for (std::size_t j = 0; j < x.numel(); ++j) {
                x[j] = x[j] + alpha * sign((*direction)[j]);
            }
            x = project_clip(x, orig, cfg.epsilon);
            if (!x.all_finite()) {
                throw NumericError("attack produced a non-finite iterate at iteration " +
                                   std::to_string(t) + " (image " + std::to_string(i) + ")");
            }
        }

        for (std::size_t j = 0; j < item; ++j) {
            batch.perturbed.values[i * item + j] = x[j];
        }
    });

    if (cfg.record_trace) {
        batch.trace.mean_loss.resize(steps);
        batch.trace.mean_grad_norm.resize(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            double loss_sum = 0.0, gnorm_sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                loss_sum += loss_slots[i * steps + t];
                gnorm_sum += gnorm_slots[i * steps + t];
            }
            batch.trace.mean_loss[t] = loss_sum / static_cast<double>(n);
            batch.trace.mean_grad_norm[t] = gnorm_sum / static_cast<double>(n);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (fell[i] != 0) {
            batch.trace.fallback_images.push_back(i);
        }
    }
    if (n > 0) {
        batch.source_misclassified = misclassified_flags(model, batch.perturbed, labels);
    }
    return batch;
}

AdversarialBatch fgsm(const Model& model, const Tensor& images, const std::vector<int>& labels,
                      double epsilon) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        throw ConfigError("epsilon must lie in [0,1], got " + std::to_string(epsilon));
    }
    require_images(images, labels);

    AdversarialBatch batch;
    batch.originals = images;
    batch.labels = labels;
    batch.method = "fgsm";
    batch.config.epsilon = epsilon;
    batch.config.steps = 1;
    batch.config.step_size = epsilon;
    batch.config.momentum_decay = 0.0;

    const PerImageLossGrad g = per_image_loss_and_grad(model, images, labels);
    Tensor perturbed = images;
    for (std::size_t j = 0; j < perturbed.numel(); ++j) {
        double v = images[j] + epsilon * sign(g.input_grad[j]);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        perturbed[j] = v;
    }
    batch.perturbed = std::move(perturbed);
    if (!labels.empty()) {
        batch.source_misclassified = misclassified_flags(model, batch.perturbed, labels);
    }
    return batch;
}

AdversarialBatch ifgsm(const Model& model, const Tensor& images, const std::vector<int>& labels,
                       const AttackConfig& cfg) {
    GradientPipeline pipeline = pipeline_for(cfg, "ifgsm");
    AdversarialBatch batch = run_attack(pipeline, cfg, model, images, labels);
    batch.method = "ifgsm";
    return batch;
}

AdversarialBatch mifgsm(const Model& model, const Tensor& images, const std::vector<int>& labels,
                        const AttackConfig& cfg) {
    GradientPipeline pipeline = pipeline_for(cfg, "mifgsm");
    AdversarialBatch batch = run_attack(pipeline, cfg, model, images, labels);
    batch.method = "mifgsm";
    return batch;
}

AdversarialBatch craft(const std::string& method, const Model& model, const Tensor& images,
                       const std::vector<int>& labels, const AttackConfig& cfg) {
    if (method == "fgsm") {
        AttackConfig one = cfg;
        one.steps = 1;
        one.step_size = cfg.epsilon;
        GradientPipeline pipeline = pipeline_for(one, "fgsm");
        AdversarialBatch batch = run_attack(pipeline, one, model, images, labels);
        batch.method = "fgsm";
        return batch;
    }
    if (method == "ifgsm") {
        return ifgsm(model, images, labels, cfg);
    }
    if (method == "mifgsm") {
        return mifgsm(model, images, labels, cfg);
    }
    pipeline_for(cfg, method);  // throws with the known-method list
    return {};
}

void save_batch(const AdversarialBatch& batch, const std::string& prefix) {
    data::write_idx_double(batch.originals, prefix + ".originals.idx");
    data::write_idx_double(batch.perturbed, prefix + ".perturbed.idx");
    data::write_idx_labels(batch.labels, prefix + ".labels.idx");

    nlohmann::json meta;
    meta["method"] = batch.method;
    nlohmann::json cfg;
    cfg["epsilon"] = batch.config.epsilon;
    cfg["steps"] = batch.config.steps;
    if (batch.config.step_size) {
        cfg["step_size"] = *batch.config.step_size;
    }
    cfg["momentum_decay"] = batch.config.momentum_decay;
    cfg["gnp_enabled"] = batch.config.gnp_enabled;
    cfg["gnp_r"] = batch.config.gnp_r;
    cfg["gnp_beta"] = batch.config.gnp_beta;
    cfg["dim_probability"] = batch.config.dim_probability;
    cfg["tim_kernel"] = batch.config.tim_kernel;
    cfg["seed"] = batch.config.seed;
    meta["config"] = cfg;
    meta["source_misclassified"] = batch.source_misclassified;
    meta["fallback_images"] = batch.trace.fallback_images;
    meta["mean_loss"] = batch.trace.mean_loss;
    meta["mean_grad_norm"] = batch.trace.mean_grad_norm;
    std::ofstream out(prefix + ".meta.json");
    if (!out) {
        throw DataError("cannot write '" + prefix + ".meta.json'");
    }
    out << meta.dump(2) << "\n";
}

AdversarialBatch load_batch(const std::string& prefix) {
    AdversarialBatch batch;
    batch.originals = data::read_idx_double(prefix + ".originals.idx");
    batch.perturbed = data::read_idx_double(prefix + ".perturbed.idx");
    batch.labels = data::read_idx_labels(prefix + ".labels.idx");

    const std::string meta_path = prefix + ".meta.json";
    std::ifstream in(meta_path);
    if (!in) {
        throw DataError("cannot open '" + meta_path + "'");
    }
    nlohmann::json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + meta_path + "' is not valid JSON: " + e.what());
    }
    batch.method = meta.value("method", "");
    if (meta.contains("config")) {
        const nlohmann::json& cfg = meta["config"];
        batch.config.epsilon = cfg.value("epsilon", batch.config.epsilon);
        batch.config.steps = cfg.value("steps", batch.config.steps);
        if (cfg.contains("step_size")) {
            batch.config.step_size = cfg["step_size"].get<double>();
        }
        batch.config.momentum_decay = cfg.value("momentum_decay", batch.config.momentum_decay);
        batch.config.gnp_enabled = cfg.value("gnp_enabled", batch.config.gnp_enabled);
        batch.config.gnp_r = cfg.value("gnp_r", batch.config.gnp_r);
        batch.config.gnp_beta = cfg.value("gnp_beta", batch.config.gnp_beta);
        batch.config.dim_probability = cfg.value("dim_probability", batch.config.dim_probability);
        batch.config.tim_kernel = cfg.value("tim_kernel", batch.config.tim_kernel);
        batch.config.seed = cfg.value("seed", batch.config.seed);
    }
    batch.source_misclassified =
        meta.value("source_misclassified", std::vector<std::uint8_t>{});
    batch.trace.fallback_images = meta.value("fallback_images", std::vector<std::size_t>{});
    batch.trace.mean_loss = meta.value("mean_loss", std::vector<double>{});
    batch.trace.mean_grad_norm = meta.value("mean_grad_norm", std::vector<double>{});
    return batch;
}

}  // namespace advlab::attacks
