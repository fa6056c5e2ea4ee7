#include "advlab/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "advlab/attacks.hpp"
#include "advlab/errors.hpp"

namespace advlab::landscape {

namespace {

double point_loss(const Model& model, const Tensor& image, int label) {
    const Tensor logits = forward(model, image);
    const std::vector<double> losses = softmax_cross_entropy(logits, {label}, nullptr);
    return losses[0];
}

Tensor clipped_offset(const Tensor& image, const Tensor& direction, double rho) {
    Tensor probe = image;
    for (std::size_t j = 0; j < probe.numel(); ++j) {
        double v = image[j] + rho * direction[j];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        probe[j] = v;
    }
    return probe;
}

}  // namespace

std::vector<double> gradient_norm_at(const Model& model, const Tensor& images,
                                     const std::vector<int>& labels) {
    const PerImageLossGrad g = per_image_loss_and_grad(model, images, labels);
    const std::size_t n = labels.size();
    const std::size_t item = per_item_size(images);
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = i * item; j < (i + 1) * item; ++j) {
            sq += g.input_grad[j] * g.input_grad[j];
        }
        norms[i] = std::sqrt(sq);
    }
    return norms;
}

FlatnessProbe loss_slice(const Model& model, const Tensor& image, int label,
                         const std::vector<Tensor>& directions,
                         const std::vector<double>& radii) {
    if (image.rank() != 4 || image.dim(0) != 1) {
        throw ConfigError("flatness probe expects a single image (batch of one)");
    }
    if (directions.empty()) {
        throw ConfigError("flatness probe needs at least one direction");
    }
    if (radii.empty()) {
        throw ConfigError("flatness probe needs at least one radius");
    }
    for (std::size_t k = 0; k < radii.size(); ++k) {
        if (!(radii[k] >= 0.0)) {
            throw ConfigError("probe radii must be non-negative");
        }
        if (k > 0 && !(radii[k] > radii[k - 1])) {
            throw ConfigError("probe radii must be strictly ascending");
        }
    }
    for (const Tensor& d : directions) {
        if (!d.same_shape(image)) {
            throw ConfigError("probe directions must match the image shape");
        }
        const double norm = l2_norm(d);
        if (std::abs(norm - 1.0) > 1e-6) {
            throw ConfigError("probe directions must be unit length (got norm " +
                              std::to_string(norm) + ")");
        }
    }

    FlatnessProbe probe;
    probe.center = image;
    probe.radii = radii;
    for (std::size_t k = radii.size(); k > 0; --k) {
        if (radii[k - 1] > 0.0) {
            probe.signed_radii.push_back(-radii[k - 1]);
        }
    }
    probe.signed_radii.insert(probe.signed_radii.end(), radii.begin(), radii.end());

    probe.center_loss = point_loss(model, image, label);
    probe.center_grad_norm = gradient_norm_at(model, image, {label})[0];

    probe.loss.resize(directions.size());
    for (std::size_t d = 0; d < directions.size(); ++d) {
        probe.loss[d].reserve(probe.signed_radii.size());
        for (double rho : probe.signed_radii) {
            const double value =
                rho == 0.0 ? probe.center_loss
                           : point_loss(model, clipped_offset(image, directions[d], rho), label);
            if (!std::isfinite(value)) {
                throw NumericError("flatness probe hit a non-finite loss at radius " +
                                   std::to_string(rho));
            }
            probe.loss[d].push_back(value);
        }
    }
    return probe;
}

double sharpness(const Model& model, const Tensor& images, const std::vector<int>& labels,
                 double radius, std::size_t n_samples, std::uint64_t seed) {
    if (!(radius > 0.0)) {
        throw ConfigError("sharpness radius must be positive, got " + std::to_string(radius));
    }
    if (n_samples == 0) {
        throw ConfigError("sharpness needs at least one sampled direction");
    }
    if (images.rank() != 4 || images.dim(0) != labels.size()) {
        throw ConfigError("sharpness expects a batch of images with one label each");
    }
    if (labels.empty()) {
        throw ConfigError("sharpness over an empty batch is undefined");
    }

    const std::vector<std::size_t> item_shape{1, images.shape[1], images.shape[2],
                                              images.shape[3]};
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const Tensor x = slice_item(images, i);
        const double base = point_loss(model, x, labels[i]);
        rng::Stream stream(rng::derive(seed, "sharpness", i));
        double acc = 0.0;
        for (std::size_t s = 0; s < n_samples; ++s) {
            const Tensor d = random_unit_direction(item_shape, stream);
            const double drop = base - point_loss(model, clipped_offset(x, d, radius), labels[i]);
            acc += drop > 0.0 ? drop : 0.0;
        }
        total += acc / static_cast<double>(n_samples);
    }
    return total / static_cast<double>(labels.size());
}

Tensor random_unit_direction(const std::vector<std::size_t>& shape, rng::Stream& stream) {
    Tensor d = Tensor::zeros(shape);
    double norm = 0.0;
    do {
        for (double& v : d.values) {
            v = stream.normal();
        }
        norm = l2_norm(d);
    } while (norm < attacks::kZeroNormThreshold);
    for (double& v : d.values) {
        v /= norm;
    }
    return d;
}

std::string probe_csv(const std::vector<FlatnessProbe>& probes) {
    std::ostringstream out;
    out << "image_id,direction_id,radius,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const FlatnessProbe& probe = probes[i];
        for (std::size_t d = 0; d < probe.loss.size(); ++d) {
            for (std::size_t k = 0; k < probe.signed_radii.size(); ++k) {
                out << i << ',' << d << ',';
                std::snprintf(buf, sizeof(buf), "%.17g", probe.signed_radii[k]);
                out << buf << ',';
                std::snprintf(buf, sizeof(buf), "%.17g", probe.loss[d][k]);
                out << buf << '\n';
            }
        }
    }
    return out.str();
}

void write_probe_csv(const std::vector<FlatnessProbe>& probes, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write '" + path + "'");
    }
    out << probe_csv(probes);
}

}  // namespace advlab::landscape
