#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "advlab/errors.hpp"
#include "advlab/landscape.hpp"
#include "advlab/model.hpp"
#include "advlab/rng.hpp"
#include "advlab/util.hpp"

#include "test_support.hpp"

using namespace advlab;
using namespace testsupport;

namespace {

Tensor clip01_offset(const Tensor& x, const Tensor& d, double rho) {
    Tensor out = x;
    for (std::size_t j = 0; j < out.numel(); ++j) {
        out[j] = std::min(std::max(x[j] + rho * d[j], 0.0), 1.0);
    }
    return out;
}

double single_loss(const Model& m, const Tensor& image, int label) {
    return softmax_cross_entropy(forward(m, image), {label}, nullptr)[0];
}

Model zero_model() {
    Model m = small_conv_model(5);
    for (Layer& layer : m.layers) {
        if (auto* a = std::get_if<AffineLayer>(&layer)) {
            std::fill(a->w.values.begin(), a->w.values.end(), 0.0);
            std::fill(a->b.values.begin(), a->b.values.end(), 0.0);
        } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
            std::fill(c->w.values.begin(), c->w.values.end(), 0.0);
            std::fill(c->b.values.begin(), c->b.values.end(), 0.0);
        }
    }
    return m;
}

}  // namespace

TEST_CASE("gradient norms match a per-image recomputation") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(3);
    const std::vector<int> labels = test_labels(3);
    const std::vector<double> norms = landscape::gradient_norm_at(m, images, labels);
    REQUIRE(norms.size() == 3);

    const PerImageLossGrad per = per_image_loss_and_grad(m, images, labels);
    const std::size_t item = per_item_size(images);
    for (std::size_t i = 0; i < 3; ++i) {
        double sq = 0.0;
        for (std::size_t j = i * item; j < (i + 1) * item; ++j) {
            sq += per.input_grad[j] * per.input_grad[j];
        }
        CHECK(norms[i] == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
    }
}

TEST_CASE("the loss slice reproduces direct evaluations along each line") {
    const Model& m = small_trained_model();
    const Tensor image = test_images(1);
    const int label = test_labels(1)[0];

    rng::Stream stream(55);
    std::vector<Tensor> directions;
    directions.push_back(landscape::random_unit_direction(image.shape, stream));
    directions.push_back(landscape::random_unit_direction(image.shape, stream));

    const std::vector<double> radii{0.0, 0.02, 0.05};
    const landscape::FlatnessProbe probe = landscape::loss_slice(m, image, label, directions, radii);

    CHECK(probe.radii == radii);
    CHECK(probe.signed_radii == std::vector<double>{-0.05, -0.02, 0.0, 0.02, 0.05});
    CHECK(probe.center_loss == single_loss(m, image, label));
    CHECK(probe.center_grad_norm ==
          doctest::Approx(landscape::gradient_norm_at(m, image, {label})[0]).epsilon(1e-15));

    REQUIRE(probe.loss.size() == 2);
    for (std::size_t d = 0; d < 2; ++d) {
        REQUIRE(probe.loss[d].size() == probe.signed_radii.size());
        for (std::size_t k = 0; k < probe.signed_radii.size(); ++k) {
            const double rho = probe.signed_radii[k];
            if (rho == 0.0) {
                CHECK(probe.loss[d][k] == probe.center_loss);  // exact, not re-evaluated
            } else {
                const double direct = single_loss(m, clip01_offset(image, directions[d], rho), label);
                CHECK(probe.loss[d][k] == doctest::Approx(direct).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("a slice with positive radii only omits a zero entry") {
    const Model& m = small_trained_model();
    const Tensor image = test_images(1);
    rng::Stream stream(56);
    const std::vector<Tensor> dirs{landscape::random_unit_direction(image.shape, stream)};
    const landscape::FlatnessProbe probe =
        landscape::loss_slice(m, image, test_labels(1)[0], dirs, {0.01, 0.03});
    CHECK(probe.signed_radii == std::vector<double>{-0.03, -0.01, 0.01, 0.03});
}

TEST_CASE("the loss slice rejects malformed probes") {
    const Model& m = small_trained_model();
    const Tensor image = test_images(1);
    const int label = test_labels(1)[0];
    rng::Stream stream(57);
    const Tensor unit = landscape::random_unit_direction(image.shape, stream);

    CHECK_THROWS_WITH_AS(landscape::loss_slice(m, test_images(2), label, {unit}, {0.1}),
                         doctest::Contains("single image"), ConfigError);
    CHECK_THROWS_AS(landscape::loss_slice(m, image, label, {}, {0.1}), ConfigError);
    CHECK_THROWS_AS(landscape::loss_slice(m, image, label, {unit}, {}), ConfigError);
    CHECK_THROWS_AS(landscape::loss_slice(m, image, label, {unit}, {-0.1, 0.1}), ConfigError);
    CHECK_THROWS_WITH_AS(landscape::loss_slice(m, image, label, {unit}, {0.1, 0.1}),
                         doctest::Contains("ascending"), ConfigError);

    Tensor scaled = unit;
    for (double& v : scaled.values) {
        v *= 2.0;
    }
    CHECK_THROWS_WITH_AS(landscape::loss_slice(m, image, label, {scaled}, {0.1}),
                         doctest::Contains("unit length"), ConfigError);
    CHECK_THROWS_AS(landscape::loss_slice(m, image, label, {Tensor::zeros(image.shape)}, {0.1}),
                    ConfigError);
    CHECK_THROWS_AS(landscape::loss_slice(m, image, label, {Tensor::zeros({1, 1, 2, 2})}, {0.1}),
                    ConfigError);
}

TEST_CASE("random directions are unit length and stream-deterministic") {
    rng::Stream a(9);
    rng::Stream b(9);
    const Tensor da = landscape::random_unit_direction({1, 1, 6, 6}, a);
    const Tensor db = landscape::random_unit_direction({1, 1, 6, 6}, b);
    CHECK(bitwise_equal(da, db));
    CHECK(l2_norm(da) == doctest::Approx(1.0).epsilon(1e-12));

    const Tensor dc = landscape::random_unit_direction({1, 1, 6, 6}, a);
    CHECK_FALSE(bitwise_equal(dc, da));
}

TEST_CASE("sharpness matches a direct reconstruction of its definition") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(3);
    const std::vector<int> labels = test_labels(3);
    const double radius = 4.0 / 255.0;
    const std::size_t n_samples = 4;
    const std::uint64_t seed = 77;

    const double got = landscape::sharpness(m, images, labels, radius, n_samples, seed);

    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const Tensor x = slice_item(images, i);
        const double base = single_loss(m, x, labels[i]);
        rng::Stream stream(rng::derive(seed, "sharpness", i));
        double acc = 0.0;
        for (std::size_t s = 0; s < n_samples; ++s) {
            const Tensor d = landscape::random_unit_direction(x.shape, stream);
            const double drop = base - single_loss(m, clip01_offset(x, d, radius), labels[i]);
            acc += std::max(drop, 0.0);
        }
        total += acc / static_cast<double>(n_samples);
    }
    total /= static_cast<double>(labels.size());

    CHECK(got == doctest::Approx(total).epsilon(1e-12));
    CHECK(got >= 0.0);
}

TEST_CASE("sharpness is deterministic, non-negative, and zero for a constant model") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(3);
    const std::vector<int> labels = test_labels(3);

    const double a = landscape::sharpness(m, images, labels, 0.02, 3, 5);
    const double b = landscape::sharpness(m, images, labels, 0.02, 3, 5);
    CHECK(a == b);
    CHECK(a >= 0.0);
    const double c = landscape::sharpness(m, images, labels, 0.02, 3, 6);
    CHECK(a != c);

    const Model flat = zero_model();
    CHECK(landscape::sharpness(flat, images, labels, 0.02, 3, 5) == 0.0);
}

TEST_CASE("sharpness validates its arguments") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(2);
    const std::vector<int> labels = test_labels(2);
    CHECK_THROWS_AS(landscape::sharpness(m, images, labels, 0.0, 3, 5), ConfigError);
    CHECK_THROWS_AS(landscape::sharpness(m, images, labels, 0.02, 0, 5), ConfigError);
    CHECK_THROWS_AS(landscape::sharpness(m, images, test_labels(3), 0.02, 3, 5), ConfigError);
    CHECK_THROWS_AS(landscape::sharpness(m, Tensor::zeros({2, 12, 12}), labels, 0.02, 3, 5),
                    ConfigError);
}

TEST_CASE("probe tables render as long-format CSV") {
    const Model& m = small_trained_model();
    const Tensor image = test_images(1);
    rng::Stream stream(58);
    const std::vector<Tensor> dirs{landscape::random_unit_direction(image.shape, stream)};
    const landscape::FlatnessProbe probe =
        landscape::loss_slice(m, image, test_labels(1)[0], dirs, {0.0, 0.05});

    const std::string csv = landscape::probe_csv({probe, probe});
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "image_id,direction_id,radius,loss");
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 3);
        ++rows;
    }
    // Two probes, one direction each, three signed radii.
    CHECK(rows == 2 * 3);
    CHECK(csv.find("0,0,0,") != std::string::npos);  // the zero-radius row

    TempDir tmp("probe-csv");
    landscape::write_probe_csv({probe}, tmp.path("probe.csv"));
    CHECK(util::read_binary_file(tmp.path("probe.csv")) == landscape::probe_csv({probe}));
    CHECK_THROWS_AS(landscape::write_probe_csv({probe}, tmp.path("no/such/dir/p.csv")),
                    DataError);
}
