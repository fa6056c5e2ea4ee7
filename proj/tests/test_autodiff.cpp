#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "advlab/model.hpp"
#include "advlab/rng.hpp"
#include "advlab/zoo.hpp"

#include "test_support.hpp"

using namespace advlab;
using namespace testsupport;

namespace {

// Mean batch loss as a plain function of one input coordinate, for
// independent finite differences.
double loss_at(const Model& model, Tensor images, const std::vector<int>& labels,
               std::size_t coord, double value) {
    images.values[coord] = value;
    const Tensor logits = forward(model, images);
    const std::vector<double> losses = softmax_cross_entropy(logits, labels, nullptr);
    double sum = 0.0;
    for (double l : losses) {
        sum += l;
    }
    return sum / static_cast<double>(losses.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss layer
// ---------------------------------------------------------------------------

TEST_CASE("cross entropy of uniform logits is log C") {
    const Tensor logits({2, 4}, std::vector<double>(8, 0.7));
    const std::vector<double> losses = softmax_cross_entropy(logits, {0, 3}, nullptr);
    CHECK(losses[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(losses[1] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
    const Tensor logits({1, 3}, {1.0, 2.0, 0.5});
    Tensor dlogits;
    softmax_cross_entropy(logits, {1}, &dlogits);
    double z = 0.0;
    for (double v : logits.values) {
        z += std::exp(v);
    }
    for (int k = 0; k < 3; ++k) {
        const double p = std::exp(logits.values[static_cast<std::size_t>(k)]) / z;
        const double expected = p - (k == 1 ? 1.0 : 0.0);
        CHECK(dlogits.values[static_cast<std::size_t>(k)] ==
              doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("cross entropy is stable for extreme logits") {
    const Tensor logits({1, 2}, {1000.0, -1000.0});
    const std::vector<double> losses = softmax_cross_entropy(logits, {0}, nullptr);
    CHECK(std::isfinite(losses[0]));
    CHECK(losses[0] == doctest::Approx(0.0).epsilon(1e-9));
}

// ---------------------------------------------------------------------------
// Forward pass oracles
// ---------------------------------------------------------------------------

TEST_CASE("an affine-only model is exactly its matrix") {
    zoo::ArchSpec arch;
    arch.id = "linear";
    arch.input = {1, 1, 3};
    arch.classes = 2;
    Model model = zoo::build(arch, 21);
    const auto& aff = std::get<AffineLayer>(model.layers.front());

    const Tensor x({1, 1, 1, 3}, {0.2, -0.4, 0.9});
    const Tensor logits = forward(model, x);
    for (std::size_t o = 0; o < 2; ++o) {
        double expected = aff.b.values[o];
        for (std::size_t i = 0; i < 3; ++i) {
            expected += aff.w.values[o * 3 + i] * x.values[i];
        }
        CHECK(logits.values[o] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("predict returns the argmax class") {
    const Model& model = small_trained_model();
    const Tensor batch = test_images(8);
    const Tensor logits = forward(model, batch);
    const std::vector<int> pred = predict(model, batch);
    for (std::size_t i = 0; i < 8; ++i) {
        int best = 0;
        for (int k = 1; k < 4; ++k) {
            if (logits.values[i * 4 + static_cast<std::size_t>(k)] >
                logits.values[i * 4 + static_cast<std::size_t>(best)]) {
                best = k;
            }
        }
        CHECK(pred[i] == best);
    }
}

// ---------------------------------------------------------------------------
// Input gradients vs central finite differences
// ---------------------------------------------------------------------------

TEST_CASE("analytic input gradients match finite differences on every zoo arch") {
    for (const zoo::ArchSpec& arch : zoo::default_zoo({1, 12, 12}, 4)) {
        CAPTURE(arch.id);
        const Model model = zoo::build(arch, rng::derive(33, arch.id));
        const Tensor images = random_images(2, 12, rng::derive(34, arch.id));
        const std::vector<int> labels = random_labels(2, 4, rng::derive(35, arch.id));
        CHECK(check_gradient(model, images, labels, 1e-5) < 1e-6);
    }
}

TEST_CASE("input gradients stay correct on a trained model") {
    const Model& model = small_trained_model();
    const Tensor images = test_images(4);
    const std::vector<int> labels = test_labels(4);
    CHECK(check_gradient(model, images, labels, 1e-5) < 1e-5);
}

TEST_CASE("hand finite difference agrees at individual coordinates") {
    const Model& model = small_trained_model();
    const Tensor images = test_images(2);
    const std::vector<int> labels = test_labels(2);
    const LossValueAndGrad lg = loss_and_input_gradient(model, images, labels);
    const double h = 1e-6;
    rng::Stream stream(77);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t c = stream.index(images.numel());
        const double x0 = images.values[c];
        const double up = loss_at(model, images, labels, c, x0 + h);
        const double down = loss_at(model, images, labels, c, x0 - h);
        const double fd = (up - down) / (2 * h);
        CHECK(lg.input_grad.values[c] == doctest::Approx(fd).epsilon(1e-4));
    }
}

// ---------------------------------------------------------------------------
// Per-image vs batch gradients
// ---------------------------------------------------------------------------

TEST_CASE("per-image gradients compose into the batch gradient") {
    const Model& model = small_trained_model();
    const std::size_t n = 6;
    const Tensor images = test_images(n);
    const std::vector<int> labels = test_labels(n);

    const PerImageLossGrad per = per_image_loss_and_grad(model, images, labels);
    const LossValueAndGrad batch = loss_and_input_gradient(model, images, labels);

    double mean_loss = 0.0;
    for (double l : per.loss) {
        mean_loss += l;
    }
    mean_loss /= static_cast<double>(n);
    CHECK(batch.loss == doctest::Approx(mean_loss).epsilon(1e-12));

    REQUIRE(per.input_grad.shape == batch.input_grad.shape);
    for (std::size_t i = 0; i < per.input_grad.numel(); ++i) {
        CHECK(batch.input_grad.values[i] ==
              doctest::Approx(per.input_grad.values[i] / static_cast<double>(n)).epsilon(1e-9));
    }
}

TEST_CASE("per-image gradients do not depend on batch partitioning") {
    const Model& model = small_trained_model();
    const Tensor images = test_images(6);
    const std::vector<int> labels = test_labels(6);
    const PerImageLossGrad full = per_image_loss_and_grad(model, images, labels);

    for (std::size_t i = 0; i < 6; ++i) {
        const Tensor one = slice_item(images, i);
        const PerImageLossGrad single = per_image_loss_and_grad(model, one, {labels[i]});
        CHECK(full.loss[i] == single.loss[0]);
        const std::size_t item = per_item_size(images);
        for (std::size_t p = 0; p < item; ++p) {
            CHECK(full.input_grad.values[i * item + p] == single.input_grad.values[p]);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient evaluation accounting
// ---------------------------------------------------------------------------

TEST_CASE("every backward pass increments the evaluation counter") {
    const Model& model = small_trained_model();
    const Tensor images = test_images(3);
    const std::vector<int> labels = test_labels(3);
    reset_gradient_eval_count();
    loss_and_input_gradient(model, images, labels);
    loss_and_input_gradient(model, images, labels);
    CHECK(gradient_eval_count() == 2);
    reset_gradient_eval_count();
    CHECK(gradient_eval_count() == 0);
}
