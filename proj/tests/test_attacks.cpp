#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/errors.hpp"
#include "advlab/model.hpp"
#include "advlab/rng.hpp"
#include "advlab/util.hpp"
#include "advlab/zoo.hpp"

#include "test_support.hpp"

using namespace advlab;
using namespace testsupport;

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// A classifier that is exactly linear in its input: no feature stack, just
// the final affine layer the builder appends.
Model linear_model(std::array<std::size_t, 3> input, std::size_t classes, std::uint64_t seed) {
    zoo::ArchSpec spec;
    spec.id = "mlp-64";  // id is label only; the layer list below decides the shape
    spec.layers = {};
    spec.input = input;
    spec.classes = classes;
    return zoo::build(spec, seed);
}

void overwrite_params(Model& m, double value) {
    for (Layer& layer : m.layers) {
        if (auto* a = std::get_if<AffineLayer>(&layer)) {
            std::fill(a->w.values.begin(), a->w.values.end(), value);
            std::fill(a->b.values.begin(), a->b.values.end(), value);
        } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
            std::fill(c->w.values.begin(), c->w.values.end(), value);
            std::fill(c->b.values.begin(), c->b.values.end(), value);
        }
    }
}

double single_loss(const Model& m, const Tensor& image, int label) {
    return per_image_loss_and_grad(m, image, {label}).loss[0];
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and pipeline wiring
// ---------------------------------------------------------------------------

TEST_CASE("attack configuration rejects out-of-range fields") {
    attacks::AttackConfig cfg;
    cfg.validate();  // defaults are fine

    cfg = {};
    cfg.epsilon = 1.5;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("epsilon"), ConfigError);

    cfg = {};
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = {};
    cfg.step_size = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = {};
    cfg.momentum_decay = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = {};
    cfg.gnp_enabled = true;
    cfg.gnp_r = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = {};
    cfg.gnp_enabled = true;
    cfg.gnp_beta = -0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = {};
    cfg.dim_probability = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = {};
    cfg.tim_kernel = 4;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("odd"), ConfigError);

    cfg = {};
    cfg.workers = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("step size defaults to epsilon over steps and the penalty weight is beta*r") {
    attacks::AttackConfig cfg;
    cfg.epsilon = 0.08;
    cfg.steps = 16;
    CHECK(cfg.alpha() == 0.08 / 16.0);
    cfg.step_size = 0.002;
    CHECK(cfg.alpha() == 0.002);
    cfg.gnp_r = 0.01;
    cfg.gnp_beta = 0.8;
    CHECK(cfg.lambda() == 0.8 * 0.01);
}

TEST_CASE("method names map onto the expected pipeline stages") {
    attacks::AttackConfig cfg;
    attacks::GradientPipeline p = attacks::pipeline_for(cfg, "ifgsm");
    CHECK_FALSE(p.input_diversity);
    CHECK(p.source == attacks::GradientSource::plain);
    CHECK(p.tim_kernel == 0);
    CHECK_FALSE(p.momentum);

    p = attacks::pipeline_for(cfg, "fgsm");
    CHECK_FALSE(p.momentum);

    p = attacks::pipeline_for(cfg, "mifgsm");
    CHECK(p.momentum);

    cfg.gnp_enabled = true;
    cfg.dim_probability = 0.4;
    cfg.tim_kernel = 3;
    p = attacks::pipeline_for(cfg, "mifgsm");
    CHECK(p.input_diversity);
    CHECK(p.source == attacks::GradientSource::gnp);
    CHECK(p.tim_kernel == 3);
    CHECK(p.momentum);

    CHECK_THROWS_WITH_AS(attacks::pipeline_for(cfg, "pgd"),
                         doctest::Contains("unknown attack method"), ConfigError);
    CHECK(attacks::known_methods() == std::vector<std::string>{"fgsm", "ifgsm", "mifgsm"});
}

TEST_CASE("projection clamps to the epsilon box and then the pixel range") {
    rng::Stream stream(404);
    Tensor originals = Tensor::zeros({2, 1, 3, 3});
    Tensor perturbed = Tensor::zeros({2, 1, 3, 3});
    for (std::size_t j = 0; j < originals.numel(); ++j) {
        originals[j] = stream.uniform(0.0, 1.0);
        perturbed[j] = originals[j] + stream.uniform(-0.3, 0.3);
    }
    const double eps = 0.1;
    const Tensor out = attacks::project_clip(perturbed, originals, eps);
    for (std::size_t j = 0; j < out.numel(); ++j) {
        double v = perturbed[j];
        v = std::max(v, originals[j] - eps);
        v = std::min(v, originals[j] + eps);
        v = std::min(std::max(v, 0.0), 1.0);
        CHECK(out[j] == v);
    }

    CHECK_THROWS_AS(attacks::project_clip(perturbed, Tensor::zeros({1, 1, 3, 3}), eps),
                    ConfigError);
    CHECK_THROWS_AS(attacks::project_clip(perturbed, originals, -0.1), ConfigError);
}

TEST_CASE("attack inputs must be image batches with matching labels in range") {
    const Model& m = small_trained_model();
    CHECK_THROWS_WITH_AS(attacks::fgsm(m, Tensor::zeros({1, 12, 12}), {0}, 0.05),
                         doctest::Contains("4 axes"), ConfigError);
    CHECK_THROWS_AS(attacks::fgsm(m, Tensor::zeros({2, 1, 12, 12}), {0}, 0.05), ConfigError);
    Tensor bad = Tensor::full({1, 1, 12, 12}, 0.5);
    bad[0] = 1.5;
    CHECK_THROWS_WITH_AS(attacks::fgsm(m, bad, {0}, 0.05), doctest::Contains("[0,1]"),
                         ConfigError);
    CHECK_THROWS_AS(attacks::fgsm(m, Tensor::full({1, 1, 12, 12}, 0.5), {0}, 1.5), ConfigError);
}

// ---------------------------------------------------------------------------
// The two-evaluation penalized gradient
// ---------------------------------------------------------------------------

TEST_CASE("on a quadratic loss the combination matches its closed form") {
    // loss(x) = x'Ax/2 with symmetric positive definite A, so grad = Ax and
    // the penalized gradient is Ax - beta*r*A(Ax)/|Ax|.
    const std::size_t d = 6;
    rng::Stream stream(2024);
    std::vector<double> mat(d * d);
    for (double& v : mat) {
        v = stream.uniform(-1.0, 1.0);
    }
    std::vector<double> a(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = 0; k < d; ++k) {
                a[i * d + j] += mat[k * d + i] * mat[k * d + j];
            }
        }
        a[i * d + i] += 0.5;
    }
    const auto apply_a = [&](const std::vector<double>& x) {
        std::vector<double> y(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                y[i] += a[i * d + j] * x[j];
            }
        }
        return y;
    };

    std::vector<double> x(d);
    for (double& v : x) {
        v = stream.uniform(-2.0, 2.0);
    }

    for (double r : {1e-3, 1e-2}) {
        for (double beta : {0.4, 0.8, 1.6}) {
            bool fell = true;
            const std::vector<double> got = attacks::gnp_combine(apply_a, x, r, beta, &fell);
            CHECK_FALSE(fell);

            const std::vector<double> ax = apply_a(x);
            double norm = 0.0;
            for (double v : ax) {
                norm += v * v;
            }
            norm = std::sqrt(norm);
            const std::vector<double> aax = apply_a(ax);
            for (std::size_t i = 0; i < d; ++i) {
                const double expected = ax[i] - beta * r * aax[i] / norm;
                const double denom = std::max({std::abs(expected), std::abs(got[i]), 1e-12});
                CHECK(std::abs(got[i] - expected) / denom < 1e-12);
            }
        }
    }
}

TEST_CASE("the combination validates its arguments and reports fallback") {
    const auto identity = [](const std::vector<double>& x) { return x; };
    CHECK_THROWS_AS(attacks::gnp_combine(identity, {1.0}, 0.0, 0.5), ConfigError);
    CHECK_THROWS_AS(attacks::gnp_combine(identity, {1.0}, 0.01, -0.5), ConfigError);

    const auto wrong = [](const std::vector<double>&) { return std::vector<double>{1.0}; };
    CHECK_THROWS_WITH_AS(attacks::gnp_combine(wrong, {1.0, 2.0}, 0.01, 0.5),
                         doctest::Contains("wrong dimension"), ConfigError);

    // A zero gradient keeps the plain gradient and flags the fallback.
    const auto zero = [](const std::vector<double>& x) {
        return std::vector<double>(x.size(), 0.0);
    };
    bool fell = false;
    const std::vector<double> got = attacks::gnp_combine(zero, {0.3, 0.4}, 0.01, 0.8, &fell);
    CHECK(fell);
    CHECK(got == std::vector<double>{0.0, 0.0});
}

TEST_CASE("the batched penalized gradient agrees with the scalar combination bit for bit") {
    const Model& m = small_trained_model();
    const Tensor image = slice_item(easy_test().images, 3);
    const int label = easy_test().labels[3];

    const auto grad_fn = [&](const std::vector<double>& flat) {
        const Tensor point(image.shape, flat);
        return per_image_loss_and_grad(m, point, {label}).input_grad.values;
    };
    const double r = 0.01;
    const double beta = 0.8;
    const std::vector<double> scalar = attacks::gnp_combine(grad_fn, image.values, r, beta);
    const Tensor batched = attacks::gnp_gradient(m, image, {label}, r, beta);
    REQUIRE(scalar.size() == batched.numel());
    CHECK(std::memcmp(scalar.data(), batched.values.data(), scalar.size() * sizeof(double)) == 0);
}

TEST_CASE("each image in a batch is penalized with its own gradient norm") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(4);
    const std::vector<int> labels = test_labels(4);
    const Tensor whole = attacks::gnp_gradient(m, images, labels, 0.01, 0.8);
    for (std::size_t i = 0; i < 4; ++i) {
        const Tensor one = attacks::gnp_gradient(m, slice_item(images, i), {labels[i]}, 0.01, 0.8);
        const std::size_t item = one.numel();
        for (std::size_t j = 0; j < item; ++j) {
            CHECK(std::memcmp(&whole.values[i * item + j], &one.values[j], sizeof(double)) == 0);
        }
    }
}

TEST_CASE("beta zero reduces the penalized gradient to the plain gradient bit for bit") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(3);
    const std::vector<int> labels = test_labels(3);
    const Tensor gnp = attacks::gnp_gradient(m, images, labels, 0.01, 0.0);
    const Tensor plain = per_image_loss_and_grad(m, images, labels).input_grad;
    CHECK(bitwise_equal(gnp, plain));
}

TEST_CASE("a zero-gradient model falls back to the plain gradient for every image") {
    Model zero = small_conv_model(5);
    overwrite_params(zero, 0.0);
    const Tensor images = test_images(3);
    const std::vector<int> labels = test_labels(3);

    std::vector<std::size_t> fallback;
    const Tensor g = attacks::gnp_gradient(zero, images, labels, 0.01, 0.8, &fallback);
    CHECK(fallback == std::vector<std::size_t>{0, 1, 2});
    const Tensor plain = per_image_loss_and_grad(zero, images, labels).input_grad;
    CHECK(bitwise_equal(g, plain));

    // Inside an iterative attack the same condition is visible in the trace,
    // and a zero direction leaves the images untouched.
    attacks::AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.steps = 3;
    cfg.gnp_enabled = true;
    cfg.record_trace = true;
    const attacks::AdversarialBatch batch = attacks::ifgsm(zero, images, labels, cfg);
    CHECK(batch.trace.fallback_images == std::vector<std::size_t>{0, 1, 2});
    CHECK(bitwise_equal(batch.perturbed, batch.originals));
}

TEST_CASE("the penalized gradient costs exactly two evaluations per step") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(3);
    const std::vector<int> labels = test_labels(3);
    attacks::AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.steps = 4;

    reset_gradient_eval_count();
    attacks::ifgsm(m, images, labels, cfg);
    const std::uint64_t plain_evals = gradient_eval_count();
    REQUIRE(plain_evals > 0);

    cfg.gnp_enabled = true;
    reset_gradient_eval_count();
    attacks::ifgsm(m, images, labels, cfg);
    const std::uint64_t gnp_evals = gradient_eval_count();
    reset_gradient_eval_count();

    CHECK(gnp_evals == 2 * plain_evals);
}

// ---------------------------------------------------------------------------
// Reduction identities
// ---------------------------------------------------------------------------

TEST_CASE("one full-size step of the iterative attack is the one-shot attack") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(4);
    const std::vector<int> labels = test_labels(4);
    const double eps = 8.0 / 255.0;

    const attacks::AdversarialBatch one_shot = attacks::fgsm(m, images, labels, eps);
    attacks::AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.steps = 1;
    cfg.step_size = eps;
    const attacks::AdversarialBatch iterative = attacks::ifgsm(m, images, labels, cfg);
    CHECK(bitwise_equal(one_shot.perturbed, iterative.perturbed));

    // Dispatch by name forces the same reduction.
    attacks::AttackConfig base;
    base.epsilon = eps;
    base.steps = 20;
    const attacks::AdversarialBatch named = attacks::craft("fgsm", m, images, labels, base);
    CHECK(named.config.steps == 1);
    CHECK(bitwise_equal(named.perturbed, one_shot.perturbed));
}

TEST_CASE("momentum with zero decay walks exactly like the memoryless attack") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(4);
    const std::vector<int> labels = test_labels(4);
    attacks::AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.steps = 5;

    const attacks::AdversarialBatch plain = attacks::ifgsm(m, images, labels, cfg);
    cfg.momentum_decay = 0.0;
    const attacks::AdversarialBatch mi = attacks::mifgsm(m, images, labels, cfg);
    REQUIRE(plain.size() == mi.size());
    for (std::size_t j = 0; j < plain.perturbed.numel(); ++j) {
        CHECK(sign_of(plain.perturbed[j] - plain.originals[j]) ==
              sign_of(mi.perturbed[j] - mi.originals[j]));
    }
    CHECK(bitwise_equal(plain.perturbed, mi.perturbed));
}

TEST_CASE("an empty pipeline is the bare iterative attack") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(4);
    const std::vector<int> labels = test_labels(4);
    attacks::AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.steps = 5;

    const attacks::GradientPipeline empty;
    const attacks::AdversarialBatch bare = attacks::run_attack(empty, cfg, m, images, labels);
    const attacks::AdversarialBatch named = attacks::ifgsm(m, images, labels, cfg);
    CHECK(bitwise_equal(bare.perturbed, named.perturbed));
}

// ---------------------------------------------------------------------------
// One-step optimality on a linear model
// ---------------------------------------------------------------------------

TEST_CASE("the one-shot attack is loss-optimal over all sign corners of a linear model") {
    // For a model whose logits are affine in the input, the worst L-inf
    // perturbation lies at a corner of the epsilon box. With 8 pixels the
    // 256 corners can be enumerated outright.
    const std::size_t d = 8;
    const Model m = linear_model({1, 1, d}, 2, 31);
    const double eps = 0.05;

    rng::Stream stream(77);
    Tensor images = Tensor::zeros({4, 1, 1, d});
    for (std::size_t j = 0; j < images.numel(); ++j) {
        images[j] = stream.uniform(0.3, 0.7);  // keep the whole box inside [0,1]
    }
    const std::vector<int> labels{0, 1, 0, 1};

    const attacks::AdversarialBatch batch = attacks::fgsm(m, images, labels, eps);

    for (std::size_t i = 0; i < 4; ++i) {
        const Tensor x = slice_item(images, i);
        const Tensor adv = slice_item(batch.perturbed, i);

        // The attack lands on a corner: every pixel moved by the full budget.
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(std::abs(std::abs(adv[j] - x[j]) - eps) < 1e-15);
        }

        double best = -1.0;
        for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
            Tensor corner = x;
            for (std::size_t j = 0; j < d; ++j) {
                corner[j] += ((mask >> j) & 1) != 0 ? eps : -eps;
            }
            best = std::max(best, single_loss(m, corner, labels[i]));
        }
        const double achieved = single_loss(m, adv, labels[i]);
        CHECK(achieved >= best - 1e-12);
        CHECK(achieved > single_loss(m, x, labels[i]));
    }
}

// ---------------------------------------------------------------------------
// Input diversity and kernel smoothing
// ---------------------------------------------------------------------------

TEST_CASE("input diversity is an identity at probability zero and acts at one") {
    const Tensor images = random_images(3, 12, 5);
    const Tensor same = attacks::dim_transform(images, 0.0, 42, 9, 11);
    CHECK(bitwise_equal(same, images));

    const Tensor moved = attacks::dim_transform(images, 1.0, 42, 9, 11);
    CHECK(moved.shape == images.shape);
    CHECK_FALSE(bitwise_equal(moved, images));
    for (double v : moved.values) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }

    const Tensor again = attacks::dim_transform(images, 1.0, 42, 9, 11);
    CHECK(bitwise_equal(again, moved));
    const Tensor other = attacks::dim_transform(images, 1.0, 43, 9, 11);
    CHECK_FALSE(bitwise_equal(other, moved));

    CHECK_THROWS_AS(attacks::dim_transform(images, 1.5, 42, 9, 11), ConfigError);
    CHECK_THROWS_WITH_AS(attacks::dim_transform(images, 0.5, 42, 13, 12),
                         doctest::Contains("resize bounds"), ConfigError);
    CHECK_THROWS_AS(attacks::dim_transform(Tensor::zeros({12, 12}), 0.5, 42, 9, 11),
                    ConfigError);

    CHECK(attacks::default_dim_resize_low(28) == 23);
    CHECK(attacks::default_dim_resize_low(12) == 10);
}

TEST_CASE("kernel smoothing preserves mass and symmetry on an impulse") {
    Tensor impulse = Tensor::zeros({1, 1, 9, 9});
    impulse.values[4 * 9 + 4] = 1.0;
    const Tensor sm = attacks::tim_smooth(impulse, 5);
    REQUIRE(sm.shape == impulse.shape);

    double mass = 0.0;
    for (double v : sm.values) {
        REQUIRE(v >= 0.0);
        mass += v;
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));

    const auto at = [&](std::size_t r, std::size_t c) { return sm.values[r * 9 + c]; };
    CHECK(at(4, 4) > at(4, 5));
    CHECK(at(4, 5) > at(4, 6));
    CHECK(at(4, 5) == at(4, 3));
    CHECK(at(5, 4) == at(3, 4));
    CHECK(at(5, 5) == at(3, 3));

    // Width one is an identity.
    const Tensor same = attacks::tim_smooth(impulse, 1);
    CHECK(bitwise_equal(same, impulse));

    CHECK_THROWS_WITH_AS(attacks::tim_smooth(impulse, 4), doctest::Contains("odd"), ConfigError);
    CHECK_THROWS_AS(attacks::tim_smooth(Tensor::zeros({9, 9}), 3), ConfigError);

    CHECK(attacks::default_tim_kernel(28) == 7);
    CHECK(attacks::default_tim_kernel(16) == 5);
    CHECK(attacks::default_tim_kernel(12) == 3);
}

// ---------------------------------------------------------------------------
// The constraint contract, determinism, and parallelism
// ---------------------------------------------------------------------------

TEST_CASE("every method respects the budget and the pixel range") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(3);
    const std::vector<int> labels = test_labels(3);

    for (const std::string& method : attacks::known_methods()) {
        for (double eps : {4.0 / 255.0, 16.0 / 255.0}) {
            for (bool gnp : {false, true}) {
                attacks::AttackConfig cfg;
                cfg.epsilon = eps;
                cfg.steps = 5;
                cfg.gnp_enabled = gnp;
                const attacks::AdversarialBatch batch =
                    attacks::craft(method, m, images, labels, cfg);
                CHECK(batch.method == method);
                CHECK(batch.size() == 3);
                CHECK(batch.config.epsilon == eps);
                CHECK(batch.source_misclassified.size() == 3);
                for (std::size_t j = 0; j < batch.perturbed.numel(); ++j) {
                    REQUIRE(std::abs(batch.perturbed[j] - batch.originals[j]) <= eps + 1e-12);
                    REQUIRE(batch.perturbed[j] >= 0.0);
                    REQUIRE(batch.perturbed[j] <= 1.0);
                }
            }
        }
    }
    CHECK_THROWS_WITH_AS(
        attacks::craft("jsma", small_trained_model(), images, labels, attacks::AttackConfig{}),
        doctest::Contains("unknown attack method"), ConfigError);
}

TEST_CASE("attacks are deterministic in the seed and invariant to the worker count") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(6);
    const std::vector<int> labels = test_labels(6);

    attacks::AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.steps = 3;
    cfg.gnp_enabled = true;
    cfg.dim_probability = 0.5;
    cfg.tim_kernel = 3;
    cfg.seed = 3;
    cfg.workers = 1;
    const attacks::AdversarialBatch serial = attacks::mifgsm(m, images, labels, cfg);

    cfg.workers = 3;
    const attacks::AdversarialBatch parallel = attacks::mifgsm(m, images, labels, cfg);
    CHECK(bitwise_equal(serial.perturbed, parallel.perturbed));
    CHECK(serial.source_misclassified == parallel.source_misclassified);

    cfg.workers = 1;
    const attacks::AdversarialBatch repeat = attacks::mifgsm(m, images, labels, cfg);
    CHECK(bitwise_equal(serial.perturbed, repeat.perturbed));

    cfg.seed = 4;  // a different seed draws different diversity transforms
    const attacks::AdversarialBatch reseeded = attacks::mifgsm(m, images, labels, cfg);
    CHECK_FALSE(bitwise_equal(serial.perturbed, reseeded.perturbed));
}

TEST_CASE("the per-iteration trace starts at the clean loss and the attack raises it") {
    const Model& m = small_trained_model();
    const Tensor images = test_images(4);
    const std::vector<int> labels = test_labels(4);

    attacks::AttackConfig cfg;
    cfg.epsilon = 16.0 / 255.0;
    cfg.steps = 6;
    cfg.record_trace = true;
    const attacks::AdversarialBatch batch = attacks::ifgsm(m, images, labels, cfg);
    REQUIRE(batch.trace.mean_loss.size() == 6);
    REQUIRE(batch.trace.mean_grad_norm.size() == 6);

    const PerImageLossGrad clean = per_image_loss_and_grad(m, images, labels);
    double mean_clean = 0.0;
    for (double l : clean.loss) {
        mean_clean += l;
    }
    mean_clean /= static_cast<double>(clean.loss.size());
    CHECK(batch.trace.mean_loss.front() == doctest::Approx(mean_clean).epsilon(1e-12));
    CHECK(batch.trace.mean_loss.back() > batch.trace.mean_loss.front());

    // Without tracing the vectors stay empty.
    cfg.record_trace = false;
    const attacks::AdversarialBatch quiet = attacks::ifgsm(m, images, labels, cfg);
    CHECK(quiet.trace.mean_loss.empty());
}

TEST_CASE("a non-finite gradient stops the attack with a numeric error") {
    Model broken = small_conv_model(5);
    overwrite_params(broken, std::numeric_limits<double>::quiet_NaN());
    attacks::AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.steps = 2;
    CHECK_THROWS_WITH_AS(attacks::ifgsm(broken, test_images(2), test_labels(2), cfg),
                         doctest::Contains("non-finite iterate"), NumericError);
}

TEST_CASE("the success rate is the mean of the per-image flags") {
    attacks::AdversarialBatch batch;
    batch.labels = {0, 1, 2, 3};
    batch.source_misclassified = {1, 0, 1, 1};
    CHECK(batch.source_success_rate() == doctest::Approx(0.75).epsilon(1e-15));
    attacks::AdversarialBatch empty;
    CHECK_THROWS_AS(empty.source_success_rate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

TEST_CASE("adversarial batches survive a save/load round trip") {
    TempDir tmp("batch-io");
    const Model& m = small_trained_model();
    attacks::AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.steps = 3;
    cfg.gnp_enabled = true;
    cfg.gnp_r = 0.02;
    cfg.gnp_beta = 1.2;
    cfg.tim_kernel = 3;
    cfg.seed = 6;
    cfg.record_trace = true;
    const attacks::AdversarialBatch batch =
        attacks::craft("mifgsm", m, test_images(3), test_labels(3), cfg);

    const std::string prefix = tmp.path("batch");
    attacks::save_batch(batch, prefix);
    CHECK(std::filesystem::exists(prefix + ".originals.idx"));
    CHECK(std::filesystem::exists(prefix + ".perturbed.idx"));
    CHECK(std::filesystem::exists(prefix + ".labels.idx"));
    CHECK(std::filesystem::exists(prefix + ".meta.json"));

    const attacks::AdversarialBatch back = attacks::load_batch(prefix);
    CHECK(bitwise_equal(back.originals, batch.originals));
    CHECK(bitwise_equal(back.perturbed, batch.perturbed));
    CHECK(back.labels == batch.labels);
    CHECK(back.method == "mifgsm");
    CHECK(back.source_misclassified == batch.source_misclassified);
    CHECK(back.config.epsilon == batch.config.epsilon);
    CHECK(back.config.steps == batch.config.steps);
    CHECK(back.config.gnp_enabled == batch.config.gnp_enabled);
    CHECK(back.config.gnp_r == batch.config.gnp_r);
    CHECK(back.config.gnp_beta == batch.config.gnp_beta);
    CHECK(back.config.tim_kernel == batch.config.tim_kernel);
    CHECK(back.config.seed == batch.config.seed);
    CHECK(back.trace.mean_loss == batch.trace.mean_loss);
    CHECK(back.trace.mean_grad_norm == batch.trace.mean_grad_norm);
    CHECK(back.trace.fallback_images == batch.trace.fallback_images);

    CHECK_THROWS_AS(attacks::load_batch(tmp.path("nothing")), DataError);
    util::write_binary_file(prefix + ".meta.json", "not json at all");
    CHECK_THROWS_WITH_AS(attacks::load_batch(prefix), doctest::Contains("not valid JSON"),
                         DataError);
}
