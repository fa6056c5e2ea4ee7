#include "advlab/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>

#include "advlab/errors.hpp"
#include "advlab/rng.hpp"

namespace advlab {

namespace {

std::atomic<std::uint64_t> g_gradient_evals{0};

void check_input_batch(const Model& model, const Tensor& images) {
    if (images.rank() != 4) {
        throw ConfigError("forward: expected a 4-d batch (N x C x H x W), got rank " +
                          std::to_string(images.rank()));
    }
    if (images.shape[1] != model.input_shape[0] || images.shape[2] != model.input_shape[1] ||
        images.shape[3] != model.input_shape[2]) {
        throw ConfigError("forward: input shape " + std::to_string(images.shape[1]) + "x" +
                          std::to_string(images.shape[2]) + "x" + std::to_string(images.shape[3]) +
                          " does not match model '" + model.arch_id + "' input " +
                          std::to_string(model.input_shape[0]) + "x" +
                          std::to_string(model.input_shape[1]) + "x" +
                          std::to_string(model.input_shape[2]));
    }
    if (!images.all_finite()) {
        throw NumericError("forward: non-finite value in input batch");
    }
}

Tensor affine_forward(const AffineLayer& layer, const Tensor& in) {
    const std::size_t n_items = in.shape[0];
    const std::size_t d = per_item_size(in);
    Tensor out = Tensor::zeros({n_items, layer.out});
    for (std::size_t n = 0; n < n_items; ++n) {
        const double* x = in.values.data() + n * d;
        double* y = out.values.data() + n * layer.out;
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double* wrow = layer.w.values.data() + o * layer.in;
            double acc = layer.b.values[o];
            for (std::size_t i = 0; i < d; ++i) {
                acc += wrow[i] * x[i];
            }
            y[o] = acc;
        }
    }
    return out;
}

// delta: N x out. Returns dIn shaped like `in`; accumulates into dw/db when given.
Tensor affine_backward(const AffineLayer& layer, const Tensor& in, const Tensor& delta,
                       Tensor* dw, Tensor* db) {
    const std::size_t n_items = in.shape[0];
    const std::size_t d = per_item_size(in);
    Tensor din = Tensor::zeros(in.shape);
    for (std::size_t n = 0; n < n_items; ++n) {
        const double* x = in.values.data() + n * d;
        const double* g = delta.values.data() + n * layer.out;
        double* dx = din.values.data() + n * d;
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double go = g[o];
            const double* wrow = layer.w.values.data() + o * layer.in;
            for (std::size_t i = 0; i < d; ++i) {
                dx[i] += go * wrow[i];
            }
            if (dw) {
                double* dwrow = dw->values.data() + o * layer.in;
                for (std::size_t i = 0; i < d; ++i) {
                    dwrow[i] += go * x[i];
                }
            }
            if (db) {
                db->values[o] += go;
            }
        }
    }
    return din;
}

Tensor conv_forward(const Conv2dLayer& layer, const Tensor& in) {
    const std::size_t n_items = in.shape[0];
    const std::size_t oh_n = layer.out_h(), ow_n = layer.out_w();
    const std::size_t k = layer.kernel;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(layer.pad);
    const std::ptrdiff_t ih_n = static_cast<std::ptrdiff_t>(layer.in_h);
    const std::ptrdiff_t iw_n = static_cast<std::ptrdiff_t>(layer.in_w);
    Tensor out = Tensor::zeros({n_items, layer.out_ch, oh_n, ow_n});
    for (std::size_t n = 0; n < n_items; ++n) {
        for (std::size_t oc = 0; oc < layer.out_ch; ++oc) {
            const double bias = layer.b.values[oc];
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
                for (std::size_t ow = 0; ow < ow_n; ++ow) {
                    double acc = bias;
                    for (std::size_t ic = 0; ic < layer.in_ch; ++ic) {
                        const double* wbase =
                            layer.w.values.data() + ((oc * layer.in_ch + ic) * k) * k;
                        for (std::size_t kh = 0; kh < k; ++kh) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + kh) - pad;
                            if (ih < 0 || ih >= ih_n) continue;
                            for (std::size_t kw = 0; kw < k; ++kw) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(ow + kw) - pad;
                                if (iw < 0 || iw >= iw_n) continue;
                                acc += wbase[kh * k + kw] *
                                       in.at4(n, ic, static_cast<std::size_t>(ih),
                                              static_cast<std::size_t>(iw));
                            }
                        }
                    }
                    out.at4(n, oc, oh, ow) = acc;
                }
            }
        }
    }
    return out;
}

Tensor conv_backward(const Conv2dLayer& layer, const Tensor& in, const Tensor& delta,
                     Tensor* dw, Tensor* db) {
    const std::size_t n_items = in.shape[0];
    const std::size_t oh_n = layer.out_h(), ow_n = layer.out_w();
    const std::size_t k = layer.kernel;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(layer.pad);
    const std::ptrdiff_t ih_n = static_cast<std::ptrdiff_t>(layer.in_h);
    const std::ptrdiff_t iw_n = static_cast<std::ptrdiff_t>(layer.in_w);
    Tensor din = Tensor::zeros(in.shape);
    for (std::size_t n = 0; n < n_items; ++n) {
        for (std::size_t oc = 0; oc < layer.out_ch; ++oc) {
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
                for (std::size_t ow = 0; ow < ow_n; ++ow) {
                    const double g = delta.at4(n, oc, oh, ow);
                    if (db) {
                        db->values[oc] += g;
                    }
                    for (std::size_t ic = 0; ic < layer.in_ch; ++ic) {
                        const double* wbase =
                            layer.w.values.data() + ((oc * layer.in_ch + ic) * k) * k;
                        double* dwbase =
                            dw ? dw->values.data() + ((oc * layer.in_ch + ic) * k) * k : nullptr;
                        for (std::size_t kh = 0; kh < k; ++kh) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + kh) - pad;
                            if (ih < 0 || ih >= ih_n) continue;
                            for (std::size_t kw = 0; kw < k; ++kw) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(ow + kw) - pad;
                                if (iw < 0 || iw >= iw_n) continue;
                                const double x = in.at4(n, ic, static_cast<std::size_t>(ih),
                                                        static_cast<std::size_t>(iw));
                                din.at4(n, ic, static_cast<std::size_t>(ih),
                                        static_cast<std::size_t>(iw)) += g * wbase[kh * k + kw];
                                if (dwbase) {
                                    dwbase[kh * k + kw] += g * x;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return din;
}

Tensor relu_forward(const Tensor& in) {
    Tensor out = in;
    for (double& v : out.values) {
        if (v < 0.0) v = 0.0;
    }
    return out;
}

Tensor relu_backward(const Tensor& in, const Tensor& delta) {
    Tensor din = delta;
    for (std::size_t i = 0; i < din.values.size(); ++i) {
        // subgradient at 0 is 0
        if (!(in.values[i] > 0.0)) {
            din.values[i] = 0.0;
        }
    }
    return din;
}

Tensor pool_forward(const AvgPoolLayer& layer, const Tensor& in) {
    const std::size_t n_items = in.shape[0];
    const std::size_t oh_n = layer.in_h / 2, ow_n = layer.in_w / 2;
    Tensor out = Tensor::zeros({n_items, layer.channels, oh_n, ow_n});
    for (std::size_t n = 0; n < n_items; ++n) {
        for (std::size_t c = 0; c < layer.channels; ++c) {
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
                for (std::size_t ow = 0; ow < ow_n; ++ow) {
                    out.at4(n, c, oh, ow) =
                        0.25 * (in.at4(n, c, 2 * oh, 2 * ow) + in.at4(n, c, 2 * oh, 2 * ow + 1) +
                                in.at4(n, c, 2 * oh + 1, 2 * ow) +
                                in.at4(n, c, 2 * oh + 1, 2 * ow + 1));
                }
            }
        }
    }
    return out;
}

Tensor pool_backward(const AvgPoolLayer& layer, const Tensor& in, const Tensor& delta) {
    const std::size_t n_items = in.shape[0];
    const std::size_t oh_n = layer.in_h / 2, ow_n = layer.in_w / 2;
    Tensor din = Tensor::zeros(in.shape);
    for (std::size_t n = 0; n < n_items; ++n) {
        for (std::size_t c = 0; c < layer.channels; ++c) {
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
                for (std::size_t ow = 0; ow < ow_n; ++ow) {
                    const double g = 0.25 * delta.at4(n, c, oh, ow);
                    din.at4(n, c, 2 * oh, 2 * ow) = g;
                    din.at4(n, c, 2 * oh, 2 * ow + 1) = g;
                    din.at4(n, c, 2 * oh + 1, 2 * ow) = g;
                    din.at4(n, c, 2 * oh + 1, 2 * ow + 1) = g;
                }
            }
        }
    }
    return din;
}

struct ForwardTrace {
    // acts[0] is the input batch; acts[i+1] the output of layer i.
    std::vector<Tensor> acts;
};

Tensor run_forward(const Model& model, const Tensor& images, ForwardTrace* trace) {
    check_input_batch(model, images);
    Tensor cur = images;
    if (trace) {
        trace->acts.clear();
        trace->acts.push_back(cur);
    }
    for (const Layer& layer : model.layers) {
        cur = std::visit(
            [&](const auto& l) -> Tensor {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, AffineLayer>) {
                    return affine_forward(l, cur);
                } else if constexpr (std::is_same_v<T, Conv2dLayer>) {
                    return conv_forward(l, cur);
                } else if constexpr (std::is_same_v<T, ReluLayer>) {
                    return relu_forward(cur);
                } else {
                    return pool_forward(l, cur);
                }
            },
            layer);
        if (trace) {
            trace->acts.push_back(cur);
        }
    }
    if (!cur.all_finite()) {
        throw NumericError("forward: non-finite logits from model '" + model.arch_id + "'");
    }
    return cur;
}

Tensor run_backward(const Model& model, const ForwardTrace& trace, const Tensor& dlogits,
                    ParamGrads* grads) {
    g_gradient_evals.fetch_add(1, std::memory_order_relaxed);
    Tensor delta = dlogits;
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const Tensor& in = trace.acts[li];
        delta = std::visit(
            [&](const auto& l) -> Tensor {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, AffineLayer>) {
                    return affine_backward(l, in, delta, grads ? &grads->w[li] : nullptr,
                                           grads ? &grads->b[li] : nullptr);
                } else if constexpr (std::is_same_v<T, Conv2dLayer>) {
                    return conv_backward(l, in, delta, grads ? &grads->w[li] : nullptr,
                                         grads ? &grads->b[li] : nullptr);
                } else if constexpr (std::is_same_v<T, ReluLayer>) {
                    return relu_backward(in, delta);
                } else {
                    return pool_backward(l, in, delta);
                }
            },
            model.layers[li]);
    }
    return delta;
}

}  // namespace

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& layer : layers) {
        std::visit(
            [&](const auto& l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, AffineLayer> || std::is_same_v<T, Conv2dLayer>) {
                    n += l.w.numel() + l.b.numel();
                }
            },
            layer);
    }
    return n;
}

std::string Model::structure() const {
    std::string s;
    for (const Layer& layer : layers) {
        if (!s.empty()) s += "|";
        std::visit(
            [&](const auto& l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, AffineLayer>) {
                    s += "affine(" + std::to_string(l.out) + ")";
                } else if constexpr (std::is_same_v<T, Conv2dLayer>) {
                    s += "conv(" + std::to_string(l.out_ch) + ",k" + std::to_string(l.kernel) +
                         ",p" + std::to_string(l.pad) + ")";
                } else if constexpr (std::is_same_v<T, ReluLayer>) {
                    s += "relu";
                } else {
                    s += "pool";
                }
            },
            layer);
    }
    return s;
}

Tensor forward(const Model& model, const Tensor& images) {
    return run_forward(model, images, nullptr);
}

std::vector<int> predict(const Model& model, const Tensor& images) {
    const Tensor logits = forward(model, images);
    const std::size_t n_items = logits.shape[0];
    const std::size_t k = logits.shape[1];
    std::vector<int> labels(n_items, 0);
    for (std::size_t n = 0; n < n_items; ++n) {
        const double* row = logits.values.data() + n * k;
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (row[j] > row[best]) {
                best = j;
            }
        }
        labels[n] = static_cast<int>(best);
    }
    return labels;
}

std::vector<double> softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                          Tensor* dlogits) {
    const std::size_t n_items = logits.shape[0];
    const std::size_t k = logits.shape[1];
    if (labels.size() != n_items) {
        throw ConfigError("cross-entropy: " + std::to_string(n_items) + " logit rows but " +
                          std::to_string(labels.size()) + " labels");
    }
    std::vector<double> losses(n_items, 0.0);
    if (dlogits) {
        *dlogits = Tensor::zeros(logits.shape);
    }
    for (std::size_t n = 0; n < n_items; ++n) {
        const int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw ConfigError("cross-entropy: label " + std::to_string(y) + " out of range [0, " +
                              std::to_string(k) + ")");
        }
        const double* z = logits.values.data() + n * k;
        double m = z[0];
        for (std::size_t j = 1; j < k; ++j) {
            m = std::max(m, z[j]);
        }
        double se = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            se += std::exp(z[j] - m);
        }
        losses[n] = (m + std::log(se)) - z[static_cast<std::size_t>(y)];
        if (dlogits) {
            double* d = dlogits->values.data() + n * k;
            for (std::size_t j = 0; j < k; ++j) {
                d[j] = std::exp(z[j] - m) / se;
            }
            d[static_cast<std::size_t>(y)] -= 1.0;
        }
    }
    return losses;
}

LossValueAndGrad loss_and_input_gradient(const Model& model, const Tensor& images,
                                         const std::vector<int>& labels) {
    ForwardTrace trace;
    const Tensor logits = run_forward(model, images, &trace);
    Tensor dlogits;
    const std::vector<double> losses = softmax_cross_entropy(logits, labels, &dlogits);
    const std::size_t n_items = images.shape[0];
    const double scale = n_items > 0 ? 1.0 / static_cast<double>(n_items) : 0.0;
    double total = 0.0;
    for (double l : losses) {
        total += l;
    }
    for (double& v : dlogits.values) {
        v *= scale;
    }
    LossValueAndGrad out;
    out.loss = total * scale;
    out.input_grad = run_backward(model, trace, dlogits, nullptr);
    if (!out.input_grad.all_finite()) {
        throw NumericError("input gradient is non-finite for model '" + model.arch_id + "'");
    }
    return out;
}

PerImageLossGrad per_image_loss_and_grad(const Model& model, const Tensor& images,
                                         const std::vector<int>& labels) {
    ForwardTrace trace;
    const Tensor logits = run_forward(model, images, &trace);
    Tensor dlogits;
    PerImageLossGrad out;
    out.loss = softmax_cross_entropy(logits, labels, &dlogits);
    out.input_grad = run_backward(model, trace, dlogits, nullptr);
    if (!out.input_grad.all_finite()) {
        throw NumericError("input gradient is non-finite for model '" + model.arch_id + "'");
    }
    return out;
}

double check_gradient(const Model& model, const Tensor& images, const std::vector<int>& labels,
                      double fd_step, std::size_t max_coords, std::uint64_t seed) {
    if (!(fd_step > 0.0)) {
        throw ConfigError("check_gradient: fd_step must be > 0");
    }
    const LossValueAndGrad analytic = loss_and_input_gradient(model, images, labels);
    const std::size_t total = images.numel();
    std::vector<std::size_t> coords;
    if (total <= max_coords) {
        for (std::size_t i = 0; i < total; ++i) {
            coords.push_back(i);
        }
    } else {
        rng::Stream stream(rng::derive(seed, "gradcheck"));
        std::vector<std::size_t> all(total);
        for (std::size_t i = 0; i < total; ++i) {
            all[i] = i;
        }
        stream.shuffle(all);
        coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(max_coords));
    }
    const std::size_t n_items = images.shape[0];
    const double scale = 1.0 / static_cast<double>(n_items);
    auto mean_loss = [&](const Tensor& x) {
        const Tensor logits = run_forward(model, x, nullptr);
        const std::vector<double> losses = softmax_cross_entropy(logits, labels, nullptr);
        double total_loss = 0.0;
        for (double l : losses) {
            total_loss += l;
        }
        return total_loss * scale;
    };
    double max_rel = 0.0;
    Tensor probe = images;
    for (std::size_t c : coords) {
        const double orig = probe.values[c];
        probe.values[c] = orig + fd_step;
        const double lp = mean_loss(probe);
        probe.values[c] = orig - fd_step;
        const double lm = mean_loss(probe);
        probe.values[c] = orig;
        const double fd = (lp - lm) / (2.0 * fd_step);
        const double a = analytic.input_grad.values[c];
        const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-6});
        max_rel = std::max(max_rel, std::fabs(a - fd) / denom);
    }
    return max_rel;
}

double loss_and_param_grads(const Model& model, const Tensor& images,
                            const std::vector<int>& labels, ParamGrads& grads) {
    grads.w.assign(model.layers.size(), Tensor{});
    grads.b.assign(model.layers.size(), Tensor{});
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        std::visit(
            [&](const auto& l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, AffineLayer> || std::is_same_v<T, Conv2dLayer>) {
                    grads.w[li] = Tensor::zeros(l.w.shape);
                    grads.b[li] = Tensor::zeros(l.b.shape);
                }
            },
            model.layers[li]);
    }
    ForwardTrace trace;
    const Tensor logits = run_forward(model, images, &trace);
    Tensor dlogits;
    const std::vector<double> losses = softmax_cross_entropy(logits, labels, &dlogits);
    const double scale = 1.0 / static_cast<double>(images.shape[0]);
    for (double& v : dlogits.values) {
        v *= scale;
    }
    run_backward(model, trace, dlogits, &grads);
    double total = 0.0;
    for (double l : losses) {
        total += l;
    }
    return total * scale;
}

std::uint64_t gradient_eval_count() { return g_gradient_evals.load(std::memory_order_relaxed); }

void reset_gradient_eval_count() { g_gradient_evals.store(0, std::memory_order_relaxed); }

}  // namespace advlab
