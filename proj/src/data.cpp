#include "advlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "advlab/errors.hpp"
#include "advlab/rng.hpp"
#include "advlab/util.hpp"

namespace advlab::data {

namespace {

constexpr std::uint32_t kMagicUbyteImages = 0x00000803;
constexpr std::uint32_t kMagicUbyteLabels = 0x00000801;
constexpr std::uint32_t kMagicDouble4d = 0x00000E04;

std::uint32_t read_be_u32(const std::string& buf, std::size_t offset, const std::string& path) {
    if (offset + 4 > buf.size()) {
        throw DataError(path + ": truncated header at offset " + std::to_string(offset));
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v = (v << 8) | static_cast<unsigned char>(buf[offset + static_cast<std::size_t>(i)]);
    }
    return v;
}

void append_be_u32(std::string& buf, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

std::string hex_magic(std::uint32_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s = "0x";
    for (int i = 7; i >= 0; --i) {
        s += digits[(v >> (4 * i)) & 0xf];
    }
    return s;
}

// 3x3 box blur with clamped borders; in-place via temp.
void box_blur(std::vector<double>& img, std::size_t h, std::size_t w) {
    std::vector<double> out(img.size(), 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            int count = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx < 0 ||
                        xx >= static_cast<std::ptrdiff_t>(w)) {
                        continue;
                    }
                    acc += img[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
                    ++count;
                }
            }
            out[y * w + x] = acc / count;
        }
    }
    img = std::move(out);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const std::string ibuf = util::read_binary_file(images_path);
    const std::uint32_t imagic = read_be_u32(ibuf, 0, images_path);
    if (imagic != kMagicUbyteImages) {
        throw DataError(images_path + ": bad magic " + hex_magic(imagic) + " at offset 0 (expected " +
                        hex_magic(kMagicUbyteImages) + ")");
    }
    const std::size_t n = read_be_u32(ibuf, 4, images_path);
    const std::size_t h = read_be_u32(ibuf, 8, images_path);
    const std::size_t w = read_be_u32(ibuf, 12, images_path);
    const std::size_t pixel_bytes = n * h * w;
    if (ibuf.size() < 16 + pixel_bytes) {
        throw DataError(images_path + ": truncated pixel data at offset " +
                        std::to_string(ibuf.size()) + " (expected " +
                        std::to_string(16 + pixel_bytes) + " bytes)");
    }

    const std::string lbuf = util::read_binary_file(labels_path);
    const std::uint32_t lmagic = read_be_u32(lbuf, 0, labels_path);
    if (lmagic != kMagicUbyteLabels) {
        throw DataError(labels_path + ": bad magic " + hex_magic(lmagic) + " at offset 0 (expected " +
                        hex_magic(kMagicUbyteLabels) + ")");
    }
    const std::size_t ln = read_be_u32(lbuf, 4, labels_path);
    if (ln != n) {
        throw DataError(labels_path + ": label count " + std::to_string(ln) + " at offset 4 does not match " +
                        std::to_string(n) + " images in " + images_path);
    }
    if (lbuf.size() < 8 + n) {
        throw DataError(labels_path + ": truncated label data at offset " +
                        std::to_string(lbuf.size()) + " (expected " + std::to_string(8 + n) +
                        " bytes)");
    }

    Dataset ds;
    ds.images = Tensor::zeros({n, 1, h, w});
    for (std::size_t i = 0; i < pixel_bytes; ++i) {
        ds.images.values[i] = static_cast<unsigned char>(ibuf[16 + i]) / 255.0;
    }
    ds.labels.resize(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = static_cast<unsigned char>(lbuf[8 + i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    ds.source = images_path;
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    if (ds.images.rank() != 4 || ds.images.shape[1] != 1) {
        throw DataError("save_idx: dataset images must be N x 1 x H x W");
    }
    const std::size_t n = ds.images.shape[0];
    const std::size_t h = ds.images.shape[2];
    const std::size_t w = ds.images.shape[3];
    std::string ibuf;
    ibuf.reserve(16 + n * h * w);
    append_be_u32(ibuf, kMagicUbyteImages);
    append_be_u32(ibuf, static_cast<std::uint32_t>(n));
    append_be_u32(ibuf, static_cast<std::uint32_t>(h));
    append_be_u32(ibuf, static_cast<std::uint32_t>(w));
    for (double v : ds.images.values) {
        const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
        ibuf.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
    util::write_binary_file(images_path, ibuf);

    std::string lbuf;
    lbuf.reserve(8 + n);
    append_be_u32(lbuf, kMagicUbyteLabels);
    append_be_u32(lbuf, static_cast<std::uint32_t>(n));
    for (int label : ds.labels) {
        if (label < 0 || label > 255) {
            throw DataError("save_idx: label " + std::to_string(label) + " does not fit in a byte");
        }
        lbuf.push_back(static_cast<char>(static_cast<unsigned char>(label)));
    }
    util::write_binary_file(labels_path, lbuf);
}

void write_idx_double(const Tensor& t, const std::string& path) {
    if (t.rank() != 4) {
        throw DataError("write_idx_double: expected a 4-d tensor");
    }
    std::string buf;
    buf.reserve(20 + t.numel() * 8);
    append_be_u32(buf, kMagicDouble4d);
    for (std::size_t d = 0; d < 4; ++d) {
        append_be_u32(buf, static_cast<std::uint32_t>(t.shape[d]));
    }
    for (double v : t.values) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int i = 7; i >= 0; --i) {
            buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
        }
    }
    util::write_binary_file(path, buf);
}

Tensor read_idx_double(const std::string& path) {
    const std::string buf = util::read_binary_file(path);
    const std::uint32_t magic = read_be_u32(buf, 0, path);
    if (magic != kMagicDouble4d) {
        throw DataError(path + ": bad magic " + hex_magic(magic) + " at offset 0 (expected " +
                        hex_magic(kMagicDouble4d) + ")");
    }
    std::vector<std::size_t> shape(4);
    for (std::size_t d = 0; d < 4; ++d) {
        shape[d] = read_be_u32(buf, 4 + 4 * d, path);
    }
    const std::size_t count = shape[0] * shape[1] * shape[2] * shape[3];
    if (buf.size() < 20 + count * 8) {
        throw DataError(path + ": truncated at offset " + std::to_string(buf.size()) +
                        " (expected " + std::to_string(20 + count * 8) + " bytes)");
    }
    std::vector<double> values(count, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits = (bits << 8) |
                   static_cast<unsigned char>(buf[20 + i * 8 + static_cast<std::size_t>(b)]);
        }
        std::memcpy(&values[i], &bits, sizeof(double));
    }
    return Tensor(std::move(shape), std::move(values));
}

void write_idx_labels(const std::vector<int>& labels, const std::string& path) {
    std::string buf;
    append_be_u32(buf, kMagicUbyteLabels);
    append_be_u32(buf, static_cast<std::uint32_t>(labels.size()));
    for (int label : labels) {
        buf.push_back(static_cast<char>(static_cast<unsigned char>(label)));
    }
    util::write_binary_file(path, buf);
}

std::vector<int> read_idx_labels(const std::string& path) {
    const std::string buf = util::read_binary_file(path);
    const std::uint32_t magic = read_be_u32(buf, 0, path);
    if (magic != kMagicUbyteLabels) {
        throw DataError(path + ": bad magic " + hex_magic(magic) + " at offset 0");
    }
    const std::size_t n = read_be_u32(buf, 4, path);
    if (buf.size() < 8 + n) {
        throw DataError(path + ": truncated label data");
    }
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<unsigned char>(buf[8 + i]);
    }
    return labels;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t n, const SynthParams& params,
                      const std::string& split) {
    if (params.classes < 2) {
        throw ConfigError("synth_dataset: need at least 2 classes");
    }
    const std::size_t s = params.image_size;
    const std::size_t pixels = s * s;
    if (params.subspace < 2 || params.subspace >= pixels) {
        throw ConfigError("synth_dataset: subspace dimension must lie in [2, " +
                          std::to_string(pixels - 1) + "], got " +
                          std::to_string(params.subspace));
    }
    if (params.separation <= 0.0 || params.noise < 0.0 || params.nuisance < 0.0 ||
        params.texture < 0.0 || params.jitter < 0.0) {
        throw ConfigError("synth_dataset: separation must be positive and "
                          "texture/jitter/noise/nuisance non-negative");
    }

    const auto zero_mean = [pixels](std::vector<double>& f) {
        double mean = 0.0;
        for (double v : f) {
            mean += v;
        }
        mean /= static_cast<double>(pixels);
        for (double& v : f) {
            v -= mean;
        }
    };
    const auto project_out = [pixels](std::vector<double>& f, const std::vector<double>& u) {
        double dot = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) {
            dot += f[p] * u[p];
        }
        for (std::size_t p = 0; p < pixels; ++p) {
            f[p] -= dot * u[p];
        }
    };
    const auto l2_norm = [](const std::vector<double>& f) {
        double sum = 0.0;
        for (double v : f) {
            sum += v * v;
        }
        return std::sqrt(sum);
    };

    // Orthonormal smooth basis of the data manifold, deterministic in
    // (seed, index) only.
    std::vector<std::vector<double>> basis(params.subspace);
    for (std::size_t j = 0; j < params.subspace; ++j) {
        rng::Stream stream(rng::derive(seed, "basis", j));
        std::vector<double> b(pixels, 0.0);
        for (double& v : b) {
            v = stream.uniform();
        }
        for (std::size_t pass = 0; pass < params.blur_passes; ++pass) {
            box_blur(b, s, s);
        }
        zero_mean(b);
        for (std::size_t k = 0; k < j; ++k) {
            project_out(b, basis[k]);
        }
        const double norm = l2_norm(b);
        if (norm < 1e-9) {
            throw NumericError("synth_dataset: degenerate basis field " + std::to_string(j) +
                               " (smooth fields are not independent; lower blur_passes or "
                               "subspace)");
        }
        for (double& v : b) {
            v /= norm;
        }
        basis[j] = std::move(b);
    }

    // Cluster centers: uniform in a subspace ball, rejected until every
    // pair is at least `separation` apart.
    const std::size_t n_centers = params.classes * params.modes_per_class;
    const double ball_radius = 1.6 * params.separation;
    std::vector<std::vector<double>> coefs;  // center coordinates in the basis
    {
        rng::Stream stream(rng::derive(seed, "centers"));
        std::size_t attempts = 0;
        while (coefs.size() < n_centers) {
            if (++attempts > 10000) {
                throw ConfigError("synth_dataset: could not place " + std::to_string(n_centers) +
                                  " cluster centers at separation " +
                                  std::to_string(params.separation) +
                                  "; lower separation or modes_per_class");
            }
            std::vector<double> c(params.subspace);
            double norm_sq = 0.0;
            for (double& v : c) {
                v = stream.normal();
                norm_sq += v * v;
            }
            const double norm = std::sqrt(norm_sq);
            if (norm < 1e-9) {
                continue;
            }
            const double radius =
                ball_radius * std::pow(stream.uniform(),
                                       1.0 / static_cast<double>(params.subspace));
            for (double& v : c) {
                v *= radius / norm;
            }
            bool ok = true;
            for (const std::vector<double>& other : coefs) {
                double dist_sq = 0.0;
                for (std::size_t j = 0; j < params.subspace; ++j) {
                    const double d = c[j] - other[j];
                    dist_sq += d * d;
                }
                if (dist_sq < params.separation * params.separation) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                coefs.push_back(std::move(c));
            }
        }
    }
    std::vector<std::vector<double>> centers(n_centers, std::vector<double>(pixels, 0.0));
    for (std::size_t k = 0; k < n_centers; ++k) {
        for (std::size_t j = 0; j < params.subspace; ++j) {
            const double coef = coefs[k][j];
            const std::vector<double>& b = basis[j];
            for (std::size_t p = 0; p < pixels; ++p) {
                centers[k][p] += coef * b[p];
            }
        }
    }

    // One high-frequency texture pattern per cluster, orthonormal to the
    // smooth basis and to each other. They enter samples noise-free, so
    // they are perfectly predictive despite their tiny amplitude.
    std::vector<std::vector<double>> textures;
    if (params.texture > 0.0) {
        if (params.subspace + n_centers >= pixels) {
            throw ConfigError("synth_dataset: subspace + classes*modes_per_class texture "
                              "patterns need fewer than " + std::to_string(pixels) +
                              " total dimensions; shrink one of them or raise image_size");
        }
        textures.resize(n_centers);
        for (std::size_t k = 0; k < n_centers; ++k) {
            rng::Stream stream(rng::derive(seed, "texture", k));
            std::vector<double> t(pixels, 0.0);
            for (double& v : t) {
                v = stream.uniform(-1.0, 1.0);
            }
            zero_mean(t);
            for (const std::vector<double>& u : basis) {
                project_out(t, u);
            }
            for (std::size_t j = 0; j < k; ++j) {
                project_out(t, textures[j]);
            }
            const double norm = l2_norm(t);
            if (norm < 1e-9) {
                throw NumericError("synth_dataset: degenerate texture pattern " +
                                   std::to_string(k) + " (patterns are not independent)");
            }
            for (double& v : t) {
                v /= norm;
            }
            textures[k] = std::move(t);
        }
    }

    Dataset ds;
    ds.images = Tensor::zeros({n, 1, s, s});
    ds.labels.resize(n);
    ds.num_classes = params.classes;
    ds.split = split;
    ds.source = "synth(seed=" + std::to_string(seed) + ",n=" + std::to_string(n) + ",k=" +
                std::to_string(params.classes) + ",s=" + std::to_string(s) + ",split=" + split + ")";
    std::vector<double> nuisance(pixels, 0.0);
    std::vector<double> jitter(pixels, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % params.classes;
        rng::Stream stream(rng::derive(rng::derive(seed, split), "image", i));
        const std::size_t m = stream.index(params.modes_per_class);
        const std::size_t k = c * params.modes_per_class + m;
        const std::vector<double>& t = centers[k];

        // Per-image coefficient noise inside the smooth subspace: moves the
        // sample along the manifold, leaving the texture channel untouched.
        std::fill(jitter.begin(), jitter.end(), 0.0);
        if (params.jitter > 0.0) {
            for (std::size_t j = 0; j < params.subspace; ++j) {
                const double coef = stream.uniform(-params.jitter, params.jitter);
                const std::vector<double>& b = basis[j];
                for (std::size_t p = 0; p < pixels; ++p) {
                    jitter[p] += coef * b[p];
                }
            }
        }

        // Per-image smooth nuisance field, orthogonal to both label channels.
        std::fill(nuisance.begin(), nuisance.end(), 0.0);
        if (params.nuisance > 0.0) {
            for (double& v : nuisance) {
                v = stream.uniform();
            }
            for (std::size_t pass = 0; pass < params.blur_passes; ++pass) {
                box_blur(nuisance, s, s);
            }
            zero_mean(nuisance);
            for (const std::vector<double>& u : basis) {
                project_out(nuisance, u);
            }
            for (const std::vector<double>& u : textures) {
                project_out(nuisance, u);
            }
            const double norm = l2_norm(nuisance);
            if (norm >= 1e-9) {
                for (double& v : nuisance) {
                    v *= params.nuisance / norm;
                }
            }
        }

        const double* tex = textures.empty() ? nullptr : textures[k].data();
        double* img = ds.images.values.data() + i * pixels;
        for (std::size_t p = 0; p < pixels; ++p) {
            double v = 0.5 + t[p] + jitter[p] + nuisance[p] +
                       stream.uniform(-params.noise, params.noise);
            if (tex != nullptr) {
                v += params.texture * tex[p];
            }
            img[p] = std::clamp(v, 0.0, 1.0);
        }
        ds.labels[i] = static_cast<int>(c);
    }
    return ds;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes,
                      std::size_t image_size) {
    SynthParams params;
    params.classes = classes;
    params.image_size = image_size;
    return synth_dataset(seed, n, params, "train");
}

std::string synth_cache_key(std::uint64_t seed, std::size_t n, const SynthParams& params) {
    std::string desc = "synth|" + std::to_string(seed) + "|" + std::to_string(n) + "|" +
                       std::to_string(params.classes) + "|" + std::to_string(params.image_size) +
                       "|" + std::to_string(params.modes_per_class) + "|" +
                       std::to_string(params.blur_passes) + "|" + std::to_string(params.subspace) +
                       "|" + std::to_string(params.separation) + "|" +
                       std::to_string(params.texture) + "|" + std::to_string(params.jitter) +
                       "|" + std::to_string(params.nuisance) + "|" + std::to_string(params.noise);
    return util::to_hex(util::fnv1a64(desc));
}

Dataset select_correctly_classified(const std::vector<const Model*>& models, const Dataset& ds,
                                    std::size_t n, std::uint64_t seed) {
    std::vector<std::uint8_t> ok(ds.size(), 1);
    // Predict in chunks to bound peak memory on big datasets.
    const std::size_t chunk = 512;
    for (const Model* model : models) {
        for (std::size_t lo = 0; lo < ds.size(); lo += chunk) {
            const std::size_t hi = std::min(ds.size(), lo + chunk);
            Tensor batch = Tensor::zeros({hi - lo, ds.images.shape[1], ds.images.shape[2],
                                          ds.images.shape[3]});
            const std::size_t item = per_item_size(ds.images);
            std::copy(ds.images.values.begin() + static_cast<std::ptrdiff_t>(lo * item),
                      ds.images.values.begin() + static_cast<std::ptrdiff_t>(hi * item),
                      batch.values.begin());
            const std::vector<int> pred = predict(*model, batch);
            for (std::size_t i = lo; i < hi; ++i) {
                if (pred[i - lo] != ds.labels[i]) {
                    ok[i] = 0;
                }
            }
        }
    }
    std::vector<std::size_t> qualified;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ok[i]) {
            qualified.push_back(i);
        }
    }
    if (qualified.size() < n) {
        throw CapacityError("select_correctly_classified: requested " + std::to_string(n) +
                                " samples but only " + std::to_string(qualified.size()) +
                                " are correctly classified by all " +
                                std::to_string(models.size()) + " models",
                            qualified.size());
    }
    rng::Stream stream(rng::derive(seed, "select"));
    stream.shuffle(qualified);
    qualified.resize(n);
    std::sort(qualified.begin(), qualified.end());

    Dataset out;
    out.images = Tensor::zeros({n, ds.images.shape[1], ds.images.shape[2], ds.images.shape[3]});
    out.labels.resize(n);
    out.num_classes = ds.num_classes;
    out.split = ds.split;
    out.source = ds.source + "+select(n=" + std::to_string(n) + ",seed=" + std::to_string(seed) + ")";
    const std::size_t item = per_item_size(ds.images);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = qualified[i];
        std::copy(ds.images.values.begin() + static_cast<std::ptrdiff_t>(src * item),
                  ds.images.values.begin() + static_cast<std::ptrdiff_t>((src + 1) * item),
                  out.images.values.begin() + static_cast<std::ptrdiff_t>(i * item));
        out.labels[i] = ds.labels[src];
    }
    return out;
}

}  // namespace advlab::data
