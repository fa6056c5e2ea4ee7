#include "advlab/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "advlab/attacks.hpp"
#include "advlab/config.hpp"
#include "advlab/data.hpp"
#include "advlab/errors.hpp"
#include "advlab/harness.hpp"
#include "advlab/landscape.hpp"
#include "advlab/manifest.hpp"
#include "advlab/rng.hpp"
#include "advlab/util.hpp"
#include "advlab/zoo.hpp"

namespace advlab::commands {

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out) {
        if (c == '.' || c == '/' || c == ' ') {
            c = 'p';
        }
    }
    return out;
}

struct PreparedData {
    data::Dataset train;
    data::Dataset test;
    std::map<std::string, std::string> input_hashes;
};

PreparedData prepare_data(const config::Config& cfg, std::uint64_t root) {
    PreparedData out;
    const std::string kind = cfg.get("data", "kind", "synth");
    if (kind == "synth") {
        data::SynthParams p;
        p.classes = cfg.get_size("data", "classes", p.classes);
        p.image_size = cfg.get_size("data", "image_size", p.image_size);
        p.modes_per_class = cfg.get_size("data", "modes_per_class", p.modes_per_class);
        p.blur_passes = cfg.get_size("data", "blur_passes", p.blur_passes);
        p.subspace = cfg.get_size("data", "subspace", p.subspace);
        p.separation = cfg.get_double("data", "separation", p.separation);
        p.texture = cfg.get_double("data", "texture", p.texture);
        p.jitter = cfg.get_double("data", "jitter", p.jitter);
        p.nuisance = cfg.get_double("data", "nuisance", p.nuisance);
        p.noise = cfg.get_double("data", "noise", p.noise);
        const std::size_t train_n = cfg.get_size("data", "train_n", 2048);
        const std::size_t test_n = cfg.get_size("data", "test_n", 512);
        const std::uint64_t dseed = rng::derive(root, "data");
        out.train = data::synth_dataset(dseed, train_n, p, "train");
        out.test = data::synth_dataset(dseed, test_n, p, "test");
        out.input_hashes["synth"] = data::synth_cache_key(dseed, train_n, p);
        return out;
    }
    if (kind == "idx") {
        for (const char* key : {"images", "labels", "test_images", "test_labels"}) {
            if (!cfg.has("data", key)) {
                throw ConfigError(
                    "[data] kind=idx needs images, labels, test_images and test_labels paths "
                    "(or set kind=synth to generate data)");
            }
        }
        const std::string images = cfg.require("data", "images");
        const std::string labels = cfg.require("data", "labels");
        const std::string test_images = cfg.require("data", "test_images");
        const std::string test_labels = cfg.require("data", "test_labels");
        out.train = data::load_idx(images, labels);
        out.train.split = "train";
        out.test = data::load_idx(test_images, test_labels);
        out.test.split = "test";
        for (const std::string& path : {images, labels, test_images, test_labels}) {
            out.input_hashes[path] = util::to_hex(util::file_hash(path));
        }
        return out;
    }
    throw ConfigError("[data] kind must be 'synth' or 'idx', got '" + kind + "'");
}

std::string model_path(const std::string& out_dir, const std::string& id) {
    return out_dir + "/models/" + id + ".bin";
}

std::vector<std::string> zoo_member_ids(const config::Config& cfg) {
    std::vector<std::string> ids = cfg.get_list("zoo", "members");
    if (ids.empty()) {
        ids = zoo::known_arch_ids();
    }
    return ids;
}

struct LoadedZoo {
    std::vector<std::string> ids;
    std::vector<Model> models;
    std::size_t source_index = 0;
};

std::size_t find_source_index(const std::vector<std::string>& ids, const config::Config& cfg) {
    const std::string source = cfg.get("zoo", "source", zoo::default_source_id());
    const auto it = std::find(ids.begin(), ids.end(), source);
    if (it == ids.end()) {
        std::string known;
        for (const std::string& id : ids) {
            known += known.empty() ? id : ", " + id;
        }
        throw ConfigError("unknown model id '" + source + "' (known: " + known + ")");
    }
    return static_cast<std::size_t>(it - ids.begin());
}

Model load_member(const std::string& out_dir, const std::string& id) {
    const std::string path = model_path(out_dir, id);
    if (!util::file_exists(path)) {
        throw DataError("model file '" + path + "' not found; run the train command first");
    }
    return zoo::load_model(path);
}

LoadedZoo load_zoo(const config::Config& cfg, const std::string& out_dir) {
    LoadedZoo zoo;
    zoo.ids = zoo_member_ids(cfg);
    zoo.source_index = find_source_index(zoo.ids, cfg);
    for (const std::string& id : zoo.ids) {
        zoo.models.push_back(load_member(out_dir, id));
    }
    return zoo;
}

struct MethodConfig {
    std::string method;
    attacks::AttackConfig config;
};

MethodConfig attack_config(const config::Config& cfg, const std::string& id) {
    const std::string section = "attack " + id;
    if (cfg.sections.count(section) == 0) {
        std::string known;
        for (const auto& [name, entries] : cfg.sections) {
            if (name.rfind("attack ", 0) == 0) {
                const std::string sid = name.substr(7);
                known += known.empty() ? sid : ", " + sid;
            }
        }
        throw ConfigError("no [" + section + "] section in the config (defined attacks: " +
                          known + ")");
    }
    MethodConfig mc;
    mc.method = cfg.require(section, "method");
    if (std::find(attacks::known_methods().begin(), attacks::known_methods().end(), mc.method) ==
        attacks::known_methods().end()) {
        std::string known;
        for (const std::string& m : attacks::known_methods()) {
            known += known.empty() ? m : ", " + m;
        }
        throw ConfigError("[" + section + "] method '" + mc.method + "' is unknown (known: " +
                          known + ")");
    }
    attacks::AttackConfig& a = mc.config;
    a.epsilon = cfg.get_double(section, "epsilon", a.epsilon);
    a.steps = cfg.get_size(section, "steps", a.steps);
    if (cfg.has(section, "step_size")) {
        a.step_size = cfg.get_double(section, "step_size", 0.0);
    }
    a.momentum_decay = cfg.get_double(section, "momentum_decay", a.momentum_decay);
    a.gnp_enabled = cfg.get_bool(section, "gnp", false);
    if (!cfg.has(section, "gnp") &&
        (cfg.has(section, "gnp_r") || cfg.has(section, "gnp_beta"))) {
        throw ConfigError("[" + section + "] sets gnp_r/gnp_beta without gnp = true; " +
                          "add gnp = true to enable the penalty or remove the unused keys");
    }
    a.gnp_r = cfg.get_double(section, "gnp_r", a.gnp_r);
    a.gnp_beta = cfg.get_double(section, "gnp_beta", a.gnp_beta);
    a.dim_probability = cfg.get_double(section, "dim", 0.0);
    a.tim_kernel = cfg.get_size(section, "tim_kernel", 0);
    a.record_trace = cfg.get_bool(section, "trace", false);
    return mc;
}

void cmd_train(const config::Config& cfg, std::uint64_t seed, const std::string& out_dir,
               manifest::RunManifest& m) {
    PreparedData d = prepare_data(cfg, seed);
    m.input_hashes.insert(d.input_hashes.begin(), d.input_hashes.end());
    util::make_dirs(out_dir + "/models");

    const std::array<std::size_t, 3> input{d.train.images.dim(1), d.train.images.dim(2),
                                           d.train.images.dim(3)};
    const std::size_t classes = d.train.num_classes;

    zoo::TrainConfig tc;
    tc.epochs = cfg.get_size("train", "epochs", tc.epochs);
    tc.batch_size = cfg.get_size("train", "batch_size", tc.batch_size);
    tc.learning_rate = cfg.get_double("train", "learning_rate", tc.learning_rate);
    tc.momentum = cfg.get_double("train", "momentum", tc.momentum);

    for (const std::string& id : zoo_member_ids(cfg)) {
        const zoo::ArchSpec arch = zoo::arch_by_id(id, input, classes);
        const Model init = zoo::build(arch, rng::derive(seed, "init:" + id));
        tc.seed = rng::derive(seed, "train:" + id);
        const zoo::TrainResult result = zoo::train(init, d.train, d.test, tc);
        const std::string path = model_path(out_dir, id);
        zoo::save_model(result.model, path);
        m.outputs.push_back(path);
        m.outputs.push_back(path + ".meta.json");
        std::cout << "trained " << id << ": train acc "
                  << fmt_short(result.train_accuracy.back()) << ", test acc "
                  << fmt_short(result.final_test_accuracy) << " ("
                  << result.model.parameter_count() << " parameters)\n";
    }
}

void cmd_attack(const config::Config& cfg, std::uint64_t seed, unsigned workers,
                const std::string& out_dir, const Options& opts, manifest::RunManifest& m) {
    PreparedData d = prepare_data(cfg, seed);
    m.input_hashes.insert(d.input_hashes.begin(), d.input_hashes.end());

    const std::vector<std::string> ids = zoo_member_ids(cfg);
    const std::size_t source_index = find_source_index(ids, cfg);
    const Model source = load_member(out_dir, ids[source_index]);

    std::string id = opts.attack.value_or("");
    if (id.empty()) {
        const std::vector<std::string> listed = cfg.get_list("eval", "attacks");
        id = listed.empty() ? "ifgsm" : listed.front();
    }
    MethodConfig mc = attack_config(cfg, id);
    mc.config.seed = rng::derive(seed, "attack:" + id);
    mc.config.workers = workers;

    const std::size_t n = cfg.get_size("eval", "samples", 500);
    const data::Dataset samples = data::select_correctly_classified(
        {&source}, d.test, n, rng::derive(seed, "select"));

    const attacks::AdversarialBatch batch =
        attacks::craft(mc.method, source, samples.images, samples.labels, mc.config);

    util::make_dirs(out_dir + "/batches");
    const std::string prefix =
        out_dir + "/batches/" + sanitize(id) + "-eps" + sanitize(fmt_short(mc.config.epsilon));
    attacks::save_batch(batch, prefix);
    for (const char* suffix : {".originals.idx", ".perturbed.idx", ".labels.idx", ".meta.json"}) {
        m.outputs.push_back(prefix + suffix);
    }
    std::cout << "attack " << id << " on " << ids[source_index] << ": source ASR "
              << fmt_short(batch.source_success_rate()) << " over " << batch.size()
              << " samples\n"
              << "batch: " << prefix << ".*\n";
}

void cmd_eval(const config::Config& cfg, std::uint64_t seed, unsigned workers,
              const std::string& out_dir, manifest::RunManifest& m) {
    PreparedData d = prepare_data(cfg, seed);
    m.input_hashes.insert(d.input_hashes.begin(), d.input_hashes.end());
    const LoadedZoo zoo = load_zoo(cfg, out_dir);

    std::vector<const Model*> all;
    for (const Model& model : zoo.models) {
        all.push_back(&model);
    }
    const std::size_t n = cfg.get_size("eval", "samples", 500);
    const data::Dataset samples =
        data::select_correctly_classified(all, d.test, n, rng::derive(seed, "select"));

    const std::vector<std::string> attack_ids = cfg.get_list("eval", "attacks");
    if (attack_ids.empty()) {
        throw ConfigError("[eval] attacks must list at least one attack id");
    }
    const std::vector<double> epsilons = cfg.get_double_list("eval", "epsilons");
    if (epsilons.empty()) {
        throw ConfigError("[eval] epsilons must list at least one value");
    }

    std::vector<harness::NamedAttack> attack_list;
    for (const std::string& id : attack_ids) {
        const MethodConfig mc = attack_config(cfg, id);
        for (double eps : epsilons) {
            harness::NamedAttack named;
            named.id = id;
            named.method = mc.method;
            named.config = mc.config;
            named.config.epsilon = eps;
            attack_list.push_back(std::move(named));
        }
    }

    harness::NamedModel source{zoo.ids[zoo.source_index], &zoo.models[zoo.source_index]};
    std::vector<harness::NamedModel> targets;
    for (std::size_t i = 0; i < zoo.ids.size(); ++i) {
        if (i != zoo.source_index) {
            targets.push_back({zoo.ids[i], &zoo.models[i]});
        }
    }

    const harness::TransferReport report =
        harness::evaluate_transfer(source, targets, attack_list, samples, seed, workers);

    const std::string json_text = harness::report_json(report).dump(2) + "\n";
    const std::string json_path =
        harness::write_content_addressed(out_dir + "/reports", "transfer", ".json", json_text);
    const std::string csv_path = harness::write_content_addressed(
        out_dir + "/reports", "transfer", ".csv", harness::transfer_csv(report));
    m.outputs.push_back(json_path);
    m.outputs.push_back(csv_path);

    std::cout << harness::render_report(harness::report_json(report));
    std::cout << "report: " << json_path << "\n";
}

void cmd_ablate(const config::Config& cfg, std::uint64_t seed, unsigned workers,
                const std::string& out_dir, manifest::RunManifest& m) {
    PreparedData d = prepare_data(cfg, seed);
    m.input_hashes.insert(d.input_hashes.begin(), d.input_hashes.end());
    const LoadedZoo zoo = load_zoo(cfg, out_dir);

    std::vector<const Model*> all;
    for (const Model& model : zoo.models) {
        all.push_back(&model);
    }
    const std::size_t n = cfg.get_size("ablate", "samples", 200);
    const data::Dataset samples =
        data::select_correctly_classified(all, d.test, n, rng::derive(seed, "select"));

    const std::string method = cfg.get("ablate", "method", "ifgsm");
    attacks::AttackConfig base;
    base.epsilon = cfg.get_double("ablate", "epsilon", 8.0 / 255.0);
    base.steps = cfg.get_size("ablate", "steps", 20);

    harness::NamedModel source{zoo.ids[zoo.source_index], &zoo.models[zoo.source_index]};
    std::vector<harness::NamedModel> targets;
    for (std::size_t i = 0; i < zoo.ids.size(); ++i) {
        if (i != zoo.source_index) {
            targets.push_back({zoo.ids[i], &zoo.models[i]});
        }
    }

    const harness::AblationGrid grid = harness::ablate(
        source, targets, method, base, cfg.get_double_list("ablate", "r_values"),
        cfg.get_double_list("ablate", "beta_values"), samples, seed, workers);

    const std::string json_text = harness::grid_json(grid).dump(2) + "\n";
    const std::string json_path =
        harness::write_content_addressed(out_dir + "/reports", "ablation", ".json", json_text);
    const std::string csv_path = harness::write_content_addressed(
        out_dir + "/reports", "ablation", ".csv", harness::grid_csv(grid));
    m.outputs.push_back(json_path);
    m.outputs.push_back(csv_path);

    std::cout << harness::render_report(harness::grid_json(grid));
    std::cout << "report: " << json_path << "\n";
}

void cmd_landscape(const config::Config& cfg, std::uint64_t seed, unsigned workers,
                   const std::string& out_dir, manifest::RunManifest& m) {
    PreparedData d = prepare_data(cfg, seed);
    m.input_hashes.insert(d.input_hashes.begin(), d.input_hashes.end());

    const std::vector<std::string> ids = zoo_member_ids(cfg);
    const std::size_t source_index = find_source_index(ids, cfg);
    const Model source = load_member(out_dir, ids[source_index]);

    const std::size_t n = cfg.get_size("landscape", "samples", 64);
    const data::Dataset samples = data::select_correctly_classified(
        {&source}, d.test, n, rng::derive(seed, "select"));

    const double epsilon = cfg.get_double("landscape", "epsilon", 8.0 / 255.0);
    const double radius = cfg.get_double("landscape", "sharpness_radius", 4.0 / 255.0);
    const std::size_t directions = cfg.get_size("landscape", "directions", 8);
    const std::vector<double> radii = cfg.get_double_list("landscape", "radii");
    const std::size_t slices = std::min(cfg.get_size("landscape", "slices", 4), n);

    nlohmann::json summary;
    summary["kind"] = "landscape";
    summary["schema_version"] = 1;
    summary["source"] = ids[source_index];
    summary["epsilon"] = epsilon;
    summary["sharpness_radius"] = radius;
    summary["directions"] = directions;
    summary["sample_count"] = samples.size();
    summary["seed"] = seed;

    // Shared probe directions per image so the two variants see identical
    // slices through their respective examples.
    const std::vector<std::size_t> item_shape{1, samples.images.dim(1), samples.images.dim(2),
                                              samples.images.dim(3)};
    std::vector<std::vector<Tensor>> slice_dirs(slices);
    for (std::size_t i = 0; i < slices; ++i) {
        rng::Stream stream(rng::derive(seed, "slice", i));
        for (std::size_t k = 0; k < directions; ++k) {
            slice_dirs[i].push_back(landscape::random_unit_direction(item_shape, stream));
        }
    }

    for (const char* which : {"attack_a", "attack_b"}) {
        const std::string id = cfg.get("landscape", which, "");
        if (id.empty()) {
            throw ConfigError("[landscape] " + std::string(which) + " must name an attack id");
        }
        MethodConfig mc = attack_config(cfg, id);
        mc.config.epsilon = epsilon;
        mc.config.seed = rng::derive(seed, "attack:" + id);
        mc.config.workers = workers;
        const attacks::AdversarialBatch batch =
            attacks::craft(mc.method, source, samples.images, samples.labels, mc.config);

        const std::vector<double> norms =
            landscape::gradient_norm_at(source, batch.perturbed, batch.labels);
        double norm_sum = 0.0;
        for (double v : norms) {
            norm_sum += v;
        }
        const double mean_norm = norm_sum / static_cast<double>(norms.size());
        const double sharp = landscape::sharpness(source, batch.perturbed, batch.labels, radius,
                                                  directions, rng::derive(seed, "sharpness"));

        std::vector<landscape::FlatnessProbe> probes;
        for (std::size_t i = 0; i < slices; ++i) {
            probes.push_back(landscape::loss_slice(source, slice_item(batch.perturbed, i),
                                                   batch.labels[i], slice_dirs[i], radii));
        }
        const std::string csv_path = harness::write_content_addressed(
            out_dir + "/reports", "landscape-" + sanitize(id), ".csv",
            landscape::probe_csv(probes));
        m.outputs.push_back(csv_path);

        nlohmann::json variant;
        variant["attack"] = id;
        variant["mean_grad_norm"] = mean_norm;
        variant["sharpness"] = sharp;
        variant["source_asr"] = batch.source_success_rate();
        summary["variants"][id] = variant;
        std::cout << "landscape " << id << ": mean grad norm " << fmt_short(mean_norm)
                  << ", sharpness " << fmt_g(sharp) << ", source ASR "
                  << fmt_short(batch.source_success_rate()) << "\n";
    }

    const std::string json_path = harness::write_content_addressed(
        out_dir + "/reports", "landscape", ".json", summary.dump(2) + "\n");
    m.outputs.push_back(json_path);
    std::cout << "report: " << json_path << "\n";
}

void cmd_report(const std::string& path) {
    if (path.empty()) {
        throw ConfigError("report needs a report JSON path (advlab report <file>)");
    }
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open report '" + path + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + path + "' is not valid JSON: " + e.what());
    }
    if (j.value("kind", "") == "landscape") {
        std::cout << "landscape summary (source " << j.value("source", "") << ")\n";
        for (const auto& [id, variant] : j.at("variants").items()) {
            std::cout << "  " << id << ": mean grad norm "
                      << fmt_short(variant.at("mean_grad_norm").get<double>()) << ", sharpness "
                      << fmt_g(variant.at("sharpness").get<double>()) << "\n";
        }
        return;
    }
    std::cout << harness::render_report(j);
}

config::Config resolve_config(const Options& opts) {
    config::Config cfg = config::default_config();
    if (!opts.config_path.empty()) {
        cfg = config::merge(cfg, config::parse_file(opts.config_path));
    }

    std::vector<std::string> attack_sections;
    for (const auto& [name, entries] : cfg.sections) {
        if (name.rfind("attack ", 0) == 0) {
            attack_sections.push_back(name);
        }
    }
    if (opts.epsilon) {
        const std::string v = fmt_g(*opts.epsilon);
        cfg.set("eval", "epsilons", v);
        cfg.set("ablate", "epsilon", v);
        cfg.set("landscape", "epsilon", v);
        for (const std::string& s : attack_sections) {
            cfg.set(s, "epsilon", v);
        }
    }
    if (opts.steps) {
        const std::string v = std::to_string(*opts.steps);
        cfg.set("ablate", "steps", v);
        for (const std::string& s : attack_sections) {
            cfg.set(s, "steps", v);
        }
    }
    if (opts.gnp_r) {
        for (const std::string& s : attack_sections) {
            cfg.set(s, "gnp_r", fmt_g(*opts.gnp_r));
        }
    }
    if (opts.gnp_beta) {
        for (const std::string& s : attack_sections) {
            cfg.set(s, "gnp_beta", fmt_g(*opts.gnp_beta));
        }
    }
    if (opts.dim) {
        for (const std::string& s : attack_sections) {
            cfg.set(s, "dim", fmt_g(*opts.dim));
        }
    }
    if (opts.tim_kernel) {
        for (const std::string& s : attack_sections) {
            cfg.set(s, "tim_kernel", std::to_string(*opts.tim_kernel));
        }
    }
    if (opts.attack) {
        cfg.set("eval", "attacks", *opts.attack);
    }
    return cfg;
}

int exec(const std::string& command, const config::Config& cfg, std::uint64_t seed,
         unsigned workers, const std::string& out_dir, const Options& opts) {
    util::make_dirs(out_dir);
    manifest::RunManifest m;
    m.command = command;
    m.seed = seed;
    m.workers = workers;
    m.out_dir = out_dir;
    m.config_text = config::serialize(cfg);
    m.timestamp = manifest::current_timestamp();
    if (!opts.config_path.empty() && util::file_exists(opts.config_path)) {
        m.input_hashes[opts.config_path] = util::to_hex(util::file_hash(opts.config_path));
    }

    if (command == "train") {
        cmd_train(cfg, seed, out_dir, m);
    } else if (command == "attack") {
        cmd_attack(cfg, seed, workers, out_dir, opts, m);
    } else if (command == "eval") {
        cmd_eval(cfg, seed, workers, out_dir, m);
    } else if (command == "ablate") {
        cmd_ablate(cfg, seed, workers, out_dir, m);
    } else if (command == "landscape") {
        cmd_landscape(cfg, seed, workers, out_dir, m);
    } else {
        throw ConfigError("unknown command '" + command +
                          "' (known: train, attack, eval, ablate, landscape, report, rerun)");
    }

    const std::string manifest_path = out_dir + "/manifest-" + command + ".json";
    manifest::write_manifest(m, manifest_path);
    std::cout << "manifest: " << manifest_path << "\n";
    return 0;
}

}  // namespace

int run(const Options& opts) {
    try {
        const unsigned default_workers = std::max(1u, std::thread::hardware_concurrency());
        if (opts.command == "report") {
            cmd_report(opts.path);
            return 0;
        }
        if (opts.command == "rerun") {
            if (opts.path.empty()) {
                throw ConfigError("rerun needs a manifest path (advlab rerun <manifest.json>)");
            }
            const manifest::RunManifest m = manifest::read_manifest(opts.path);
            const config::Config cfg = config::parse(m.config_text, opts.path + ":config");
            Options inner = opts;
            inner.config_path.clear();  // the manifest text is already resolved
            return exec(m.command, cfg, opts.seed.value_or(m.seed),
                        opts.workers.value_or(m.workers), opts.out_dir.value_or(m.out_dir),
                        inner);
        }
        const config::Config cfg = resolve_config(opts);
        return exec(opts.command, cfg, opts.seed.value_or(1),
                    opts.workers.value_or(default_workers),
                    opts.out_dir.value_or("runs/default"), opts);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace advlab::commands
