#include "advlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "advlab/errors.hpp"
#include "advlab/rng.hpp"
#include "advlab/util.hpp"

namespace advlab::harness {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

double mean_excluding_first(const std::vector<double>& values) {
    double sum = 0.0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        sum += values[i];
    }
    return sum / static_cast<double>(values.size() - 1);
}

}  // namespace

double asr(const Model& model, const attacks::AdversarialBatch& adv) {
    if (adv.size() == 0) {
        throw ConfigError("attack success rate over an empty batch is undefined");
    }
    const Tensor& images = adv.perturbed;
    const std::size_t item = per_item_size(images);
    const std::size_t chunk = 64;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < adv.size(); start += chunk) {
        const std::size_t count = std::min(chunk, adv.size() - start);
        Tensor batch({count, images.shape[1], images.shape[2], images.shape[3]},
                     std::vector<double>(images.values.begin() + start * item,
                                         images.values.begin() + (start + count) * item));
        const std::vector<int> pred = predict(model, batch);
        for (std::size_t i = 0; i < count; ++i) {
            if (pred[i] != adv.labels[start + i]) {
                ++hits;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(adv.size());
}

TransferReport evaluate_transfer(const NamedModel& source, const std::vector<NamedModel>& targets,
                                 const std::vector<NamedAttack>& attack_list,
                                 const data::Dataset& samples, std::uint64_t seed,
                                 unsigned workers) {
    if (source.model == nullptr) {
        throw ConfigError("transfer evaluation needs a source model");
    }
    if (targets.empty()) {
        throw ConfigError("transfer evaluation needs at least one target model");
    }
    if (attack_list.empty()) {
        throw ConfigError("transfer evaluation needs at least one attack");
    }
    if (samples.size() == 0) {
        throw ConfigError("transfer evaluation needs a non-empty sample set");
    }

    TransferReport report;
    report.source_id = source.id;
    report.model_ids.push_back(source.id);
    for (const NamedModel& t : targets) {
        if (t.model == nullptr) {
            throw ConfigError("target model '" + t.id + "' is missing");
        }
        report.model_ids.push_back(t.id);
    }
    report.sample_count = samples.size();
    report.seed = seed;

    for (const NamedAttack& attack : attack_list) {
        attacks::AttackConfig cfg = attack.config;
        cfg.seed = rng::derive(seed, "attack:" + attack.id);
        cfg.workers = workers;
        const attacks::AdversarialBatch batch =
            attacks::craft(attack.method, *source.model, samples.images, samples.labels, cfg);

        TransferReport::Row row;
        row.attack_id = attack.id;
        row.epsilon = cfg.epsilon;
        row.fallback_count = batch.trace.fallback_images.size();
        row.asr.push_back(asr(*source.model, batch));
        for (const NamedModel& t : targets) {
            row.asr.push_back(asr(*t.model, batch));
        }
        row.mean_target_asr = mean_excluding_first(row.asr);
        report.rows.push_back(std::move(row));
    }
    return report;
}

AblationGrid ablate(const NamedModel& source, const std::vector<NamedModel>& targets,
                    const std::string& method, const attacks::AttackConfig& base_cfg,
                    std::vector<double> r_values, std::vector<double> beta_values,
                    const data::Dataset& samples, std::uint64_t seed, unsigned workers) {
    if (r_values.empty() || beta_values.empty()) {
        throw ConfigError("ablation grids must be non-empty");
    }
    std::sort(r_values.begin(), r_values.end());
    r_values.erase(std::unique(r_values.begin(), r_values.end()), r_values.end());
    std::sort(beta_values.begin(), beta_values.end());
    beta_values.erase(std::unique(beta_values.begin(), beta_values.end()), beta_values.end());

    for (double r : r_values) {
        if (!(r > 0.0)) {
            throw ConfigError("ablation r values must be positive, got " + std::to_string(r));
        }
    }
    for (double b : beta_values) {
        if (b < 0.0) {
            throw ConfigError("ablation beta values must be non-negative, got " +
                              std::to_string(b));
        }
    }
    if (std::find(beta_values.begin(), beta_values.end(), 0.0) == beta_values.end()) {
        throw ConfigError("ablation beta values must include 0 as the baseline anchor");
    }

    AblationGrid grid;
    grid.method = method;
    grid.r_values = r_values;
    grid.beta_values = beta_values;
    grid.sample_count = samples.size();
    grid.seed = seed;
    grid.mean_target_asr.resize(r_values.size() * beta_values.size(), 0.0);

    // Every cell shares the samples and this one derived seed; only (r, beta)
    // vary, so the beta=0 column reduces exactly to the plain attack.
    const std::uint64_t cell_seed = rng::derive(seed, "ablate:" + method);
    for (std::size_t ri = 0; ri < r_values.size(); ++ri) {
        for (std::size_t bi = 0; bi < beta_values.size(); ++bi) {
            attacks::AttackConfig cfg = base_cfg;
            cfg.gnp_enabled = true;
            cfg.gnp_r = r_values[ri];
            cfg.gnp_beta = beta_values[bi];
            cfg.seed = cell_seed;
            cfg.workers = workers;
            const attacks::AdversarialBatch batch =
                attacks::craft(method, *source.model, samples.images, samples.labels, cfg);
            std::vector<double> column;
            column.push_back(asr(*source.model, batch));
            for (const NamedModel& t : targets) {
                column.push_back(asr(*t.model, batch));
            }
            grid.mean_target_asr[ri * beta_values.size() + bi] = mean_excluding_first(column);
        }
    }
    return grid;
}

ComparisonReport compare(const TransferReport& a, const TransferReport& b) {
    if (a.source_id != b.source_id || a.model_ids != b.model_ids) {
        throw ConfigError("reports cover different models and cannot be compared");
    }
    if (a.sample_count != b.sample_count) {
        throw ConfigError("reports cover different sample counts and cannot be compared");
    }
    if (a.rows.size() != b.rows.size()) {
        throw ConfigError("reports have different row counts and cannot be compared");
    }

    ComparisonReport out;
    out.source_id = a.source_id;
    out.model_ids = a.model_ids;
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        const TransferReport::Row& ra = a.rows[i];
        const TransferReport::Row& rb = b.rows[i];
        if (ra.epsilon != rb.epsilon) {
            throw ConfigError("reports have different epsilon rows and cannot be compared");
        }
        ComparisonReport::Row row;
        row.attack_a = ra.attack_id;
        row.attack_b = rb.attack_id;
        row.epsilon = ra.epsilon;
        for (std::size_t c = 0; c < ra.asr.size(); ++c) {
            row.delta.push_back(ra.asr[c] - rb.asr[c]);
        }
        row.mean_target_delta = ra.mean_target_asr - rb.mean_target_asr;
        total += row.mean_target_delta;
        out.rows.push_back(std::move(row));
    }
    out.summary_mean_target_delta = total / static_cast<double>(out.rows.size());
    return out;
}

nlohmann::json report_json(const TransferReport& report) {
    nlohmann::json j;
    j["kind"] = "transfer";
    j["schema_version"] = 1;
    j["source"] = report.source_id;
    j["models"] = report.model_ids;
    j["sample_count"] = report.sample_count;
    j["seed"] = report.seed;
    nlohmann::json rows = nlohmann::json::array();
    for (const TransferReport::Row& row : report.rows) {
        nlohmann::json r;
        r["attack"] = row.attack_id;
        r["epsilon"] = row.epsilon;
        r["asr"] = row.asr;
        r["mean_target_asr"] = row.mean_target_asr;
        r["fallback_count"] = row.fallback_count;
        rows.push_back(r);
    }
    j["rows"] = rows;
    return j;
}

TransferReport report_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "transfer") {
        throw DataError("not a transfer report (kind = '" + j.value("kind", "") + "')");
    }
    TransferReport report;
    report.source_id = j.at("source").get<std::string>();
    report.model_ids = j.at("models").get<std::vector<std::string>>();
    report.sample_count = j.at("sample_count").get<std::size_t>();
    report.seed = j.at("seed").get<std::uint64_t>();
    for (const nlohmann::json& r : j.at("rows")) {
        TransferReport::Row row;
        row.attack_id = r.at("attack").get<std::string>();
        row.epsilon = r.at("epsilon").get<double>();
        row.asr = r.at("asr").get<std::vector<double>>();
        row.mean_target_asr = r.at("mean_target_asr").get<double>();
        row.fallback_count = r.value("fallback_count", std::size_t{0});
        report.rows.push_back(std::move(row));
    }
    return report;
}

nlohmann::json grid_json(const AblationGrid& grid) {
    nlohmann::json j;
    j["kind"] = "ablation";
    j["schema_version"] = 1;
    j["method"] = grid.method;
    j["r_values"] = grid.r_values;
    j["beta_values"] = grid.beta_values;
    j["mean_target_asr"] = grid.mean_target_asr;
    j["sample_count"] = grid.sample_count;
    j["seed"] = grid.seed;
    return j;
}

AblationGrid grid_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "ablation") {
        throw DataError("not an ablation report (kind = '" + j.value("kind", "") + "')");
    }
    AblationGrid grid;
    grid.method = j.at("method").get<std::string>();
    grid.r_values = j.at("r_values").get<std::vector<double>>();
    grid.beta_values = j.at("beta_values").get<std::vector<double>>();
    grid.mean_target_asr = j.at("mean_target_asr").get<std::vector<double>>();
    grid.sample_count = j.at("sample_count").get<std::size_t>();
    grid.seed = j.at("seed").get<std::uint64_t>();
    return grid;
}

nlohmann::json comparison_json(const ComparisonReport& report) {
    nlohmann::json j;
    j["kind"] = "comparison";
    j["schema_version"] = 1;
    j["source"] = report.source_id;
    j["models"] = report.model_ids;
    nlohmann::json rows = nlohmann::json::array();
    for (const ComparisonReport::Row& row : report.rows) {
        nlohmann::json r;
        r["attack_a"] = row.attack_a;
        r["attack_b"] = row.attack_b;
        r["epsilon"] = row.epsilon;
        r["delta"] = row.delta;
        r["mean_target_delta"] = row.mean_target_delta;
        rows.push_back(r);
    }
    j["rows"] = rows;
    j["summary_mean_target_delta"] = report.summary_mean_target_delta;
    return j;
}

std::string transfer_csv(const TransferReport& report) {
    std::ostringstream out;
    out << "attack,epsilon";
    for (std::size_t c = 0; c < report.model_ids.size(); ++c) {
        out << ',' << report.model_ids[c];
        if (report.model_ids[c] == report.source_id && c == 0) {
            out << "*";  // white-box column
        }
    }
    out << ",mean_target_asr\n";
    for (const TransferReport::Row& row : report.rows) {
        out << row.attack_id << ',' << fmt(row.epsilon);
        for (double v : row.asr) {
            out << ',' << fmt(v);
        }
        out << ',' << fmt(row.mean_target_asr) << '\n';
    }
    return out.str();
}

std::string grid_csv(const AblationGrid& grid) {
    std::ostringstream out;
    out << "r,beta,lambda,mean_target_asr\n";
    for (std::size_t ri = 0; ri < grid.r_values.size(); ++ri) {
        for (std::size_t bi = 0; bi < grid.beta_values.size(); ++bi) {
            const double r = grid.r_values[ri];
            const double beta = grid.beta_values[bi];
            out << fmt(r) << ',' << fmt(beta) << ',' << fmt(beta * r) << ','
                << fmt(grid.cell(ri, bi)) << '\n';
        }
    }
    return out.str();
}

std::string render_report(const nlohmann::json& j) {
    const std::string kind = j.value("kind", "");
    std::ostringstream out;
    if (kind == "transfer") {
        const TransferReport report = report_from_json(j);
        out << "transfer report  (source " << report.source_id << ", " << report.sample_count
            << " samples, seed " << report.seed << ")\n";
        std::vector<std::size_t> widths;
        out << "  attack            eps     ";
        for (std::size_t c = 0; c < report.model_ids.size(); ++c) {
            const std::string head = c == 0 ? report.model_ids[c] + "*" : report.model_ids[c];
            widths.push_back(std::max<std::size_t>(head.size(), 6));
            out << head << std::string(widths.back() - head.size() + 2, ' ');
        }
        out << "mean_target\n";
        for (const TransferReport::Row& row : report.rows) {
            char line[64];
            std::snprintf(line, sizeof(line), "  %-16s %7.4f ", row.attack_id.c_str(),
                          row.epsilon);
            out << line;
            for (std::size_t c = 0; c < row.asr.size(); ++c) {
                const std::string cell = fmt_short(row.asr[c]);
                out << cell << std::string(widths[c] - std::min(widths[c], cell.size()) + 2, ' ');
            }
            out << fmt_short(row.mean_target_asr) << '\n';
        }
        return out.str();
    }
    if (kind == "ablation") {
        const AblationGrid grid = grid_from_json(j);
        out << "ablation grid  (method " << grid.method << ", " << grid.sample_count
            << " samples, seed " << grid.seed << ")\n";
        out << "  r        beta     lambda   mean_target_asr\n";
        for (std::size_t ri = 0; ri < grid.r_values.size(); ++ri) {
            for (std::size_t bi = 0; bi < grid.beta_values.size(); ++bi) {
                char line[96];
                std::snprintf(line, sizeof(line), "  %-8.4g %-8.4g %-8.4g %.4f\n",
                              grid.r_values[ri], grid.beta_values[bi],
                              grid.r_values[ri] * grid.beta_values[bi], grid.cell(ri, bi));
                out << line;
            }
        }
        return out.str();
    }
    if (kind == "comparison") {
        out << "comparison  (source " << j.value("source", "") << ")\n";
        for (const nlohmann::json& r : j.at("rows")) {
            out << "  " << r.at("attack_a").get<std::string>() << " - "
                << r.at("attack_b").get<std::string>() << " @ eps "
                << fmt_short(r.at("epsilon").get<double>()) << ": mean target delta "
                << fmt_short(r.at("mean_target_delta").get<double>()) << '\n';
        }
        out << "  summary mean target delta: "
            << fmt_short(j.at("summary_mean_target_delta").get<double>()) << '\n';
        return out.str();
    }
    throw DataError("unknown report kind '" + kind + "'");
}

std::string write_content_addressed(const std::string& dir, const std::string& stem,
                                    const std::string& ext, const std::string& content) {
    util::make_dirs(dir);
    const std::string name = stem + "-" + util::to_hex(util::fnv1a64(content)) + ext;
    const std::string path = dir + "/" + name;
    util::write_binary_file(path, content);
    return path;
}

}  // namespace advlab::harness
