#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/model.hpp"

namespace advlab::harness {

struct NamedModel {
    std::string id;
    const Model* model = nullptr;
};

struct NamedAttack {
    std::string id;       // row label, e.g. "ifgsm" or "ifgsm+gnp"
    std::string method;   // fgsm | ifgsm | mifgsm
    attacks::AttackConfig config;
};

// Transfer matrix: one row per (attack, epsilon), one ASR column per model.
// The first column is the source (white-box); mean_target_asr averages the
// remaining columns, matching the convention that the white-box column is
// excluded from averages. Report files carry no timestamp so identical runs
// produce identical bytes; timestamps belong to the run manifest.
struct TransferReport {
    std::string source_id;
    std::vector<std::string> model_ids;  // column order; model_ids[0] == source_id

    struct Row {
        std::string attack_id;
        double epsilon = 0.0;
        std::vector<double> asr;  // one per column
        double mean_target_asr = 0.0;
        std::size_t fallback_count = 0;  // images that hit a zero-norm fallback
    };
    std::vector<Row> rows;

    std::size_t sample_count = 0;
    std::uint64_t seed = 0;
};

// Mean transfer ASR (source excluded) per (r, beta) cell. Values sorted
// ascending and deduplicated; beta = 0 is the required baseline anchor.
struct AblationGrid {
    std::string method;
    std::vector<double> r_values;
    std::vector<double> beta_values;
    std::vector<double> mean_target_asr;  // r-major: [ri * beta_count + bi]
    std::size_t sample_count = 0;
    std::uint64_t seed = 0;

    double cell(std::size_t ri, std::size_t bi) const {
        return mean_target_asr[ri * beta_values.size() + bi];
    }
};

struct ComparisonReport {
    std::string source_id;
    std::vector<std::string> model_ids;
    struct Row {
        std::string attack_a;
        std::string attack_b;
        double epsilon = 0.0;
        std::vector<double> delta;  // a - b per column
        double mean_target_delta = 0.0;
    };
    std::vector<Row> rows;
    double summary_mean_target_delta = 0.0;  // mean over rows
};

// Fraction of perturbed images the model labels differently from the
// ground truth. Empty batches are rejected.
double asr(const Model& model, const attacks::AdversarialBatch& adv);

// Crafts each attack once on the source and scores every model column.
// Attack seeds derive from the root seed and the attack id, so one root
// seed pins the whole report. `samples` should be pre-filtered with
// select_correctly_classified over all models involved.
TransferReport evaluate_transfer(const NamedModel& source, const std::vector<NamedModel>& targets,
                                 const std::vector<NamedAttack>& attack_list,
                                 const data::Dataset& samples, std::uint64_t seed,
                                 unsigned workers);

// Sweeps the penalty hyperparameters on one attack method. Every cell
// shares the samples and the derived seed; beta values must include 0.
AblationGrid ablate(const NamedModel& source, const std::vector<NamedModel>& targets,
                    const std::string& method, const attacks::AttackConfig& base_cfg,
                    std::vector<double> r_values, std::vector<double> beta_values,
                    const data::Dataset& samples, std::uint64_t seed, unsigned workers);

// Per-cell differences a - b. Reports must share source, columns, row
// structure (epsilon per row) and sample count.
ComparisonReport compare(const TransferReport& a, const TransferReport& b);

nlohmann::json report_json(const TransferReport& report);
TransferReport report_from_json(const nlohmann::json& j);
nlohmann::json grid_json(const AblationGrid& grid);
AblationGrid grid_from_json(const nlohmann::json& j);
nlohmann::json comparison_json(const ComparisonReport& report);

std::string transfer_csv(const TransferReport& report);
std::string grid_csv(const AblationGrid& grid);

// Renders a report JSON (any kind, keyed by its "kind" field) as a text
// table for the terminal.
std::string render_report(const nlohmann::json& j);

// Writes content under a hash-keyed immutable filename
// <dir>/<stem>-<hash16><ext> and returns the path.
std::string write_content_addressed(const std::string& dir, const std::string& stem,
                                    const std::string& ext, const std::string& content);

}  // namespace advlab::harness
