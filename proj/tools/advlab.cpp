// advlab: train a small model zoo, craft sign-gradient adversarial
// examples (optionally with the gradient-norm penalty), and score their
// transfer across the zoo. Every run writes a manifest that `rerun`
// reproduces byte for byte.

#include <cstdint>
#include <string>

#include "CLI11.hpp"

#include "advlab/commands.hpp"
#include "advlab/manifest.hpp"

namespace {

struct RawFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    std::string out_dir;
    double epsilon = 0.0;
    std::size_t steps = 0;
    double gnp_r = 0.0;
    double gnp_beta = 0.0;
    std::string attack;
    double dim = 0.0;
    std::size_t tim_kernel = 0;
    std::string path;
};

void add_common(CLI::App* cmd, RawFlags& raw, bool with_attack_flags) {
    cmd->add_option("--config", raw.config_path, "INI config file (overrides defaults)");
    cmd->add_option("--seed", raw.seed, "root seed for all derived randomness");
    cmd->add_option("--workers", raw.workers,
                    "worker threads (results are identical at any count)");
    cmd->add_option("--out-dir", raw.out_dir, "output directory (default runs/default)");
    if (!with_attack_flags) {
        return;
    }
    cmd->add_option("--epsilon", raw.epsilon, "L-inf budget, e.g. 0.0314 (config accepts 8/255)");
    cmd->add_option("--steps", raw.steps, "attack iterations T");
    cmd->add_option("--gnp-r", raw.gnp_r, "penalty probe step length r");
    cmd->add_option("--gnp-beta", raw.gnp_beta, "penalty coefficient beta");
    cmd->add_option("--attack", raw.attack,
                    "attack id (fgsm, ifgsm, mifgsm, or a config section)");
    cmd->add_option("--dim", raw.dim, "input-diversity probability in [0,1]");
    cmd->add_option("--tim-kernel", raw.tim_kernel, "gradient-smoothing kernel width (odd)");
}

bool flag_given(const CLI::App* cmd, const std::string& name) {
    const CLI::Option* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(advlab::kToolName) + " " + advlab::kToolVersion +
                 " — adversarial transfer experiments with a gradient-norm penalty"};
    app.require_subcommand(1);

    RawFlags raw;
    add_common(app.add_subcommand("train", "train the model zoo"), raw, false);
    add_common(app.add_subcommand("attack", "craft and persist an adversarial batch"), raw, true);
    add_common(app.add_subcommand("eval", "transfer matrix over the zoo"), raw, true);
    add_common(app.add_subcommand("ablate", "sweep the penalty hyperparameters (r, beta)"), raw,
               true);
    add_common(app.add_subcommand("landscape", "flatness statistics around the examples"), raw,
               true);

    CLI::App* report = app.add_subcommand("report", "render a report JSON as text");
    report->add_option("file", raw.path, "report JSON file")->required();

    CLI::App* rerun = app.add_subcommand("rerun", "reproduce a run from its manifest");
    rerun->add_option("manifest", raw.path, "manifest JSON file")->required();
    add_common(rerun, raw, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad usage is a config error
    }

    const CLI::App* sub = app.get_subcommands().front();
    advlab::commands::Options opts;
    opts.command = sub->get_name();
    opts.config_path = raw.config_path;
    opts.path = raw.path;
    if (flag_given(sub, "--seed")) {
        opts.seed = raw.seed;
    }
    if (flag_given(sub, "--workers")) {
        opts.workers = raw.workers;
    }
    if (flag_given(sub, "--out-dir")) {
        opts.out_dir = raw.out_dir;
    }
    if (flag_given(sub, "--epsilon")) {
        opts.epsilon = raw.epsilon;
    }
    if (flag_given(sub, "--steps")) {
        opts.steps = raw.steps;
    }
    if (flag_given(sub, "--gnp-r")) {
        opts.gnp_r = raw.gnp_r;
    }
    if (flag_given(sub, "--gnp-beta")) {
        opts.gnp_beta = raw.gnp_beta;
    }
    if (flag_given(sub, "--attack")) {
        opts.attack = raw.attack;
    }
    if (flag_given(sub, "--dim")) {
        opts.dim = raw.dim;
    }
    if (flag_given(sub, "--tim-kernel")) {
        opts.tim_kernel = raw.tim_kernel;
    }
    return advlab::commands::run(opts);
}
