#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace advlab::commands {

// Parsed command line. Flag values override config-file values, which
// override built-in defaults.
struct Options {
    std::string command;      // train | attack | eval | ablate | landscape | report | rerun
    std::string config_path;  // optional INI file
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::optional<std::string> out_dir;  // default "runs/default"; rerun keeps the manifest's
    std::optional<double> epsilon;
    std::optional<std::size_t> steps;
    std::optional<double> gnp_r;
    std::optional<double> gnp_beta;
    std::optional<std::string> attack;  // attack id, e.g. "ifgsm+gnp"
    std::optional<double> dim;
    std::optional<std::size_t> tim_kernel;
    std::string path;  // report: report JSON; rerun: manifest JSON
};

// Runs the command and maps errors to exit codes:
// 0 ok, 1 unexpected failure, 2 config, 3 data, 4 numeric, 5 capacity.
int run(const Options& opts);

}  // namespace advlab::commands
