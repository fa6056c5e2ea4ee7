#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace advlab {

inline constexpr const char* kToolName = "advlab";
inline constexpr const char* kToolVersion = "1.0.0";

namespace manifest {

// One manifest per run. It pins everything needed to reproduce the run's
// outputs: the command, the fully resolved config text, the root seed and
// the input file hashes. The timestamp is informational only — outputs are
// functions of (command, config, seed), never of time.
struct RunManifest {
    std::string tool = kToolName;
    std::string version = kToolVersion;
    std::string command;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::string out_dir;
    std::string config_text;
    std::map<std::string, std::string> input_hashes;  // path -> fnv1a64 hex
    std::vector<std::string> outputs;                 // paths written by the run
    std::string timestamp;                            // ISO 8601 UTC, informational
};

void write_manifest(const RunManifest& m, const std::string& path);
RunManifest read_manifest(const std::string& path);

std::string current_timestamp();

}  // namespace manifest
}  // namespace advlab
