#include "advlab/manifest.hpp"

#include <ctime>
#include <fstream>

#include "json.hpp"

#include "advlab/errors.hpp"

namespace advlab::manifest {

void write_manifest(const RunManifest& m, const std::string& path) {
    nlohmann::json j;
    j["tool"] = m.tool;
    j["version"] = m.version;
    j["command"] = m.command;
    j["seed"] = m.seed;
    j["workers"] = m.workers;
    j["out_dir"] = m.out_dir;
    j["config"] = m.config_text;
    j["input_hashes"] = m.input_hashes;
    j["outputs"] = m.outputs;
    j["timestamp"] = m.timestamp;
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write manifest '" + path + "'");
    }
    out << j.dump(2) << "\n";
}

RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest '" + path + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + path + "' is not valid JSON: " + e.what());
    }
    RunManifest m;
    try {
        m.tool = j.value("tool", "");
        m.version = j.value("version", "");
        m.command = j.at("command").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.workers = j.value("workers", 1u);
        m.out_dir = j.value("out_dir", "");
        m.config_text = j.at("config").get<std::string>();
        m.input_hashes = j.value("input_hashes", std::map<std::string, std::string>{});
        m.outputs = j.value("outputs", std::vector<std::string>{});
        m.timestamp = j.value("timestamp", "");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + path + "' is missing required fields: " + e.what());
    }
    return m;
}

std::string current_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace advlab::manifest
