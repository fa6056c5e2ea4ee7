#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace advlab::config {

// Flat INI-style configuration: [section] headers, key = value lines,
// '#' or ';' comments. Numbers accept plain decimals and fractions like
// "8/255". Attack variants live in sections named "[attack <id>]".
struct Config {
    std::map<std::string, std::map<std::string, std::string>> sections;

    bool has(const std::string& section, const std::string& key) const;
    void set(const std::string& section, const std::string& key, const std::string& value);

    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback) const;
    std::string require(const std::string& section, const std::string& key) const;

    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const;
    std::size_t get_size(const std::string& section, const std::string& key,
                         std::size_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& section, const std::string& key) const;
    std::vector<double> get_double_list(const std::string& section, const std::string& key) const;
};

// Parse errors carry `origin` and the 1-based line number.
Config parse(const std::string& text, const std::string& origin);
Config parse_file(const std::string& path);

// Canonical form: sections and keys sorted, one "key = value" per line.
// serialize(parse(serialize(c))) == serialize(c).
std::string serialize(const Config& cfg);

// Overlay wins key by key.
Config merge(Config base, const Config& overlay);

// The default experiment: synthetic 4-class task, six-model zoo, the
// standard attack variants and the penalty sweep.
Config default_config();

// "0.5", "8/255", "1e-3"; throws on anything else.
double parse_number(const std::string& text, const std::string& context);

}  // namespace advlab::config
