#include "advlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "advlab/errors.hpp"

namespace advlab::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) {
        ++a;
    }
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) {
        --b;
    }
    return s.substr(a, b - a);
}

double parse_plain(const std::string& text, const std::string& context) {
    const std::string t = trim(text);
    if (t.empty()) {
        throw ConfigError(context + ": expected a number, got an empty value");
    }
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size()) {
        throw ConfigError(context + ": '" + t + "' is not a number");
    }
    return v;
}

}  // namespace

double parse_number(const std::string& text, const std::string& context) {
    const std::string t = trim(text);
    const std::size_t slash = t.find('/');
    if (slash == std::string::npos) {
        return parse_plain(t, context);
    }
    const double num = parse_plain(t.substr(0, slash), context);
    const double den = parse_plain(t.substr(slash + 1), context);
    if (den == 0.0) {
        throw ConfigError(context + ": '" + t + "' divides by zero");
    }
    return num / den;
}

bool Config::has(const std::string& section, const std::string& key) const {
    const auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) != 0;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
    sections[section][key] = value;
}

std::string Config::get(const std::string& section, const std::string& key,
                        const std::string& fallback) const {
    const auto s = sections.find(section);
    if (s == sections.end()) {
        return fallback;
    }
    const auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
}

std::string Config::require(const std::string& section, const std::string& key) const {
    if (!has(section, key)) {
        throw ConfigError("missing required config key '" + key + "' in section [" + section +
                          "]");
    }
    return sections.at(section).at(key);
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    if (!has(section, key)) {
        return fallback;
    }
    return parse_number(sections.at(section).at(key), "[" + section + "] " + key);
}

std::int64_t Config::get_int(const std::string& section, const std::string& key,
                             std::int64_t fallback) const {
    if (!has(section, key)) {
        return fallback;
    }
    const std::string context = "[" + section + "] " + key;
    const std::string t = trim(sections.at(section).at(key));
    char* end = nullptr;
    const long long v = std::strtoll(t.c_str(), &end, 10);
    if (t.empty() || end != t.c_str() + t.size()) {
        throw ConfigError(context + ": '" + t + "' is not an integer");
    }
    return v;
}

std::size_t Config::get_size(const std::string& section, const std::string& key,
                             std::size_t fallback) const {
    const std::int64_t v = get_int(section, key, static_cast<std::int64_t>(fallback));
    if (v < 0) {
        throw ConfigError("[" + section + "] " + key + ": must be non-negative, got " +
                          std::to_string(v));
    }
    return static_cast<std::size_t>(v);
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) {
        return fallback;
    }
    std::string t = trim(sections.at(section).at(key));
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t == "true" || t == "1" || t == "yes" || t == "on") {
        return true;
    }
    if (t == "false" || t == "0" || t == "no" || t == "off") {
        return false;
    }
    throw ConfigError("[" + section + "] " + key + ": '" + t + "' is not a boolean");
}

std::vector<std::string> Config::get_list(const std::string& section,
                                          const std::string& key) const {
    std::vector<std::string> out;
    if (!has(section, key)) {
        return out;
    }
    const std::string& raw = sections.at(section).at(key);
    std::size_t start = 0;
    while (start <= raw.size()) {
        const std::size_t comma = raw.find(',', start);
        const std::string part =
            trim(raw.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (!part.empty()) {
            out.push_back(part);
        }
        if (comma == std::string::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

std::vector<double> Config::get_double_list(const std::string& section,
                                            const std::string& key) const {
    std::vector<double> out;
    for (const std::string& part : get_list(section, key)) {
        out.push_back(parse_number(part, "[" + section + "] " + key));
    }
    return out;
}

Config parse(const std::string& text, const std::string& origin) {
    Config cfg;
    std::string section;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') {
            continue;
        }
        if (t.front() == '[') {
            if (t.back() != ']' || t.size() < 3) {
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": malformed section header '" + t + "'");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) {
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": empty section name");
            }
            cfg.sections[section];  // record even if the section stays empty
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + t + "'");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        if (section.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": key '" + key +
                              "' appears before any [section] header");
        }
        cfg.sections[section][key] = trim(t.substr(eq + 1));
    }
    return cfg;
}

Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
}

std::string serialize(const Config& cfg) {
    std::ostringstream out;
    bool first = true;
    for (const auto& [section, entries] : cfg.sections) {
        if (!first) {
            out << '\n';
        }
        first = false;
        out << '[' << section << "]\n";
        for (const auto& [key, value] : entries) {
            out << key << " = " << value << '\n';
        }
    }
    return out.str();
}

Config merge(Config base, const Config& overlay) {
    for (const auto& [section, entries] : overlay.sections) {
        base.sections[section];
        for (const auto& [key, value] : entries) {
            base.sections[section][key] = value;
        }
    }
    return base;
}

Config default_config() {
    Config c;
    c.set("data", "kind", "synth");
    c.set("data", "classes", "4");
    c.set("data", "image_size", "16");
    c.set("data", "train_n", "2048");
    c.set("data", "test_n", "1024");
    c.set("data", "modes_per_class", "8");
    c.set("data", "blur_passes", "2");
    c.set("data", "subspace", "24");
    c.set("data", "separation", "1.6");
    c.set("data", "texture", "0.05");
    c.set("data", "jitter", "0.15");
    c.set("data", "nuisance", "0.8");
    c.set("data", "noise", "0.02");

    c.set("train", "epochs", "12");
    c.set("train", "batch_size", "32");
    c.set("train", "learning_rate", "0.05");
    c.set("train", "momentum", "0.9");

    c.set("zoo", "members", "mlp-64, mlp-128-64, cnn-8, cnn-8-16, cnn-16k5-32, cnn-4-8");
    c.set("zoo", "source", "cnn-8-16");

    c.set("eval", "samples", "500");
    c.set("eval", "epsilons", "8/255");
    c.set("eval", "attacks", "ifgsm, ifgsm+gnp, mifgsm, mifgsm+gnp");

    c.set("attack fgsm", "method", "fgsm");

    c.set("attack ifgsm", "method", "ifgsm");
    c.set("attack ifgsm", "steps", "20");

    c.set("attack ifgsm+gnp", "method", "ifgsm");
    c.set("attack ifgsm+gnp", "steps", "20");
    c.set("attack ifgsm+gnp", "gnp", "true");
    c.set("attack ifgsm+gnp", "gnp_r", "0.01");
    c.set("attack ifgsm+gnp", "gnp_beta", "0.8");

    c.set("attack mifgsm", "method", "mifgsm");
    c.set("attack mifgsm", "steps", "20");
    c.set("attack mifgsm", "momentum_decay", "1.0");

    c.set("attack mifgsm+gnp", "method", "mifgsm");
    c.set("attack mifgsm+gnp", "steps", "20");
    c.set("attack mifgsm+gnp", "momentum_decay", "1.0");
    c.set("attack mifgsm+gnp", "gnp", "true");
    c.set("attack mifgsm+gnp", "gnp_r", "0.01");
    c.set("attack mifgsm+gnp", "gnp_beta", "0.8");

    c.set("ablate", "method", "ifgsm");
    c.set("ablate", "epsilon", "8/255");
    c.set("ablate", "steps", "20");
    c.set("ablate", "samples", "200");
    c.set("ablate", "r_values", "0.01");
    c.set("ablate", "beta_values", "0, 0.6, 0.8, 1.0, 1.2, 1.6");

    c.set("landscape", "samples", "64");
    c.set("landscape", "attack_a", "ifgsm+gnp");
    c.set("landscape", "attack_b", "ifgsm");
    c.set("landscape", "epsilon", "8/255");
    c.set("landscape", "sharpness_radius", "4/255");
    c.set("landscape", "directions", "8");
    c.set("landscape", "radii", "2/255, 4/255, 8/255");
    c.set("landscape", "slices", "4");
    return c;
}

}  // namespace advlab::config
