#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tsda/common.hpp"

namespace tsda {

// Minimal INI-style config: [section] headers, key = value lines, '#' and ';'
// comments.
class Config {
public:
    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream is(text);
        std::string line, section;
        long lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string s = trim(line);
            if (s.empty() || s[0] == '#' || s[0] == ';') continue;
            if (s.front() == '[') {
                auto close = s.find(']');
                require(close != std::string::npos,
                        "config: unterminated section at line " + std::to_string(lineno));
                section = trim(s.substr(1, close - 1));
                continue;
            }
            auto eq = s.find('=');
            require(eq != std::string::npos,
                    "config: expected key = value at line " + std::to_string(lineno));
            cfg.sections_[section][trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ArgumentError("config: cannot open " + path);
        std::ostringstream os;
        os << is.rdbuf();
        return parse(os.str());
    }

    bool has(const std::string& section, const std::string& key) const {
        auto s = sections_.find(section);
        return s != sections_.end() && s->second.count(key) > 0;
    }

    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback = {}) const {
        auto s = sections_.find(section);
        if (s == sections_.end()) return fallback;
        auto k = s->second.find(key);
        return k == s->second.end() ? fallback : k->second;
    }

    std::string require_get(const std::string& section, const std::string& key) const {
        require(has(section, key), "config: missing [" + section + "] " + key);
        return get(section, key);
    }

    long get_long(const std::string& section, const std::string& key, long fallback) const {
        if (!has(section, key)) return fallback;
        return std::stol(get(section, key));
    }

    double get_double(const std::string& section, const std::string& key,
                      double fallback) const {
        if (!has(section, key)) return fallback;
        return std::stod(get(section, key));
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        std::string v = get(section, key);
        return v == "1" || v == "true" || v == "yes" || v == "on";
    }

    const std::map<std::string, std::string>& section(const std::string& name) const {
        static const std::map<std::string, std::string> empty;
        auto it = sections_.find(name);
        return it == sections_.end() ? empty : it->second;
    }

private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace tsda
