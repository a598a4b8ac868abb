#include "ammu/config.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ammu {

namespace {

std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    std::int64_t out;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key " + key + " needs an integer, got '" + v + "'");
    }
    if (used != v.size()) {
        throw std::invalid_argument("config: key " + key + " has trailing text in '" + v + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key " + key + " needs a number, got '" + v + "'");
    }
    if (used != v.size()) {
        throw std::invalid_argument("config: key " + key + " has trailing text in '" + v + "'");
    }
    if (!std::isfinite(out)) {
        throw std::invalid_argument("config: key " + key + " must be finite, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw std::invalid_argument("config: key " + key + " needs true or false, got '" + v + "'");
}

std::vector<std::int64_t> parse_ints(const std::string& key, const std::string& v,
                                     std::size_t arity) {
    std::vector<std::int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
    if (out.empty()) {
        throw std::invalid_argument("config: key " + key + " needs at least one integer");
    }
    if (arity != 0 && out.size() != arity) {
        throw std::invalid_argument("config: key " + key + " needs " + std::to_string(arity) +
                                    " comma-separated integers, got " + std::to_string(out.size()));
    }
    return out;
}

}  // namespace

void RunSpec::validate() const {
    model.validate();
    if (train_steps < 1) throw std::invalid_argument("config: train_steps must be positive");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be positive");
    if (base_lr <= 0.0) throw std::invalid_argument("config: base_lr must be positive");
    if (lr_power <= 0.0) throw std::invalid_argument("config: lr_power must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("config: weight_decay must not be negative");
    if (oracle_trials < 1) throw std::invalid_argument("config: oracle_trials must be positive");
    for (std::int64_t s : bench_sizes) {
        if (s < 1) throw std::invalid_argument("config: bench_sizes must be positive");
    }
    if (bench_channels < 1 || bench_window < 1 || bench_anchor < 1) {
        throw std::invalid_argument("config: bench extents must be positive");
    }
}

RunSpec parse_run_spec(std::istream& in) {
    RunSpec spec;
    std::set<std::string> seen;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": empty key or value");
        }
        if (!seen.insert(key).second) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": duplicate key " + key);
        }

        if (key == "input_h") {
            spec.model.input_h = parse_int(key, value);
        } else if (key == "input_w") {
            spec.model.input_w = parse_int(key, value);
        } else if (key == "encoder_channels") {
            const auto v = parse_ints(key, value, 4);
            for (std::size_t i = 0; i < 4; ++i) spec.model.encoder_channels[i] = v[i];
        } else if (key == "level_channels") {
            const auto v = parse_ints(key, value, 2);
            spec.model.level_channels[0] = v[0];
            spec.model.level_channels[1] = v[1];
        } else if (key == "fusion_channels") {
            spec.model.fusion_channels = parse_int(key, value);
        } else if (key == "head_hidden") {
            spec.model.head_hidden = parse_int(key, value);
        } else if (key == "classes") {
            spec.model.classes = parse_int(key, value);
        } else if (key == "heads") {
            const auto v = parse_ints(key, value, 3);
            for (std::size_t i = 0; i < 3; ++i) spec.model.heads[i] = v[i];
        } else if (key == "granularity") {
            if (value == "element") {
                spec.model.granularity = MaskGranularity::element;
            } else if (value == "block4") {
                spec.model.granularity = MaskGranularity::block4;
            } else {
                throw std::invalid_argument("config: granularity must be element or block4, got '" +
                                            value + "'");
            }
        } else if (key == "renormalize") {
            spec.model.renormalize = parse_bool(key, value);
        } else if (key == "train_steps") {
            spec.train_steps = parse_int(key, value);
        } else if (key == "batch_size") {
            spec.batch_size = parse_int(key, value);
        } else if (key == "base_lr") {
            spec.base_lr = parse_real(key, value);
        } else if (key == "lr_power") {
            spec.lr_power = parse_real(key, value);
        } else if (key == "weight_decay") {
            spec.weight_decay = parse_real(key, value);
        } else if (key == "oracle_trials") {
            spec.oracle_trials = parse_int(key, value);
        } else if (key == "bench_sizes") {
            spec.bench_sizes = parse_ints(key, value, 0);
        } else if (key == "bench_channels") {
            spec.bench_channels = parse_int(key, value);
        } else if (key == "bench_window") {
            spec.bench_window = parse_int(key, value);
        } else if (key == "bench_anchor") {
            spec.bench_anchor = parse_int(key, value);
        } else {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key " + key);
        }
    }
    return spec;
}

RunSpec load_run_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    return parse_run_spec(in);
}

}  // namespace ammu
