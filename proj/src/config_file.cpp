#include "dpgan/config_file.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace dpgan {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad unsigned integer for " + key + ": '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

TapPlacement parse_placement(const std::string& key, const std::string& v) {
    try {
        return tap_placement_from_string(v);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad tap placement for " + key + ": '" + v + "'");
    }
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not key=value: '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));
        if (!out.emplace(key, val).second)
            throw std::invalid_argument("config: duplicate key " + key);
    }
    return out;
}

std::string train_config_to_text(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "resolution = " << cfg.resolution << "\n";
    out << "num_classes = " << cfg.num_classes << "\n";
    out << "width_divisor = " << cfg.width_divisor << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "steps = " << cfg.steps << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "lr_g = " << fmt_double(cfg.lr_g) << "\n";
    out << "lr_d = " << fmt_double(cfg.lr_d) << "\n";
    out << "beta1 = " << fmt_double(cfg.beta1) << "\n";
    out << "beta2 = " << fmt_double(cfg.beta2) << "\n";
    out << "adam_eps = " << fmt_double(cfg.adam_eps) << "\n";
    out << "ema_decay = " << fmt_double(cfg.ema_decay) << "\n";
    out << "lambda_lm = " << fmt_double(cfg.lambda_lm) << "\n";
    out << "gen_oa = " << (cfg.gen_oa ? "true" : "false") << "\n";
    out << "dis_oa = " << (cfg.dis_oa ? "true" : "false") << "\n";
    out << "ms = " << to_string(cfg.ms) << "\n";
    out << "fm = " << to_string(cfg.fm) << "\n";
    out << "no_cat = " << (cfg.no_cat ? "true" : "false") << "\n";
    out << "no_lm = " << (cfg.no_lm ? "true" : "false") << "\n";
    out << "route_top_alpha = " << (cfg.route_top_alpha ? "true" : "false") << "\n";
    out << "whole_class_mix = " << (cfg.whole_class_mix ? "true" : "false") << "\n";
    out << "per_pixel_noise = " << (cfg.per_pixel_noise ? "true" : "false") << "\n";
    out << "nonsat_g_hinge = " << (cfg.nonsat_g_hinge ? "true" : "false") << "\n";
    out << "dataset_weights = " << (cfg.dataset_weights ? "true" : "false") << "\n";
    out << "sn_g = " << (cfg.sn_g ? "true" : "false") << "\n";
    out << "sn_d = " << (cfg.sn_d ? "true" : "false") << "\n";
    out << "deterministic = " << (cfg.deterministic ? "true" : "false") << "\n";
    return out.str();
}

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "resolution") cfg.resolution = parse_int(key, value);
    else if (key == "num_classes") cfg.num_classes = parse_int(key, value);
    else if (key == "width_divisor") cfg.width_divisor = parse_int(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
    else if (key == "steps") cfg.steps = parse_int(key, value);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "lr_g") cfg.lr_g = parse_double(key, value);
    else if (key == "lr_d") cfg.lr_d = parse_double(key, value);
    else if (key == "beta1") cfg.beta1 = parse_double(key, value);
    else if (key == "beta2") cfg.beta2 = parse_double(key, value);
    else if (key == "adam_eps") cfg.adam_eps = parse_double(key, value);
    else if (key == "ema_decay") cfg.ema_decay = parse_double(key, value);
    else if (key == "lambda_lm") cfg.lambda_lm = parse_double(key, value);
    else if (key == "gen_oa") cfg.gen_oa = parse_bool(key, value);
    else if (key == "dis_oa") cfg.dis_oa = parse_bool(key, value);
    else if (key == "ms") cfg.ms = parse_placement(key, value);
    else if (key == "fm") cfg.fm = parse_placement(key, value);
    else if (key == "no_cat") cfg.no_cat = parse_bool(key, value);
    else if (key == "no_lm") cfg.no_lm = parse_bool(key, value);
    else if (key == "route_top_alpha") cfg.route_top_alpha = parse_bool(key, value);
    else if (key == "whole_class_mix") cfg.whole_class_mix = parse_bool(key, value);
    else if (key == "per_pixel_noise") cfg.per_pixel_noise = parse_bool(key, value);
    else if (key == "nonsat_g_hinge") cfg.nonsat_g_hinge = parse_bool(key, value);
    else if (key == "dataset_weights") cfg.dataset_weights = parse_bool(key, value);
    else if (key == "sn_g") cfg.sn_g = parse_bool(key, value);
    else if (key == "sn_d") cfg.sn_d = parse_bool(key, value);
    else if (key == "deterministic") cfg.deterministic = parse_bool(key, value);
    else throw std::invalid_argument("config: unknown key " + key);
}

TrainConfig train_config_from_text(const std::string& text) {
    TrainConfig cfg;
    for (const auto& [key, value] : parse_kv_text(text)) apply_override(cfg, key, value);
    return cfg;
}

}  // namespace dpgan
