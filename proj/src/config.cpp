// config.cpp - flat key/value configuration; values are written in shortest
// round-trip form so load(save(cfg)) reproduces cfg exactly.

#include "smind/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <system_error>
#include <vector>

namespace smind {

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T> T parse_number(const std::string &key, const std::string &token) {
    T v{};
    const char *first = token.data();
    const char *last = first + token.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) throw ConfigError("config key '" + key + "': cannot parse '" + token + "'");
    return v;
}

template <typename T> std::string format_number(T v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::vector<std::string> split(const std::string &s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string t;
    while (in >> t) out.push_back(t);
    return out;
}

template <typename T, size_t N>
void parse_triple(const std::string &key, const std::string &value, std::array<T, N> &out) {
    const auto tokens = split(value);
    if (tokens.size() != N) throw ConfigError("config key '" + key + "': expected " + std::to_string(N) + " values");
    for (size_t a = 0; a < N; ++a) out[a] = parse_number<T>(key, tokens[a]);
}

template <typename T, size_t N> std::string format_triple(const std::array<T, N> &v) {
    std::string s;
    for (size_t a = 0; a < N; ++a) s += (a ? " " : "") + format_number(v[a]);
    return s;
}

// One table drives both directions.
struct Field {
    const char *key;
    std::function<void(RegistrationConfig &, const std::string &, const std::string &)> read;
    std::function<std::string(const RegistrationConfig &)> write;
};

template <typename T> Field scalar(const char *key, T RegistrationConfig::*member) {
    return Field{key,
                 [member](RegistrationConfig &c, const std::string &k, const std::string &v) {
                     c.*member = parse_number<T>(k, v);
                 },
                 [member](const RegistrationConfig &c) { return format_number(c.*member); }};
}

template <typename T> Field triple(const char *key, std::array<T, 3> RegistrationConfig::*member) {
    return Field{key,
                 [member](RegistrationConfig &c, const std::string &k, const std::string &v) {
                     parse_triple(k, v, c.*member);
                 },
                 [member](const RegistrationConfig &c) { return format_triple(c.*member); }};
}

const std::vector<Field> &fields() {
    static const std::vector<Field> table = {
        scalar("bins", &RegistrationConfig::bins),
        scalar("kernel_bandwidth", &RegistrationConfig::kernel_bandwidth),
        scalar("window", &RegistrationConfig::window),
        scalar("epsilon", &RegistrationConfig::epsilon),
        scalar("coarse_smoothing", &RegistrationConfig::coarse_smoothing),
        scalar("coarse_lr", &RegistrationConfig::coarse_lr),
        scalar("coarse_iters", &RegistrationConfig::coarse_iters),
        scalar("coarse_patience", &RegistrationConfig::coarse_patience),
        scalar("coarse_min_delta", &RegistrationConfig::coarse_min_delta),
        scalar("search_radius", &RegistrationConfig::search_radius),
        scalar("tau", &RegistrationConfig::tau),
        scalar("sigma", &RegistrationConfig::sigma),
        scalar("lambda", &RegistrationConfig::lambda),
        scalar("levels", &RegistrationConfig::levels),
        scalar("deform_smoothing", &RegistrationConfig::deform_smoothing),
        scalar("deform_lr", &RegistrationConfig::deform_lr),
        scalar("deform_iters", &RegistrationConfig::deform_iters),
        scalar("deform_patience", &RegistrationConfig::deform_patience),
        scalar("deform_min_delta", &RegistrationConfig::deform_min_delta),
        scalar("deform_displacement_scale", &RegistrationConfig::deform_displacement_scale),
        triple("target_spacing", &RegistrationConfig::target_spacing),
        triple("target_dims", &RegistrationConfig::target_dims),
    };
    return table;
}

} // namespace

void RegistrationConfig::validate() const {
    try {
        coarse().histogram.validate();
        coarse().schedule.validate();
        deformable().loss.validate();
        deformable().schedule.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }
    if (window < 3 || window % 2 == 0) throw ConfigError("config: window must be odd and >= 3");
    if (!(coarse_smoothing >= 0.0)) throw ConfigError("config: coarse_smoothing must be >= 0");
    if (!(deform_smoothing >= 0.0)) throw ConfigError("config: deform_smoothing must be >= 0");
    if (!(deform_displacement_scale > 0.0)) throw ConfigError("config: deform_displacement_scale must be positive");
    for (int a = 0; a < 3; ++a) {
        if (!(target_spacing[a] > 0.0)) throw ConfigError("config: target_spacing must be positive");
        if (target_dims[a] < 1) throw ConfigError("config: target_dims must be positive");
    }
}

CoarseConfig RegistrationConfig::coarse() const {
    CoarseConfig c;
    c.histogram.bins = bins;
    c.histogram.kernel_bandwidth = kernel_bandwidth;
    c.histogram.epsilon = epsilon;
    c.window = window;
    c.smoothing_sigma = coarse_smoothing;
    c.schedule = StageSchedule{coarse_lr, coarse_iters, coarse_patience, coarse_min_delta};
    return c;
}

DeformableConfig RegistrationConfig::deformable() const {
    DeformableConfig c;
    c.loss.smind = SMindConfig{search_radius, tau, sigma};
    c.loss.lambda = lambda;
    c.loss.levels = levels;
    c.schedule = StageSchedule{deform_lr, deform_iters, deform_patience, deform_min_delta};
    c.smoothing_sigma = deform_smoothing;
    c.displacement_scale = deform_displacement_scale;
    return c;
}

GridSpec RegistrationConfig::grid() const { return GridSpec{target_spacing, target_dims}; }

RegistrationConfig parse_config(const std::string &text) {
    RegistrationConfig cfg;
    std::map<std::string, const Field *> by_key;
    for (const Field &f : fields()) by_key[f.key] = &f;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = by_key.find(key);
        if (it == by_key.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second->read(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

std::string format_config(const RegistrationConfig &cfg) {
    std::string out;
    for (const Field &f : fields()) out += std::string(f.key) + " = " + f.write(cfg) + "\n";
    return out;
}

RegistrationConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void save_config(const RegistrationConfig &cfg, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config '" + path.string() + "'");
    out << format_config(cfg);
}

} // namespace smind
