#include "ppasim/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "ppasim/errors.hpp"

namespace ppasim::config {

namespace {

using Setter = std::function<void(Config&, const std::string&)>;
using Getter = std::function<std::string(const Config&)>;

struct Entry {
    std::string key;
    Setter set;
    Getter get;
};

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || text.empty()) {
        throw ConfigError("invalid value '" + text + "' for " + key);
    }
    return v;
}

template <typename T>
std::string format_number(T v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

// Builds an entry for a numeric field reached through `ref`.
template <typename T, typename Ref>
Entry num(std::string key, Ref ref) {
    Entry e;
    e.key = key;
    e.set = [key, ref](Config& c, const std::string& v) { ref(c) = parse_number<T>(key, v); };
    e.get = [ref](const Config& c) { return format_number<T>(ref(const_cast<Config&>(c))); };
    return e;
}

template <typename Ref>
Entry str(std::string key, Ref ref) {
    Entry e;
    e.key = key;
    e.set = [ref](Config& c, const std::string& v) { ref(c) = v; };
    e.get = [ref](const Config& c) { return ref(const_cast<Config&>(c)); };
    return e;
}

// Fields shared by dataset generation and tracking episodes.
template <typename T, typename RefA, typename RefB>
Entry shared(std::string key, RefA a, RefB b) {
    Entry e;
    e.key = key;
    e.set = [key, a, b](Config& c, const std::string& v) {
        const T x = parse_number<T>(key, v);
        a(c) = x;
        b(c) = x;
    };
    e.get = [a](const Config& c) { return format_number<T>(a(const_cast<Config&>(c))); };
    return e;
}

const std::vector<Entry>& table() {
    static const std::vector<Entry> entries = [] {
        std::vector<Entry> t;
        // dataset
        t.push_back(num<int>("dataset.n_train", [](Config& c) -> int& { return c.dataset.n_train; }));
        t.push_back(num<int>("dataset.n_test", [](Config& c) -> int& { return c.dataset.n_test; }));
        t.push_back(num<std::uint64_t>("dataset.seed", [](Config& c) -> std::uint64_t& { return c.dataset.seed; }));
        t.push_back(num<std::uint64_t>("dataset.jitter_seed",
                                       [](Config& c) -> std::uint64_t& { return c.dataset.jitter.seed; }));
        // world
        t.push_back(shared<std::uint64_t>(
            "world.texture_seed", [](Config& c) -> std::uint64_t& { return c.dataset.texture_seed; },
            [](Config& c) -> std::uint64_t& { return c.episode.texture_seed; }));
        t.push_back(shared<double>(
            "world.map_extent", [](Config& c) -> double& { return c.dataset.map_extent; },
            [](Config& c) -> double& { return c.episode.map_extent; }));
        t.push_back(shared<double>(
            "view.view_side", [](Config& c) -> double& { return c.dataset.view.view_side; },
            [](Config& c) -> double& { return c.episode.view.view_side; }));
        t.push_back(shared<double>(
            "jitter.sigma_trans", [](Config& c) -> double& { return c.dataset.jitter.sigma_trans; },
            [](Config& c) -> double& { return c.episode.jitter.sigma_trans; }));
        t.push_back(shared<double>(
            "jitter.sigma_rot", [](Config& c) -> double& { return c.dataset.jitter.sigma_rot; },
            [](Config& c) -> double& { return c.episode.jitter.sigma_rot; }));
        // noise
        t.push_back(num<double>("noise.sigma_read", [](Config& c) -> double& { return c.noise.sigma_read; }));
        t.push_back(num<double>("noise.sigma_op", [](Config& c) -> double& { return c.noise.sigma_op; }));
        t.push_back(num<std::uint64_t>("noise.seed", [](Config& c) -> std::uint64_t& { return c.noise.seed; }));
        // training
        t.push_back(num<int>("train.epochs", [](Config& c) -> int& { return c.train.epochs; }));
        t.push_back(num<int>("train.batch_size", [](Config& c) -> int& { return c.train.batch_size; }));
        t.push_back(num<double>("train.learning_rate", [](Config& c) -> double& { return c.train.learning_rate; }));
        t.push_back(num<double>("train.momentum", [](Config& c) -> double& { return c.train.momentum; }));
        t.push_back(num<std::uint64_t>("train.seed", [](Config& c) -> std::uint64_t& { return c.train.seed; }));
        t.push_back(
            num<double>("train.conv_noise_sigma", [](Config& c) -> double& { return c.train.conv_noise_sigma; }));
        t.push_back(
            num<int>("train.noise_warmup_epochs", [](Config& c) -> int& { return c.train.noise_warmup_epochs; }));
        // PID
        t.push_back(num<double>("pid.kp_x", [](Config& c) -> double& { return c.episode.gains.x.kp; }));
        t.push_back(num<double>("pid.ki_x", [](Config& c) -> double& { return c.episode.gains.x.ki; }));
        t.push_back(num<double>("pid.kd_x", [](Config& c) -> double& { return c.episode.gains.x.kd; }));
        t.push_back(num<double>("pid.kp_y", [](Config& c) -> double& { return c.episode.gains.y.kp; }));
        t.push_back(num<double>("pid.ki_y", [](Config& c) -> double& { return c.episode.gains.y.ki; }));
        t.push_back(num<double>("pid.kd_y", [](Config& c) -> double& { return c.episode.gains.y.kd; }));
        t.push_back(num<double>("pid.i_clamp", [](Config& c) -> double& { return c.episode.gains.i_clamp; }));
        t.push_back(num<double>("pid.v_max", [](Config& c) -> double& { return c.episode.gains.v_max; }));
        // trajectory
        {
            Entry e;
            e.key = "trajectory.kind";
            e.set = [](Config& c, const std::string& v) {
                if (v == "lissajous") {
                    c.episode.trajectory.kind = world::TrajectoryKind::Lissajous;
                } else if (v == "stationary") {
                    c.episode.trajectory.kind = world::TrajectoryKind::Stationary;
                } else {
                    throw ConfigError("trajectory.kind must be lissajous or stationary, got '" + v + "'");
                }
            };
            e.get = [](const Config& c) {
                return std::string(c.episode.trajectory.kind == world::TrajectoryKind::Lissajous ? "lissajous"
                                                                                                 : "stationary");
            };
            t.push_back(e);
        }
        t.push_back(num<double>("trajectory.center_x", [](Config& c) -> double& { return c.episode.trajectory.center.x; }));
        t.push_back(num<double>("trajectory.center_y", [](Config& c) -> double& { return c.episode.trajectory.center.y; }));
        t.push_back(num<double>("trajectory.amp_x", [](Config& c) -> double& { return c.episode.trajectory.amp_x; }));
        t.push_back(num<double>("trajectory.amp_y", [](Config& c) -> double& { return c.episode.trajectory.amp_y; }));
        t.push_back(num<double>("trajectory.cycles_x", [](Config& c) -> double& { return c.episode.trajectory.cycles_x; }));
        t.push_back(num<double>("trajectory.cycles_y", [](Config& c) -> double& { return c.episode.trajectory.cycles_y; }));
        t.push_back(num<double>("trajectory.phase_x", [](Config& c) -> double& { return c.episode.trajectory.phase_x; }));
        t.push_back(num<double>("trajectory.period_steps",
                                [](Config& c) -> double& { return c.episode.trajectory.period_steps; }));
        t.push_back(
            num<double>("trajectory.wobble_amp", [](Config& c) -> double& { return c.episode.trajectory.wobble_amp; }));
        t.push_back(num<std::uint64_t>("trajectory.seed",
                                       [](Config& c) -> std::uint64_t& { return c.episode.trajectory.seed; }));
        t.push_back(num<double>("trajectory.start_x", [](Config& c) -> double& { return c.episode.trajectory.start.x; }));
        t.push_back(num<double>("trajectory.start_y", [](Config& c) -> double& { return c.episode.trajectory.start.y; }));
        t.push_back(num<double>("trajectory.start_heading",
                                [](Config& c) -> double& { return c.episode.trajectory.start.heading; }));
        // tracking episode
        t.push_back(num<int>("track.steps", [](Config& c) -> int& { return c.episode.steps; }));
        {
            Entry e;
            e.key = "track.guidance";
            e.set = [](Config& c, const std::string& v) { c.guidance = tracker::parse_guidance(v); };
            e.get = [](const Config& c) { return tracker::to_string(c.guidance); };
            t.push_back(e);
        }
        t.push_back(num<std::uint64_t>("track.jitter_seed",
                                       [](Config& c) -> std::uint64_t& { return c.episode.jitter.seed; }));
        t.push_back(num<double>("track.drone_offset_x", [](Config& c) -> double& { return c.episode.drone_start_offset.x; }));
        t.push_back(num<double>("track.drone_offset_y", [](Config& c) -> double& { return c.episode.drone_start_offset.y; }));
        // bridge
        {
            Entry e;
            e.key = "bridge.address";
            e.set = [](Config& c, const std::string& v) { c.address = bridge::parse_address(v); };
            e.get = [](const Config& c) { return c.address.to_string(); };
            t.push_back(e);
        }
        t.push_back(num<int>("bridge.timeout_ms", [](Config& c) -> int& { return c.timeout_ms; }));
        // paths
        t.push_back(str("paths.data_dir", [](Config& c) -> std::string& { return c.data_dir; }));
        t.push_back(str("paths.model", [](Config& c) -> std::string& { return c.model_path; }));
        t.push_back(str("paths.metrics", [](Config& c) -> std::string& { return c.metrics_path; }));
        t.push_back(str("paths.track", [](Config& c) -> std::string& { return c.track_path; }));
        t.push_back(str("paths.latency", [](Config& c) -> std::string& { return c.latency_path; }));
        return t;
    }();
    return entries;
}

const Entry& find(const std::string& key) {
    for (const auto& e : table()) {
        if (e.key == key) return e;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config::Config() {
    dataset.jitter.seed = 5;
    episode.jitter.seed = 11;
    episode.texture_seed = dataset.texture_seed;
    train.dataset_path = data_dir;
}

void Config::set(const std::string& key, const std::string& value) { find(key).set(*this, trim(value)); }

std::string Config::get(const std::string& key) const { return find(key).get(*this); }

const std::vector<std::string>& Config::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& e : table()) out.push_back(e.key);
        return out;
    }();
    return k;
}

void Config::validate() const {
    if (dataset.n_train < 1) throw ConfigError("dataset.n_train must be >= 1");
    if (dataset.n_test < 1) throw ConfigError("dataset.n_test must be >= 1");
    if (!(dataset.map_extent > 0.0) || !std::isfinite(dataset.map_extent)) {
        throw ConfigError("world.map_extent must be finite and > 0");
    }
    if (!(dataset.view.view_side > 0.0) || !std::isfinite(dataset.view.view_side)) {
        throw ConfigError("view.view_side must be finite and > 0");
    }
    try {
        dataset.jitter.validate();
        noise.validate();
    } catch (const RangeError& e) {
        throw ConfigError(e.what());
    }
    train.validate();
    episode.gains.validate();
    if (episode.steps < 1) throw ConfigError("track.steps must be >= 1");
    const auto& tr = episode.trajectory;
    for (double v : {tr.center.x, tr.center.y, tr.amp_x, tr.amp_y, tr.cycles_x, tr.cycles_y, tr.phase_x, tr.wobble_amp,
                     tr.start.x, tr.start.y, tr.start.heading, episode.drone_start_offset.x,
                     episode.drone_start_offset.y}) {
        if (!std::isfinite(v)) throw ConfigError("trajectory and track parameters must be finite");
    }
    if (!(tr.period_steps > 0.0) || !std::isfinite(tr.period_steps)) {
        throw ConfigError("trajectory.period_steps must be finite and > 0");
    }
    if (timeout_ms < 1) throw ConfigError("bridge.timeout_ms must be >= 1");
    for (const auto* p : {&data_dir, &model_path, &metrics_path, &track_path, &latency_path}) {
        if (p->empty()) throw ConfigError("paths must not be empty");
    }
}

std::string env_name(const std::string& key) {
    std::string out = kEnvPrefix;
    for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return out;
}

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        (void)find(key);
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

Config resolve(const std::string& path, const std::map<std::string, std::string>& overrides) {
    Config c;
    if (!path.empty()) {
        for (const auto& [k, v] : read_config_file(path)) c.set(k, v);
    }
    for (const auto& key : Config::keys()) {
        if (const char* v = std::getenv(env_name(key).c_str())) c.set(key, v);
    }
    for (const auto& [k, v] : overrides) c.set(k, v);
    c.train.dataset_path = c.data_dir;
    c.validate();
    return c;
}

std::string dump(const Config& c) {
    std::string out;
    for (const auto& e : table()) out += e.key + " = " + e.get(c) + "\n";
    return out;
}

}  // namespace ppasim::config
