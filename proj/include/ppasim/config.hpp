#pragma once

// Resolved run configuration. Values come from, in increasing precedence:
// built-in defaults, a key=value file, PPASIM_* environment variables, and
// command-line overrides.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ppasim/bridge.hpp"
#include "ppasim/ppa.hpp"
#include "ppasim/tracker.hpp"
#include "ppasim/trainer.hpp"
#include "ppasim/world.hpp"

namespace ppasim::config {

inline constexpr const char* kEnvPrefix = "PPASIM_";

struct Config {
    world::DatasetSpec dataset;
    train::TrainConfig train;
    ppa::NoiseModel noise;
    tracker::EpisodeConfig episode;
    tracker::Guidance guidance = tracker::Guidance::Reference;
    bridge::Address address;
    int timeout_ms = 2000;

    std::string data_dir = "data";
    std::string model_path = "model.bnn";
    std::string metrics_path = "metrics.csv";
    std::string track_path = "track.csv";
    std::string latency_path = "latency.csv";

    Config();

    // Throws ConfigError for an unknown key or an unparsable value.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    void validate() const;

    static const std::vector<std::string>& keys();
};

// "train.learning_rate" -> "PPASIM_TRAIN_LEARNING_RATE"
std::string env_name(const std::string& key);

// Parses key=value lines; '#' starts a comment. Throws ConfigError on
// malformed lines or unknown keys, IoError if the file cannot be read.
std::map<std::string, std::string> read_config_file(const std::string& path);
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin = "<text>");

// Applies file values (if `path` is non-empty), then environment overrides,
// then `overrides`, and validates the result.
Config resolve(const std::string& path, const std::map<std::string, std::string>& overrides);

// One "key = value" line per key, in a fixed order; re-parsable by
// parse_config_text.
std::string dump(const Config& c);

}  // namespace ppasim::config
