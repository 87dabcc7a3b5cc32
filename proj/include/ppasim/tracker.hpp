#pragma once

// Closed-loop tracking: predictions become world positions, a PID controller
// steers the drone toward them, and runs are logged and compared.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ppasim/bnn.hpp"
#include "ppasim/bridge.hpp"
#include "ppasim/ppa.hpp"
#include "ppasim/world.hpp"

namespace ppasim::tracker {

using world::Vec2;

struct AxisGains {
    double kp = 0.3;
    double ki = 0.02;
    double kd = 0.1;
};

struct PidGains {
    AxisGains x;
    AxisGains y;
    double i_clamp = 2.0;
    double v_max = 0.25;  // m/step

    static PidGains uniform(double kp, double ki, double kd);
    void validate() const;
};

struct PidState {
    std::array<double, 2> integral{};
    std::array<double, 2> prev_error{};
};

// Per axis: v = kp e + ki clamp(sum e, +-i_clamp) + kd (e - e_prev); the
// command vector is then scaled down to at most v_max.
Vec2 pid_step(const PidGains& gains, Vec2 error, PidState& state);

// Centre of bin (label_x, label_y) in world coordinates, taking the drone
// position as the view centre.
Vec2 label_to_position(int label_x, int label_y, Vec2 drone, double view_side);

enum class Guidance { Ppa, Reference, Groundtruth };

std::string to_string(Guidance g);
Guidance parse_guidance(const std::string& text);

class Predictor {
public:
    virtual ~Predictor() = default;
    virtual bnn::PredictionDistribution predict(std::uint32_t frame_id, const GrayImage& frame) = 0;
};

class ReferencePredictor : public Predictor {
public:
    explicit ReferencePredictor(bnn::BnnModel model) : model_(std::move(model)) {}
    bnn::PredictionDistribution predict(std::uint32_t, const GrayImage& frame) override;

private:
    bnn::BnnModel model_;
};

// Emulated array in-process. The noise stream persists across frames.
class PpaPredictor : public Predictor {
public:
    PpaPredictor(bnn::BnnModel model, const ppa::NoiseModel& noise) : model_(std::move(model)), noise_(noise) {}
    bnn::PredictionDistribution predict(std::uint32_t, const GrayImage& frame) override;

private:
    bnn::BnnModel model_;
    ppa::NoiseStream noise_;
};

// Forwards each frame to a vision host over the bridge.
class RemotePredictor : public Predictor {
public:
    explicit RemotePredictor(bridge::HostConnection& connection) : connection_(connection) {}
    bnn::PredictionDistribution predict(std::uint32_t frame_id, const GrayImage& frame) override;

private:
    bridge::HostConnection& connection_;
};

struct EpisodeConfig {
    world::TrajectorySpec trajectory;
    world::CameraJitter jitter;
    world::ViewConfig view;
    PidGains gains;
    double map_extent = 16.0;
    std::uint64_t texture_seed = 7;
    int steps = 500;
    Vec2 drone_start_offset;  // relative to the car's starting position
};

struct TrackRow {
    std::int64_t step = 0;
    Vec2 car;
    Vec2 drone;
    int label_x = -1;  // -1: no label (groundtruth guidance with the car out of view)
    int label_y = -1;
    Vec2 predicted;
    double error_m = 0.0;  // |drone - car|
    bool out_of_view = false;

    bool operator==(const TrackRow&) const = default;
};

struct TrackRecord {
    std::vector<TrackRow> rows;
    bool aborted = false;
    std::string abort_reason;
};

// Groundtruth guidance ignores `predictor` and may pass nullptr. A failed
// prediction aborts the episode and returns the partial record.
TrackRecord run_episode(const EpisodeConfig& config, Guidance guidance, Predictor* predictor);

double mean_error(const TrackRecord& record, std::int64_t from_step = 0);

std::string track_csv(const TrackRecord& record);
void write_track_csv(const std::string& path, const TrackRecord& record);
TrackRecord read_track_csv(const std::string& path);

struct RunComparison {
    double mean_error_a = 0.0;
    double mean_error_b = 0.0;
    double rmse = 0.0;     // between the two drone paths
    double max_dev = 0.0;  // largest drone-path separation
    std::size_t steps = 0;
};

RunComparison compare_runs(const TrackRecord& a, const TrackRecord& b);
std::string comparison_json(const RunComparison& c);

}  // namespace ppasim::tracker
