#pragma once

// Desk-scale world simulator: textured floor, a car, and a drone carrying a
// downward camera whose view is rendered orthographically.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ppasim/image.hpp"

namespace ppasim::world {

inline constexpr int kLabelBins = 8;
inline constexpr double kCarLength = 0.9;
inline constexpr double kCarWidth = 0.5;
inline constexpr std::uint8_t kCarGray = 30;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Vec2&) const = default;
};

double norm(Vec2 v);

// Independent seed for sub-stream `stream` of a base seed (splitmix64 mix).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct CarPose {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;  // radians, 0 along +x

    bool operator==(const CarPose&) const = default;
};

struct WorldState {
    CarPose car;
    Vec2 drone;
    double map_extent = 16.0;
    std::uint64_t texture_seed = 0;
    std::int64_t time_step = 0;

    bool operator==(const WorldState&) const = default;
};

struct ViewConfig {
    double view_side = 8.0;  // metres imaged by the camera
    int sensor_size = 256;   // rendered pixels per side
};

struct CameraJitter {
    double sigma_trans = 0.15;
    double sigma_rot = 0.03;
    std::uint64_t seed = 0;

    void validate() const;
};

// One realization of camera-pose noise: the view centre moves by (dx, dy) and
// the view rotates by dtheta about it.
struct JitterSample {
    double dx = 0.0;
    double dy = 0.0;
    double dtheta = 0.0;
};

class JitterStream {
public:
    explicit JitterStream(const CameraJitter& jitter);
    JitterSample next();

private:
    CameraJitter jitter_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> unit_{0.0, 1.0};
};

// Multi-octave value noise over world coordinates, quantized to two gray
// tones with fine variation on top. Deterministic in the seed.
class FloorTexture {
public:
    explicit FloorTexture(std::uint64_t seed);
    static FloorTexture uniform(std::uint8_t level);

    std::uint8_t sample(double wx, double wy) const;

private:
    FloorTexture() = default;
    double value_noise(double x, double y) const;
    double fbm(double x, double y, int octaves, double base_freq) const;
    std::uint8_t evaluate(double wx, double wy) const;

    bool uniform_ = false;
    std::uint8_t level_ = 0;
    std::array<float, 256> lattice_{};
    std::array<std::uint8_t, 512> perm_{};
    // Pre-evaluated cells covering the map plus a margin; lookups outside
    // fall back to direct evaluation.
    std::vector<std::uint8_t> raster_;
};

// World position seen by sensor pixel (col, row) under the given jitter.
Vec2 pixel_to_world(const Vec2& view_center, const JitterSample& jitter, const ViewConfig& view,
                    double col, double row);

bool car_covers(const CarPose& car, Vec2 p);

GrayImage render(const WorldState& world, const JitterSample& jitter, const FloorTexture& texture,
                 const ViewConfig& view = {});
GrayImage render(const WorldState& world, const JitterSample& jitter, const ViewConfig& view = {});

// 4x4 box average with round-half-up.
GrayImage downsample(const GrayImage& img);

struct Label {
    int x = 0;
    int y = 0;
    bool operator==(const Label&) const = default;
};

// Half-open bins: floor((offset + side/2) / (side/8)); empty if outside 0..7.
std::optional<Label> pose_to_label(Vec2 offset, double view_side);

// Car offset expressed in the (jittered) camera frame.
Vec2 view_offset(const WorldState& world, const JitterSample& jitter);

struct LabeledFrame {
    GrayImage image;  // 64x64
    std::uint8_t label_x = 0;
    std::uint8_t label_y = 0;

    bool operator==(const LabeledFrame&) const = default;
};

using Dataset = std::vector<LabeledFrame>;

// LOC1 container; layout documented in docs/FORMATS.md.
std::vector<std::uint8_t> serialize_dataset(const Dataset& data);
Dataset parse_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

struct DatasetSpec {
    int n_train = 8000;
    int n_test = 1600;
    std::uint64_t seed = 1;
    std::uint64_t texture_seed = 7;
    CameraJitter jitter;
    ViewConfig view;
    double map_extent = 16.0;
};

// Samples one labeled frame. Draws from rng in a fixed order.
LabeledFrame sample_frame(std::mt19937_64& rng, const FloorTexture& texture, const DatasetSpec& spec,
                          JitterStream& jitter);

// Train and test sets come from disjoint seed streams.
std::pair<Dataset, Dataset> generate_dataset(const DatasetSpec& spec);
// Writes <dir>/train.loc1 and <dir>/test.loc1.
void write_dataset_files(const std::string& dir, const std::pair<Dataset, Dataset>& sets);

inline std::string train_file(const std::string& dir) { return dir + "/train.loc1"; }
inline std::string test_file(const std::string& dir) { return dir + "/test.loc1"; }

enum class TrajectoryKind { Stationary, Lissajous };

// Two-term Lissajous around `center` plus a seeded low-frequency wobble:
//   x(k) = cx + ax sin(2 pi fx k / period + phase_x) + sum_j px_j sin(w_j k + psi_j)
//   y(k) = cy + ay sin(2 pi fy k / period)           + sum_j py_j sin(w_j k + phi_j)
struct TrajectorySpec {
    TrajectoryKind kind = TrajectoryKind::Lissajous;
    Vec2 center{8.0, 8.0};
    double amp_x = 4.0;
    double amp_y = 3.0;
    double cycles_x = 2.0;
    double cycles_y = 3.0;
    double phase_x = 0.5;
    double period_steps = 500.0;
    double wobble_amp = 0.4;
    std::uint64_t seed = 3;
    CarPose start;  // used by Stationary
};

struct WobbleTerm {
    double amp_x, freq, phase_x;
    double amp_y, phase_y;
};

class Trajectory {
public:
    explicit Trajectory(const TrajectorySpec& spec);

    CarPose pose(std::int64_t step) const;
    const TrajectorySpec& spec() const { return spec_; }
    const std::vector<WobbleTerm>& wobble() const { return wobble_; }

private:
    Vec2 position(double k) const;
    Vec2 velocity(double k) const;

    TrajectorySpec spec_;
    std::vector<WobbleTerm> wobble_;
};

// Advances one step: the car moves along the trajectory, the drone integrates
// the commanded velocity (magnitude clamped to v_max) and stays inside the map.
WorldState step(const WorldState& world, Vec2 drone_velocity, const Trajectory& trajectory,
                double v_max = 0.25);

}  // namespace ppasim::world
