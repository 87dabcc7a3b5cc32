#include "ppasim/world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ppasim/errors.hpp"

namespace ppasim::world {

namespace {

constexpr double kRasterOrigin = -8.0;  // metres
constexpr double kRasterSide = 32.0;    // metres
constexpr int kRasterRes = 32;          // cells per metre
constexpr int kRasterCells = static_cast<int>(kRasterSide) * kRasterRes;

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }
double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void CameraJitter::validate() const {
    if (!(sigma_trans >= 0.0) || !(sigma_rot >= 0.0) || !std::isfinite(sigma_trans) ||
        !std::isfinite(sigma_rot)) {
        throw RangeError("camera jitter sigmas must be finite and >= 0");
    }
}

JitterStream::JitterStream(const CameraJitter& jitter) : jitter_(jitter), rng_(jitter.seed) {
    jitter_.validate();
}

JitterSample JitterStream::next() {
    JitterSample s;
    s.dx = jitter_.sigma_trans * unit_(rng_);
    s.dy = jitter_.sigma_trans * unit_(rng_);
    s.dtheta = jitter_.sigma_rot * unit_(rng_);
    return s;
}

FloorTexture::FloorTexture(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    for (int i = 0; i < 256; ++i) {
        lattice_[i] = unit(rng);
        perm_[i] = static_cast<std::uint8_t>(i);
    }
    for (int k = 255; k > 0; --k) {
        const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(k + 1));
        std::swap(perm_[k], perm_[j]);
    }
    for (int i = 0; i < 256; ++i) perm_[256 + i] = perm_[i];

    raster_.resize(static_cast<std::size_t>(kRasterCells) * kRasterCells);
    for (int r = 0; r < kRasterCells; ++r) {
        for (int c = 0; c < kRasterCells; ++c) {
            raster_[static_cast<std::size_t>(r) * kRasterCells + c] =
                evaluate(kRasterOrigin + (c + 0.5) / kRasterRes, kRasterOrigin + (r + 0.5) / kRasterRes);
        }
    }
}

FloorTexture FloorTexture::uniform(std::uint8_t level) {
    FloorTexture t;
    t.uniform_ = true;
    t.level_ = level;
    return t;
}

double FloorTexture::value_noise(double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const int xi = static_cast<int>(static_cast<long long>(fx) & 255);
    const int yi = static_cast<int>(static_cast<long long>(fy) & 255);
    const int x1 = (xi + 1) & 255, y1 = (yi + 1) & 255;
    const double sx = smoothstep(x - fx), sy = smoothstep(y - fy);

    const double c00 = lattice_[perm_[perm_[xi] + yi]];
    const double c10 = lattice_[perm_[perm_[x1] + yi]];
    const double c01 = lattice_[perm_[perm_[xi] + y1]];
    const double c11 = lattice_[perm_[perm_[x1] + y1]];
    return lerp(lerp(c00, c10, sx), lerp(c01, c11, sx), sy);
}

double FloorTexture::fbm(double x, double y, int octaves, double base_freq) const {
    double sum = 0.0, norm_sum = 0.0, amp = 1.0, freq = base_freq;
    for (int o = 0; o < octaves; ++o) {
        // Offset each octave so lattice points do not line up.
        sum += amp * value_noise(x * freq + 17.0 * o, y * freq + 31.0 * o);
        norm_sum += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    return sum / norm_sum;
}

std::uint8_t FloorTexture::evaluate(double wx, double wy) const {
    // Coarse blobs quantized to two tones, fine grain on top. Both tones stay
    // above mid-gray so the grain reads as texture rather than as an object.
    const double coarse = fbm(wx, wy, 3, 0.35);
    const double grain = fbm(wx + 101.0, wy - 57.0, 2, 2.5);
    const double tone = coarse > 0.5 ? 205.0 : 158.0;
    return static_cast<std::uint8_t>(std::clamp(std::lround(tone + (grain - 0.5) * 44.0), 0L, 255L));
}

std::uint8_t FloorTexture::sample(double wx, double wy) const {
    if (uniform_) return level_;
    const double cx = std::floor((wx - kRasterOrigin) * kRasterRes);
    const double cy = std::floor((wy - kRasterOrigin) * kRasterRes);
    if (cx >= 0 && cy >= 0 && cx < kRasterCells && cy < kRasterCells) {
        return raster_[static_cast<std::size_t>(cy) * kRasterCells + static_cast<std::size_t>(cx)];
    }
    return evaluate(kRasterOrigin + (cx + 0.5) / kRasterRes, kRasterOrigin + (cy + 0.5) / kRasterRes);
}

Vec2 pixel_to_world(const Vec2& view_center, const JitterSample& jitter, const ViewConfig& view,
                    double col, double row) {
    const double u = ((col + 0.5) / view.sensor_size - 0.5) * view.view_side;
    const double v = ((row + 0.5) / view.sensor_size - 0.5) * view.view_side;
    const double c = std::cos(jitter.dtheta), s = std::sin(jitter.dtheta);
    return {view_center.x + jitter.dx + c * u - s * v, view_center.y + jitter.dy + s * u + c * v};
}

bool car_covers(const CarPose& car, Vec2 p) {
    const double dx = p.x - car.x, dy = p.y - car.y;
    const double c = std::cos(car.heading), s = std::sin(car.heading);
    const double along = c * dx + s * dy;
    const double across = -s * dx + c * dy;
    return std::abs(along) <= kCarLength / 2 && std::abs(across) <= kCarWidth / 2;
}

GrayImage render(const WorldState& world, const JitterSample& jitter, const FloorTexture& texture,
                 const ViewConfig& view) {
    GrayImage img(view.sensor_size, view.sensor_size);
    for (int row = 0; row < view.sensor_size; ++row) {
        for (int col = 0; col < view.sensor_size; ++col) {
            const Vec2 p = pixel_to_world(world.drone, jitter, view, col, row);
            img.at(col, row) = car_covers(world.car, p) ? kCarGray : texture.sample(p.x, p.y);
        }
    }
    return img;
}

GrayImage render(const WorldState& world, const JitterSample& jitter, const ViewConfig& view) {
    return render(world, jitter, FloorTexture(world.texture_seed), view);
}

GrayImage downsample(const GrayImage& img) {
    constexpr int f = 4;
    if (img.width != 256 || img.height != 256) {
        throw ShapeError("downsample: expected 256x256, got " + std::to_string(img.width) + "x" +
                         std::to_string(img.height));
    }
    GrayImage out(img.width / f, img.height / f);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            int sum = 0;
            for (int dy = 0; dy < f; ++dy) {
                for (int dx = 0; dx < f; ++dx) sum += img.at(x * f + dx, y * f + dy);
            }
            out.at(x, y) = static_cast<std::uint8_t>((sum + f * f / 2) / (f * f));
        }
    }
    return out;
}

std::optional<Label> pose_to_label(Vec2 offset, double view_side) {
    if (!(view_side > 0.0)) throw RangeError("view_side must be positive");
    const double bin = view_side / kLabelBins;
    const double bx = std::floor((offset.x + view_side / 2) / bin);
    const double by = std::floor((offset.y + view_side / 2) / bin);
    if (bx < 0 || bx >= kLabelBins || by < 0 || by >= kLabelBins) return std::nullopt;
    return Label{static_cast<int>(bx), static_cast<int>(by)};
}

Vec2 view_offset(const WorldState& world, const JitterSample& jitter) {
    const double dx = world.car.x - (world.drone.x + jitter.dx);
    const double dy = world.car.y - (world.drone.y + jitter.dy);
    const double c = std::cos(jitter.dtheta), s = std::sin(jitter.dtheta);
    return {c * dx + s * dy, -s * dx + c * dy};
}

LabeledFrame sample_frame(std::mt19937_64& rng, const FloorTexture& texture, const DatasetSpec& spec,
                          JitterStream& jitter) {
    const double half = spec.view.view_side / 2;
    std::uniform_real_distribution<double> in_map(0.0, spec.map_extent);
    std::uniform_real_distribution<double> in_view(-half, half);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);

    WorldState w;
    w.map_extent = spec.map_extent;
    w.texture_seed = spec.texture_seed;
    w.drone.x = in_map(rng);
    w.drone.y = in_map(rng);
    const Vec2 offset{in_view(rng), in_view(rng)};
    const double heading = angle(rng);
    const JitterSample j = jitter.next();

    const double c = std::cos(j.dtheta), s = std::sin(j.dtheta);
    w.car = {w.drone.x + j.dx + c * offset.x - s * offset.y, w.drone.y + j.dy + s * offset.x + c * offset.y,
             heading};

    const auto label = pose_to_label(offset, spec.view.view_side);
    if (!label) throw RangeError("sampled car offset fell outside the view");  // unreachable by construction

    LabeledFrame f;
    f.image = downsample(render(w, j, texture, spec.view));
    f.label_x = static_cast<std::uint8_t>(label->x);
    f.label_y = static_cast<std::uint8_t>(label->y);
    return f;
}

std::pair<Dataset, Dataset> generate_dataset(const DatasetSpec& spec) {
    if (spec.n_train < 1 || spec.n_test < 1) throw ConfigError("dataset counts must be >= 1");
    const FloorTexture texture(spec.texture_seed);

    auto make = [&](int count, std::uint64_t stream) {
        std::mt19937_64 rng(derive_seed(spec.seed, stream));
        CameraJitter cj = spec.jitter;
        cj.seed = derive_seed(spec.jitter.seed ^ spec.seed, stream);
        JitterStream jitter(cj);
        Dataset d;
        d.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) d.push_back(sample_frame(rng, texture, spec, jitter));
        return d;
    };
    return {make(spec.n_train, 0), make(spec.n_test, 1)};
}

Trajectory::Trajectory(const TrajectorySpec& spec) : spec_(spec) {
    if (!(spec.period_steps > 0.0)) throw ConfigError("trajectory period must be positive");
    if (spec.wobble_amp < 0.0) throw ConfigError("trajectory wobble amplitude must be >= 0");
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    constexpr int kTerms = 2;
    for (int j = 0; j < kTerms; ++j) {
        WobbleTerm t{};
        // Split the amplitude across terms; frequencies stay below one cycle
        // per 100 steps.
        t.amp_x = spec.wobble_amp / kTerms * (0.5 + 0.5 * unit(rng));
        t.amp_y = spec.wobble_amp / kTerms * (0.5 + 0.5 * unit(rng));
        t.freq = 2.0 * std::numbers::pi * (0.5 + 4.5 * unit(rng)) / spec.period_steps;
        t.phase_x = 2.0 * std::numbers::pi * unit(rng);
        t.phase_y = 2.0 * std::numbers::pi * unit(rng);
        wobble_.push_back(t);
    }
}

Vec2 Trajectory::position(double k) const {
    const double wx = 2.0 * std::numbers::pi * spec_.cycles_x / spec_.period_steps;
    const double wy = 2.0 * std::numbers::pi * spec_.cycles_y / spec_.period_steps;
    Vec2 p{spec_.center.x + spec_.amp_x * std::sin(wx * k + spec_.phase_x),
           spec_.center.y + spec_.amp_y * std::sin(wy * k)};
    for (const auto& t : wobble_) {
        p.x += t.amp_x * std::sin(t.freq * k + t.phase_x);
        p.y += t.amp_y * std::sin(t.freq * k + t.phase_y);
    }
    return p;
}

Vec2 Trajectory::velocity(double k) const {
    const double wx = 2.0 * std::numbers::pi * spec_.cycles_x / spec_.period_steps;
    const double wy = 2.0 * std::numbers::pi * spec_.cycles_y / spec_.period_steps;
    Vec2 v{spec_.amp_x * wx * std::cos(wx * k + spec_.phase_x), spec_.amp_y * wy * std::cos(wy * k)};
    for (const auto& t : wobble_) {
        v.x += t.amp_x * t.freq * std::cos(t.freq * k + t.phase_x);
        v.y += t.amp_y * t.freq * std::cos(t.freq * k + t.phase_y);
    }
    return v;
}

CarPose Trajectory::pose(std::int64_t step) const {
    if (spec_.kind == TrajectoryKind::Stationary) return spec_.start;
    const auto k = static_cast<double>(step);
    const Vec2 p = position(k);
    const Vec2 v = velocity(k);
    const double heading = norm(v) > 1e-12 ? std::atan2(v.y, v.x) : 0.0;
    return {p.x, p.y, heading};
}

WorldState step(const WorldState& world, Vec2 drone_velocity, const Trajectory& trajectory, double v_max) {
    if (!(v_max > 0.0)) throw RangeError("v_max must be positive");
    Vec2 v = drone_velocity;
    const double speed = norm(v);
    if (speed > v_max) v = v * (v_max / speed);

    WorldState next = world;
    const double hi = std::nextafter(world.map_extent, 0.0);
    next.drone.x = std::clamp(world.drone.x + v.x, 0.0, hi);
    next.drone.y = std::clamp(world.drone.y + v.y, 0.0, hi);
    next.time_step = world.time_step + 1;
    next.car = trajectory.pose(next.time_step);
    return next;
}

}  // namespace ppasim::world
