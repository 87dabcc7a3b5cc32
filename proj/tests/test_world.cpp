#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>

#include "ppasim/errors.hpp"
#include "ppasim/world.hpp"

using namespace ppasim;
using namespace ppasim::world;

namespace {

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
};

WorldState centred_world(double car_dx, double car_dy, double heading) {
    WorldState w;
    w.drone = {8.0, 8.0};
    w.car = {8.0 + car_dx, 8.0 + car_dy, heading};
    w.texture_seed = 7;
    return w;
}

// Centroid of every minimal-sum 5x5 window.
std::pair<double, double> darkest_window_centroid(const GrayImage& img) {
    long best = -1;
    double sx = 0, sy = 0;
    int n = 0;
    for (int cy = 2; cy < img.height - 2; ++cy) {
        for (int cx = 2; cx < img.width - 2; ++cx) {
            long sum = 0;
            for (int y = -2; y <= 2; ++y) {
                for (int x = -2; x <= 2; ++x) sum += img.at(cx + x, cy + y);
            }
            if (best < 0 || sum < best) {
                best = sum;
                sx = sy = 0;
                n = 0;
            }
            if (sum == best) {
                sx += cx;
                sy += cy;
                ++n;
            }
        }
    }
    return {sx / n, sy / n};
}

}  // namespace

TEST_CASE("derive_seed separates streams") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 100; ++s) seen.insert(derive_seed(1, s));
    CHECK(seen.size() == 100);
    CHECK(derive_seed(5, 2) == derive_seed(5, 2));
}

TEST_CASE("pose_to_label") {
    CHECK(pose_to_label({0.0, 0.0}, 8.0) == Label{4, 4});
    CHECK(pose_to_label({-4.0, -4.0}, 8.0) == Label{0, 0});
    CHECK(pose_to_label({3.999, -0.001}, 8.0) == Label{7, 3});
    CHECK_FALSE(pose_to_label({4.0, 0.0}, 8.0).has_value());
    CHECK_FALSE(pose_to_label({0.0, -4.0001}, 8.0).has_value());
    CHECK_THROWS_AS(pose_to_label({0.0, 0.0}, 0.0), RangeError);
}

TEST_CASE("camera jitter") {
    CameraJitter j{0.15, 0.03, 9};
    JitterStream a(j), b(j);
    for (int i = 0; i < 10; ++i) {
        const auto x = a.next(), y = b.next();
        CHECK(x.dx == y.dx);
        CHECK(x.dtheta == y.dtheta);
    }
    JitterStream zero(CameraJitter{0.0, 0.0, 9});
    const auto z = zero.next();
    CHECK(z.dx == 0.0);
    CHECK(z.dy == 0.0);
    CHECK(z.dtheta == 0.0);
    CHECK_THROWS(CameraJitter{-0.1, 0.0, 0}.validate());
}

TEST_CASE("floor texture") {
    const FloorTexture t(7);
    SUBCASE("deterministic in seed and position") {
        const FloorTexture u(7), v(8);
        int differ = 0;
        for (int i = 0; i < 200; ++i) {
            const double x = 0.173 * i, y = 16.0 - 0.071 * i;
            REQUIRE(t.sample(x, y) == u.sample(x, y));
            differ += t.sample(x, y) != v.sample(x, y);
        }
        CHECK(differ > 50);
    }
    SUBCASE("floor stays brighter than mid-gray and is not flat") {
        std::set<int> levels;
        for (double y = -2.0; y < 18.0; y += 0.05) {
            for (double x = -2.0; x < 18.0; x += 0.37) {
                const int v = t.sample(x, y);
                REQUIRE(v > 128);
                levels.insert(v);
            }
        }
        CHECK(levels.size() > 20);
    }
    SUBCASE("outside the cached raster") { CHECK(t.sample(100.0, -40.0) > 128); }
}

TEST_CASE("render") {
    SUBCASE("uniform floor without a car is constant") {
        auto w = centred_world(0, 0, 0);
        w.car.x = 100.0;
        const auto img = render(w, {}, FloorTexture::uniform(173));
        CHECK(img.width == 256);
        for (auto p : img.pixels) REQUIRE(p == 173);
    }
    SUBCASE("same inputs give identical bytes") {
        const auto w = centred_world(0.7, -1.2, 0.4);
        const JitterSample j{0.05, -0.1, 0.02};
        CHECK(render(w, j) == render(w, j));
    }
    SUBCASE("car at the view centre: darkest 5x5 window is centred on it") {
        const auto img = render(centred_world(0, 0, 0), {}, FloorTexture(7));
        const auto [cx, cy] = darkest_window_centroid(img);
        CHECK(std::abs(cx - 127.5) <= 1.0);
        CHECK(std::abs(cy - 127.5) <= 1.0);
    }
    SUBCASE("off-centre car: darkest window falls in the labelled cell") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> off(-3.4, 3.4), ang(0.0, 2 * std::numbers::pi);
        for (int trial = 0; trial < 10; ++trial) {
            const Vec2 o{off(rng), off(rng)};
            const auto img = render(centred_world(o.x, o.y, ang(rng)), {}, FloorTexture(7));
            const auto [cx, cy] = darkest_window_centroid(img);
            const auto label = pose_to_label(o, 8.0);
            REQUIRE(label.has_value());
            CHECK(static_cast<int>(cx / 32) == label->x);
            CHECK(static_cast<int>(cy / 32) == label->y);
        }
    }
    SUBCASE("locality: only pixels under either car pose change") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> off(-3.0, 3.0), step(-0.4, 0.4), ang(0.0, 6.28);
        const FloorTexture tex(7);
        const ViewConfig view;
        for (int trial = 0; trial < 10; ++trial) {
            const JitterSample j{0.1 * step(rng), 0.1 * step(rng), 0.05 * step(rng)};
            auto a = centred_world(off(rng), off(rng), ang(rng));
            auto b = a;
            b.car.x += step(rng);
            b.car.y += step(rng);
            b.car.heading += step(rng);
            const auto ia = render(a, j, tex), ib = render(b, j, tex);
            for (int row = 0; row < 256; ++row) {
                for (int col = 0; col < 256; ++col) {
                    if (ia.at(col, row) == ib.at(col, row)) continue;
                    const Vec2 p = pixel_to_world(a.drone, j, view, col, row);
                    REQUIRE((car_covers(a.car, p) || car_covers(b.car, p)));
                }
            }
        }
    }
}

TEST_CASE("downsample") {
    SUBCASE("constant") {
        const auto d = downsample(GrayImage(256, 256, 100));
        CHECK(d.width == 64);
        for (auto p : d.pixels) REQUIRE(p == 100);
    }
    SUBCASE("one bright block") {
        GrayImage img(256, 256, 0);
        for (int y = 8; y < 12; ++y) {
            for (int x = 20; x < 24; ++x) img.at(x, y) = 255;
        }
        const auto d = downsample(img);
        CHECK(d.at(5, 2) == 255);
        int lit = 0;
        for (auto p : d.pixels) lit += p != 0;
        CHECK(lit == 1);
    }
    SUBCASE("round half up") {
        GrayImage img(256, 256, 0);
        for (int x = 0; x < 4; ++x) img.at(x, 0) = 2;  // sum 8 over 16 pixels
        CHECK(downsample(img).at(0, 0) == 1);
        img.at(0, 0) = 1;  // sum 7
        CHECK(downsample(img).at(0, 0) == 0);
    }
    SUBCASE("random image against a naive average") {
        std::mt19937_64 rng(1);
        GrayImage img(256, 256);
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
        const auto d = downsample(img);
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 64; ++x) {
                double s = 0;
                for (int k = 0; k < 16; ++k) s += img.at(4 * x + k % 4, 4 * y + k / 4);
                REQUIRE(d.at(x, y) == static_cast<int>(std::floor(s / 16.0 + 0.5)));
            }
        }
    }
    SUBCASE("wrong shape") { CHECK_THROWS_AS(downsample(GrayImage(128, 128)), ShapeError); }
}

TEST_CASE("datasets") {
    DatasetSpec spec;
    spec.n_train = 10;
    spec.n_test = 4;
    SUBCASE("counts and label ranges") {
        const auto [tr, te] = generate_dataset(spec);
        CHECK(tr.size() == 10);
        CHECK(te.size() == 4);
        for (const auto& f : tr) {
            CHECK(f.label_x < 8);
            CHECK(f.label_y < 8);
            CHECK(f.image.width == 64);
        }
    }
    SUBCASE("same seeds give byte-identical files; train and test differ") {
        TempDir a("ppasim_ds_a"), b("ppasim_ds_b");
        write_dataset_files(a.str(), generate_dataset(spec));
        write_dataset_files(b.str(), generate_dataset(spec));
        const auto ta = read_bytes(train_file(a.str()));
        CHECK(ta.size() == 8 + 10 * (4096 + 2));
        CHECK(ta == read_bytes(train_file(b.str())));
        CHECK(read_bytes(test_file(a.str())) == read_bytes(test_file(b.str())));
        const auto parsed = load_dataset(train_file(a.str()));
        CHECK(parsed == generate_dataset(spec).first);
        CHECK_FALSE(parsed[0] == load_dataset(test_file(a.str()))[0]);
    }
    SUBCASE("counts must be positive") {
        spec.n_train = 0;
        CHECK_THROWS_AS(generate_dataset(spec), ConfigError);
    }
}

TEST_CASE("LOC1 parsing errors") {
    Dataset d(2);
    for (auto& f : d) f.image = GrayImage(64, 64, 9);
    d[1].label_x = 7;
    auto bytes = serialize_dataset(d);
    CHECK(parse_dataset(bytes) == d);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(parse_dataset(bad), IoError);
    CHECK_THROWS_AS(parse_dataset(std::span(bytes).first(bytes.size() - 1)), IoError);
    bad = bytes;
    bad.back() = 8;
    CHECK_THROWS_AS(parse_dataset(bad), IoError);
    d[0].label_y = 9;
    CHECK_THROWS_AS(serialize_dataset(d), RangeError);
    CHECK_THROWS_AS(load_dataset("/nonexistent/x.loc1"), IoError);
}

TEST_CASE("label histogram covers every cell") {
    DatasetSpec spec;
    spec.n_train = 8000;
    spec.n_test = 1;
    const auto tr = generate_dataset(spec).first;
    std::array<int, 64> hist{};
    for (const auto& f : tr) ++hist[f.label_y * 8 + f.label_x];
    for (int c = 0; c < 64; ++c) {
        INFO("cell " << c);
        CHECK(hist[c] > 0);
    }
}

TEST_CASE("trajectory") {
    TrajectorySpec spec;
    const Trajectory t(spec);
    SUBCASE("matches the closed form") {
        for (std::int64_t k : {0, 1, 17, 250, 499}) {
            double x = spec.center.x + spec.amp_x * std::sin(2 * std::numbers::pi * spec.cycles_x * k / spec.period_steps + spec.phase_x);
            double y = spec.center.y + spec.amp_y * std::sin(2 * std::numbers::pi * spec.cycles_y * k / spec.period_steps);
            for (const auto& w : t.wobble()) {
                x += w.amp_x * std::sin(w.freq * k + w.phase_x);
                y += w.amp_y * std::sin(w.freq * k + w.phase_y);
            }
            const auto p = t.pose(k);
            CHECK(p.x == doctest::Approx(x).epsilon(1e-12));
            CHECK(p.y == doctest::Approx(y).epsilon(1e-12));
        }
    }
    SUBCASE("heading follows the direction of travel") {
        const auto a = t.pose(100), b = t.pose(101);
        const double dir = std::atan2(b.y - a.y, b.x - a.x);
        CHECK(std::abs(std::remainder(a.heading - dir, 2 * std::numbers::pi)) < 0.1);
    }
    SUBCASE("stays on the map") {
        for (int k = 0; k < 2000; ++k) {
            const auto p = t.pose(k);
            REQUIRE((p.x >= 0.0 && p.x < 16.0 && p.y >= 0.0 && p.y < 16.0));
        }
    }
    SUBCASE("seed changes only the wobble") {
        auto other = spec;
        other.seed = 99;
        CHECK_FALSE(Trajectory(other).pose(10) == t.pose(10));
        other.wobble_amp = 0.0;
        auto plain = spec;
        plain.wobble_amp = 0.0;
        CHECK(Trajectory(other).pose(10) == Trajectory(plain).pose(10));
    }
}

TEST_CASE("world step") {
    TrajectorySpec spec;
    spec.kind = TrajectoryKind::Stationary;
    spec.start = {5.0, 6.0, 0.3};
    const Trajectory t(spec);
    WorldState w;
    w.car = spec.start;
    w.drone = {3.0, 3.0};
    SUBCASE("zero velocity changes only the time step") {
        auto n = step(w, {0.0, 0.0}, t);
        CHECK(n.time_step == 1);
        n.time_step = 0;
        CHECK(n == w);
    }
    SUBCASE("velocity is clamped to v_max") {
        const auto n = step(w, {10.0, 0.0}, t);
        CHECK(n.drone.x - w.drone.x == doctest::Approx(0.25));
        CHECK(n.drone.y == w.drone.y);
    }
    SUBCASE("drone stays inside the map") {
        w.drone = {15.9, 0.1};
        const auto n = step(w, {0.2, -0.2}, t);
        CHECK(n.drone.x < 16.0);
        CHECK(n.drone.y == 0.0);
    }
    SUBCASE("car follows the trajectory") {
        const Trajectory moving(TrajectorySpec{});
        WorldState m;
        m.car = moving.pose(0);
        for (int k = 1; k <= 5; ++k) {
            m = step(m, {}, moving);
            CHECK(m.car == moving.pose(k));
        }
    }
}
