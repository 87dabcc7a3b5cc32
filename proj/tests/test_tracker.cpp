#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include "ppasim/errors.hpp"
#include "ppasim/tracker.hpp"

using namespace ppasim;
using namespace ppasim::tracker;

namespace {

EpisodeConfig stationary_episode(Vec2 offset, int steps) {
    EpisodeConfig c;
    c.trajectory.kind = world::TrajectoryKind::Stationary;
    c.trajectory.start = {8.0, 8.0, 0.0};
    c.jitter.sigma_trans = 0.0;
    c.jitter.sigma_rot = 0.0;
    c.drone_start_offset = offset;
    c.steps = steps;
    return c;
}

// Scalar PID recurrence written out directly, without the vector clamp.
struct AxisOracle {
    double integral = 0.0, prev = 0.0;
    double step(const AxisGains& g, double i_clamp, double e) {
        integral += e;
        if (integral > i_clamp) integral = i_clamp;
        if (integral < -i_clamp) integral = -i_clamp;
        const double v = g.kp * e + g.ki * integral + g.kd * (e - prev);
        prev = e;
        return v;
    }
};

std::string temp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("label to position") {
    const Vec2 drone{10.0, 6.0};
    const auto centre = label_to_position(4, 4, drone, 8.0);
    CHECK(centre.x == doctest::Approx(10.5));
    CHECK(centre.y == doctest::Approx(6.5));
    const auto corner = label_to_position(0, 0, drone, 8.0);
    CHECK(corner.x == doctest::Approx(6.5));
    CHECK(corner.y == doctest::Approx(2.5));
    CHECK_THROWS_AS(label_to_position(8, 0, drone, 8.0), RangeError);
    CHECK_THROWS_AS(label_to_position(0, -1, drone, 8.0), RangeError);

    SUBCASE("bin centres map back to their own label") {
        for (int lx = 0; lx < 8; ++lx) {
            for (int ly = 0; ly < 8; ++ly) {
                const auto p = label_to_position(lx, ly, drone, 8.0);
                const auto back = world::pose_to_label(p - drone, 8.0);
                REQUIRE(back.has_value());
                CHECK(back->x == lx);
                CHECK(back->y == ly);
            }
        }
    }
}

TEST_CASE("pid step") {
    PidGains g;
    g.v_max = 100.0;
    PidState s;
    const auto v = pid_step(g, {1.0, 0.0}, s);
    CHECK(v.x == doctest::Approx(0.3 + 0.02 + 0.1));
    CHECK(v.y == 0.0);
    CHECK(s.integral[0] == 1.0);
    CHECK(s.prev_error[0] == 1.0);

    SUBCASE("proportional only") {
        auto p = PidGains::uniform(0.5, 0.0, 0.0);
        p.v_max = 1.0;
        PidState t;
        const auto w = pid_step(p, {1.0, 0.0}, t);
        CHECK(w.x == 0.5);
        CHECK(w.y == 0.0);
    }
    SUBCASE("speed clamp keeps the direction") {
        PidGains c, open;
        open.v_max = 1e9;
        PidState t, u;
        const auto w = pid_step(c, {3.0, 4.0}, t);
        const auto raw = pid_step(open, {3.0, 4.0}, u);
        CHECK(world::norm(w) == doctest::Approx(c.v_max));
        CHECK(w.y / w.x == doctest::Approx(raw.y / raw.x));
    }
    SUBCASE("zero error stays zero") {
        PidState t;
        for (int k = 0; k < 100; ++k) {
            const auto w = pid_step(PidGains{}, {0.0, 0.0}, t);
            REQUIRE(w.x == 0.0);
            REQUIRE(w.y == 0.0);
        }
    }
    SUBCASE("integral is clamped") {
        PidState t;
        for (int k = 0; k < 10; ++k) pid_step(PidGains{}, {1.0, -1.0}, t);
        CHECK(t.integral[0] == 2.0);
        CHECK(t.integral[1] == -2.0);
    }
    SUBCASE("gain validation") {
        auto bad = PidGains{};
        bad.x.ki = -0.1;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = PidGains{};
        bad.v_max = 0.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = PidGains{};
        bad.i_clamp = 0.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
}

TEST_CASE("pid matches the scalar recurrence over 50 steps") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> gain(0.0, 1.0), err(-3.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        PidGains g;
        g.x = {gain(rng), gain(rng), gain(rng)};
        g.y = {gain(rng), gain(rng), gain(rng)};
        g.i_clamp = 0.5 + gain(rng);
        g.v_max = 1e9;
        PidState s;
        AxisOracle ox, oy;
        for (int k = 0; k < 50; ++k) {
            const Vec2 e{err(rng), err(rng)};
            const auto v = pid_step(g, e, s);
            REQUIRE(v.x == doctest::Approx(ox.step(g.x, g.i_clamp, e.x)).epsilon(1e-12));
            REQUIRE(v.y == doctest::Approx(oy.step(g.y, g.i_clamp, e.y)).epsilon(1e-12));
        }
    }
}

namespace {

// Distance to a stationary car under groundtruth guidance for the steps after
// the drone first moves slower than v_max.
std::vector<double> errors_after_saturation(const PidGains& gains) {
    auto c = stationary_episode({2.0, 0.0}, 120);
    c.gains = gains;
    const auto r = run_episode(c, Guidance::Groundtruth, nullptr);
    std::size_t k = 0;
    while (k + 1 < r.rows.size() && world::norm(r.rows[k + 1].drone - r.rows[k].drone) >= gains.v_max - 1e-12) ++k;
    std::vector<double> e;
    for (; k < r.rows.size(); ++k) e.push_back(r.rows[k].error_m);
    return e;
}

bool non_increasing(const std::vector<double>& e) {
    for (std::size_t k = 1; k < e.size(); ++k) {
        if (e[k] > e[k - 1] + 1e-12) return false;
    }
    return true;
}

}  // namespace

// The integral term keeps pushing after the target is reached, so the drone
// overshoots and the distance grows again. Kept as a recorded expected failure.
TEST_CASE("distance to a stationary target never increases after saturation under default gains" *
          doctest::should_fail()) {
    const auto e = errors_after_saturation(PidGains{});
    REQUIRE(e.size() > 50);
    CHECK(non_increasing(e));
}

TEST_CASE("distance to a stationary target never increases after saturation without the integral term") {
    const auto e = errors_after_saturation(PidGains::uniform(0.3, 0.0, 0.1));
    REQUIRE(e.size() > 50);
    CHECK(non_increasing(e));
}

TEST_CASE("stationary car is reached") {
    const auto r = run_episode(stationary_episode({2.0, 0.0}, 60), Guidance::Groundtruth, nullptr);
    REQUIRE(r.rows.size() == 60);
    CHECK(r.rows.front().error_m == doctest::Approx(2.0));
    CHECK(r.rows.back().error_m < 0.1);
    for (const auto& row : r.rows) {
        CHECK_FALSE(row.out_of_view);
        CHECK(row.predicted == Vec2{8.0, 8.0});
    }
}

TEST_CASE("zero gains never move the drone") {
    auto c = stationary_episode({1.0, -1.5}, 40);
    c.gains = PidGains::uniform(0.0, 0.0, 0.0);
    const auto r = run_episode(c, Guidance::Groundtruth, nullptr);
    for (const auto& row : r.rows) CHECK(row.drone == Vec2{9.0, 6.5});
}

TEST_CASE("groundtruth tracking of the default trajectory") {
    EpisodeConfig c;
    const auto r = run_episode(c, Guidance::Groundtruth, nullptr);
    REQUIRE(r.rows.size() == 500);
    CHECK_FALSE(r.aborted);
    CHECK(mean_error(r, 60) < 0.3);
    CHECK_THROWS_AS(mean_error(r, 10000), RangeError);
}

TEST_CASE("episode validation") {
    EpisodeConfig c;
    c.steps = 0;
    CHECK_THROWS_AS(run_episode(c, Guidance::Groundtruth, nullptr), ConfigError);
    c = {};
    CHECK_THROWS_AS(run_episode(c, Guidance::Reference, nullptr), ConfigError);
    CHECK_THROWS_AS(parse_guidance("lidar"), ConfigError);
    for (auto g : {Guidance::Ppa, Guidance::Reference, Guidance::Groundtruth}) CHECK(parse_guidance(to_string(g)) == g);
}

TEST_CASE("reference runs are deterministic and logs round-trip") {
    EpisodeConfig c;
    c.steps = 120;
    ReferencePredictor p1(bnn::random_model(5)), p2(bnn::random_model(5));
    const auto a = run_episode(c, Guidance::Reference, &p1);
    const auto b = run_episode(c, Guidance::Reference, &p2);
    REQUIRE(a.rows.size() == 120);
    CHECK(track_csv(a) == track_csv(b));
    for (std::size_t k = 1; k < a.rows.size(); ++k) REQUIRE(a.rows[k].step > a.rows[k - 1].step);
    for (const auto& row : a.rows) {
        REQUIRE(row.label_x >= 0);
        REQUIRE(row.label_x < 8);
    }

    const auto path = temp_path("ppasim_test_track.csv");
    write_track_csv(path, a);
    const auto back = read_track_csv(path);
    CHECK(track_csv(back) == track_csv(a));
    CHECK(back.rows.size() == a.rows.size());
    std::filesystem::remove(path);

    CHECK_THROWS_AS(read_track_csv("/nonexistent/track.csv"), IoError);
}

TEST_CASE("run comparison") {
    const auto a = run_episode(stationary_episode({2.0, 0.0}, 30), Guidance::Groundtruth, nullptr);

    const auto same = compare_runs(a, a);
    CHECK(same.rmse == 0.0);
    CHECK(same.max_dev == 0.0);
    CHECK(same.steps == 30);
    CHECK(same.mean_error_a == doctest::Approx(mean_error(a)));

    auto shifted = a;
    for (auto& row : shifted.rows) row.drone.x += 1.0;
    const auto d = compare_runs(a, shifted);
    CHECK(d.rmse == doctest::Approx(1.0));
    CHECK(d.max_dev == doctest::Approx(1.0));

    auto shorter = a;
    shorter.rows.pop_back();
    CHECK_THROWS_AS(compare_runs(a, shorter), ShapeError);

    const auto json = comparison_json(d);
    CHECK(json.find("\"rmse_m\"") != std::string::npos);
    CHECK(json.find("\"steps\": 30") != std::string::npos);
}

TEST_CASE("a timed-out host aborts the episode with a partial record") {
    bridge::VisionHost host(bridge::Address{"127.0.0.1", 0}, [](const GrayImage&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(300));
        return bnn::make_prediction({}, {});
    });
    std::thread t([&] { host.run(); });
    {
        auto conn = bridge::HostConnection::connect({"127.0.0.1", host.port()}, std::chrono::milliseconds(50));
        RemotePredictor remote(conn);
        EpisodeConfig c;
        c.steps = 20;
        const auto r = run_episode(c, Guidance::Ppa, &remote);
        CHECK(r.aborted);
        CHECK(r.rows.size() < 20);
        CHECK(r.abort_reason.find("no reply") != std::string::npos);
    }
    host.stop();
    t.join();
}
