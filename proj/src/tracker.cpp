#include "ppasim/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ppasim/errors.hpp"

namespace ppasim::tracker {

namespace {

const char* const kCsvHeader =
    "step,car_x,car_y,drone_x,drone_y,label_pred_x,label_pred_y,pred_x,pred_y,error_m,out_of_view";

void check_gains(const AxisGains& g, const char* axis) {
    for (double v : {g.kp, g.ki, g.kd}) {
        if (!std::isfinite(v) || v < 0.0) throw ConfigError(std::string("PID gains for ") + axis + " must be finite and >= 0");
    }
}

double axis_command(const AxisGains& g, double i_clamp, double e, double& integral, double& prev) {
    integral = std::clamp(integral + e, -i_clamp, i_clamp);
    const double v = g.kp * e + g.ki * integral + g.kd * (e - prev);
    prev = e;
    return v;
}

}  // namespace

PidGains PidGains::uniform(double kp, double ki, double kd) {
    PidGains g;
    g.x = {kp, ki, kd};
    g.y = {kp, ki, kd};
    return g;
}

void PidGains::validate() const {
    check_gains(x, "x");
    check_gains(y, "y");
    if (!std::isfinite(i_clamp) || i_clamp <= 0.0) throw ConfigError("i_clamp must be finite and > 0");
    if (!std::isfinite(v_max) || v_max <= 0.0) throw ConfigError("v_max must be finite and > 0");
}

Vec2 pid_step(const PidGains& gains, Vec2 error, PidState& state) {
    Vec2 v{axis_command(gains.x, gains.i_clamp, error.x, state.integral[0], state.prev_error[0]),
           axis_command(gains.y, gains.i_clamp, error.y, state.integral[1], state.prev_error[1])};
    const double speed = world::norm(v);
    if (speed > gains.v_max) v = v * (gains.v_max / speed);
    return v;
}

Vec2 label_to_position(int label_x, int label_y, Vec2 drone, double view_side) {
    if (label_x < 0 || label_x >= world::kLabelBins || label_y < 0 || label_y >= world::kLabelBins) {
        throw RangeError("label out of range");
    }
    const double bin = view_side / world::kLabelBins;
    return {drone.x + (label_x + 0.5) * bin - view_side / 2.0, drone.y + (label_y + 0.5) * bin - view_side / 2.0};
}

std::string to_string(Guidance g) {
    switch (g) {
        case Guidance::Ppa:
            return "ppa";
        case Guidance::Reference:
            return "reference";
        case Guidance::Groundtruth:
            return "groundtruth";
    }
    return "?";
}

Guidance parse_guidance(const std::string& text) {
    if (text == "ppa") return Guidance::Ppa;
    if (text == "reference") return Guidance::Reference;
    if (text == "groundtruth") return Guidance::Groundtruth;
    throw ConfigError("guidance must be ppa, reference or groundtruth, got '" + text + "'");
}

bnn::PredictionDistribution ReferencePredictor::predict(std::uint32_t, const GrayImage& frame) {
    return bnn::infer_reference(model_, frame).prediction;
}

bnn::PredictionDistribution PpaPredictor::predict(std::uint32_t, const GrayImage& frame) {
    return bnn::infer_ppa(model_, frame, noise_).prediction;
}

bnn::PredictionDistribution RemotePredictor::predict(std::uint32_t frame_id, const GrayImage& frame) {
    return connection_.request_prediction(bridge::FramePayload::from_image(frame_id, frame)).to_distribution();
}

TrackRecord run_episode(const EpisodeConfig& config, Guidance guidance, Predictor* predictor) {
    config.gains.validate();
    config.jitter.validate();
    if (config.steps < 1) throw ConfigError("steps must be >= 1");
    if (guidance != Guidance::Groundtruth && predictor == nullptr) {
        throw ConfigError("guidance '" + to_string(guidance) + "' needs a predictor");
    }

    const world::Trajectory trajectory(config.trajectory);
    const world::FloorTexture texture(config.texture_seed);
    world::JitterStream jitter(config.jitter);

    world::WorldState w;
    w.map_extent = config.map_extent;
    w.texture_seed = config.texture_seed;
    w.car = trajectory.pose(0);
    w.drone = Vec2{w.car.x, w.car.y} + config.drone_start_offset;
    const double hi = std::nextafter(config.map_extent, 0.0);
    w.drone.x = std::clamp(w.drone.x, 0.0, hi);
    w.drone.y = std::clamp(w.drone.y, 0.0, hi);

    TrackRecord record;
    PidState pid;
    Vec2 held = w.drone;  // target before any prediction exists: stay put
    for (int k = 0; k < config.steps; ++k) {
        const auto j = jitter.next();
        const Vec2 car{w.car.x, w.car.y};
        const auto truth = world::pose_to_label(world::view_offset(w, j), config.view.view_side);

        TrackRow row;
        row.step = w.time_step;
        row.car = car;
        row.drone = w.drone;
        row.error_m = world::norm(w.drone - car);
        row.out_of_view = !truth.has_value();

        if (guidance == Guidance::Groundtruth) {
            if (truth) {
                row.label_x = truth->x;
                row.label_y = truth->y;
                held = car;
            }
        } else {
            const auto frame = world::downsample(world::render(w, j, texture, config.view));
            bnn::PredictionDistribution p;
            try {
                p = predictor->predict(static_cast<std::uint32_t>(k), frame);
            } catch (const ProtocolError& e) {
                record.aborted = true;
                record.abort_reason = e.what();
                break;
            }
            row.label_x = p.label_x;
            row.label_y = p.label_y;
            if (truth) held = label_to_position(p.label_x, p.label_y, w.drone, config.view.view_side);
        }
        row.predicted = held;
        record.rows.push_back(row);

        const Vec2 cmd = pid_step(config.gains, held - w.drone, pid);
        w = world::step(w, cmd, trajectory, config.gains.v_max);
    }
    return record;
}

double mean_error(const TrackRecord& record, std::int64_t from_step) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : record.rows) {
        if (r.step < from_step) continue;
        sum += r.error_m;
        ++n;
    }
    if (n == 0) throw RangeError("no rows at or after step " + std::to_string(from_step));
    return sum / static_cast<double>(n);
}

std::string track_csv(const TrackRecord& record) {
    std::ostringstream out;
    out << kCsvHeader << "\n";
    char buf[512];
    for (const auto& r : record.rows) {
        std::snprintf(buf, sizeof buf, "%lld,%.6f,%.6f,%.6f,%.6f,%d,%d,%.6f,%.6f,%.6f,%d\n",
                      static_cast<long long>(r.step), r.car.x, r.car.y, r.drone.x, r.drone.y, r.label_x, r.label_y,
                      r.predicted.x, r.predicted.y, r.error_m, r.out_of_view ? 1 : 0);
        out << buf;
    }
    return out.str();
}

void write_track_csv(const std::string& path, const TrackRecord& record) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << track_csv(record);
    if (!out) throw IoError("failed writing " + path);
}

TrackRecord read_track_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw IoError(path + ": not a track log (bad header)");
    TrackRecord rec;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        TrackRow r;
        long long step = 0;
        int oov = 0;
        char tail = 0;
        const int got = std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%d,%d,%lf,%lf,%lf,%d%c", &step, &r.car.x,
                                    &r.car.y, &r.drone.x, &r.drone.y, &r.label_x, &r.label_y, &r.predicted.x,
                                    &r.predicted.y, &r.error_m, &oov, &tail);
        if (got != 11 || (oov != 0 && oov != 1)) {
            throw IoError(path + ":" + std::to_string(lineno) + ": malformed row");
        }
        r.step = step;
        r.out_of_view = oov == 1;
        rec.rows.push_back(r);
    }
    return rec;
}

RunComparison compare_runs(const TrackRecord& a, const TrackRecord& b) {
    if (a.rows.empty() || b.rows.empty()) throw RangeError("cannot compare empty runs");
    if (a.rows.size() != b.rows.size()) {
        throw ShapeError("runs have different lengths (" + std::to_string(a.rows.size()) + " vs " +
                         std::to_string(b.rows.size()) + ")");
    }
    RunComparison c;
    c.steps = a.rows.size();
    c.mean_error_a = mean_error(a, a.rows.front().step);
    c.mean_error_b = mean_error(b, b.rows.front().step);
    double sq = 0.0;
    for (std::size_t i = 0; i < c.steps; ++i) {
        if (a.rows[i].step != b.rows[i].step) throw ShapeError("runs are not aligned at row " + std::to_string(i));
        const double d = world::norm(a.rows[i].drone - b.rows[i].drone);
        sq += d * d;
        c.max_dev = std::max(c.max_dev, d);
    }
    c.rmse = std::sqrt(sq / static_cast<double>(c.steps));
    return c;
}

std::string comparison_json(const RunComparison& c) {
    nlohmann::ordered_json j;
    j["steps"] = c.steps;
    j["mean_error_m_a"] = c.mean_error_a;
    j["mean_error_m_b"] = c.mean_error_b;
    j["rmse_m"] = c.rmse;
    j["max_dev_m"] = c.max_dev;
    return j.dump(2) + "\n";
}

}  // namespace ppasim::tracker
