// ppasim: dataset generation, training, the vision host, tracking episodes
// and run comparison from one binary.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "ppasim/bnn.hpp"
#include "ppasim/bridge.hpp"
#include "ppasim/config.hpp"
#include "ppasim/errors.hpp"
#include "ppasim/selfcheck.hpp"
#include "ppasim/tracker.hpp"
#include "ppasim/trainer.hpp"
#include "ppasim/world.hpp"

namespace {

using namespace ppasim;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kProtocol = 4, kCheckFailed = 5 };

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;  // key -> value from dedicated options
};

// Registers an option whose value lands in `common.flags[key]` when given.
void flag_option(CLI::App* app, Common& common, const std::string& name, const std::string& key,
                 const std::string& help) {
    app->add_option_function<std::string>(
        name, [&common, key](const std::string& v) { common.flags[key] = v; }, help + " [" + key + "]");
}

void add_common(CLI::App* app, Common& common) {
    app->add_option("--config", common.config_path, "key=value configuration file");
    app->add_option("--set", common.sets, "override one key, e.g. --set train.epochs=5")->take_all();
}

config::Config resolve(const std::string& command, const Common& common) {
    std::map<std::string, std::string> overrides;
    for (const auto& s : common.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        overrides[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (const auto& [k, v] : common.flags) overrides[k] = v;
    auto cfg = config::resolve(common.config_path, overrides);
    std::cout << "# ppasim " << command << "\n";
    std::istringstream lines(config::dump(cfg));
    for (std::string line; std::getline(lines, line);) std::cout << "# " << line << "\n";
    std::cout.flush();
    return cfg;
}

int cmd_gen_dataset(const config::Config& cfg) {
    const auto sets = world::generate_dataset(cfg.dataset);
    world::write_dataset_files(cfg.data_dir, sets);
    std::cout << "wrote " << sets.first.size() << " train and " << sets.second.size() << " test frames to "
              << cfg.data_dir << "\n";
    return kOk;
}

int cmd_train(const config::Config& cfg) {
    const auto result = train::train(cfg.train);
    for (const auto& m : result.history) {
        std::printf("epoch %3d  loss %.4f  acc_x %.4f  acc_y %.4f  joint %.4f\n", m.epoch, m.loss, m.acc_x, m.acc_y,
                    m.acc_joint);
    }
    bnn::save_model(cfg.model_path, train::export_model(result.latent));
    train::write_metrics_csv(cfg.metrics_path, result.history);
    std::cout << "model: " << cfg.model_path << "\nmetrics: " << cfg.metrics_path << "\n";
    return kOk;
}

bridge::VisionHost* g_host = nullptr;

extern "C" void on_signal(int) {
    if (g_host != nullptr) g_host->stop();
}

int cmd_serve(const config::Config& cfg) {
    const auto model = bnn::load_model(cfg.model_path);
    ppa::NoiseStream noise(cfg.noise);
    bridge::VisionHost host(cfg.address, [&](const GrayImage& img) { return bnn::infer_ppa(model, img, noise).prediction; });
    g_host = &host;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "serving on " << cfg.address.host << ":" << host.port() << std::endl;
    host.run();
    g_host = nullptr;
    std::cout << "served " << host.frames_served() << " frames\n";
    return kOk;
}

int cmd_track(const config::Config& cfg, bool in_process) {
    tracker::TrackRecord record;
    std::optional<bridge::HostConnection> conn;
    if (cfg.guidance == tracker::Guidance::Groundtruth) {
        record = tracker::run_episode(cfg.episode, cfg.guidance, nullptr);
    } else if (cfg.guidance == tracker::Guidance::Reference) {
        tracker::ReferencePredictor p(bnn::load_model(cfg.model_path));
        record = tracker::run_episode(cfg.episode, cfg.guidance, &p);
    } else if (in_process) {
        tracker::PpaPredictor p(bnn::load_model(cfg.model_path), cfg.noise);
        record = tracker::run_episode(cfg.episode, cfg.guidance, &p);
    } else {
        conn.emplace(bridge::HostConnection::connect(cfg.address, std::chrono::milliseconds(cfg.timeout_ms)));
        conn->hello();
        tracker::RemotePredictor p(*conn);
        record = tracker::run_episode(cfg.episode, cfg.guidance, &p);
    }
    tracker::write_track_csv(cfg.track_path, record);
    std::cout << "track: " << cfg.track_path << " (" << record.rows.size() << " rows)\n";
    if (conn) {
        std::ofstream out(cfg.latency_path, std::ios::binary);
        if (!out) throw IoError("cannot open " + cfg.latency_path + " for writing");
        out << bridge::latency_csv(conn->latency_log());
        const auto s = bridge::summarize_latency(conn->latency_log());
        std::printf("latency p50 %.0f us  p99 %.0f us  (%zu frames)\n", s.p50_us, s.p99_us, s.count);
        if (!record.aborted) conn->bye();
    }
    if (!record.rows.empty()) std::printf("mean error %.4f m\n", tracker::mean_error(record));
    if (record.aborted) throw ProtocolError("episode aborted: " + record.abort_reason);
    return kOk;
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& out) {
    const auto c = tracker::compare_runs(tracker::read_track_csv(a), tracker::read_track_csv(b));
    const auto json = tracker::comparison_json(c);
    std::cout << json;
    if (!out.empty()) {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw IoError("cannot open " + out + " for writing");
        f << json;
        if (!f) throw IoError("failed writing " + out);
    }
    return kOk;
}

int cmd_selfcheck() {
    bool ok = true;
    for (const auto& r : selfcheck::run_all()) {
        std::printf("%s  %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        ok = ok && r.passed;
    }
    return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PPA vision platform simulator"};
    app.require_subcommand(1);
    app.footer("Every key can also be set through the environment, e.g. PPASIM_TRAIN_EPOCHS=5.\n"
               "Precedence: defaults < --config file < environment < command-line flags.");

    Common common;
    bool in_process = false;
    std::string cmp_a, cmp_b, cmp_out;

    auto* gen = app.add_subcommand("gen-dataset", "render and write the train/test LOC1 files");
    add_common(gen, common);
    flag_option(gen, common, "--n-train", "dataset.n_train", "training frames");
    flag_option(gen, common, "--n-test", "dataset.n_test", "test frames");
    flag_option(gen, common, "--seed", "dataset.seed", "dataset seed");
    flag_option(gen, common, "--out-dir", "paths.data_dir", "output directory");

    auto* trn = app.add_subcommand("train", "train the network and export a BNN1 model");
    add_common(trn, common);
    flag_option(trn, common, "--data-dir", "paths.data_dir", "directory with train.loc1/test.loc1");
    flag_option(trn, common, "--epochs", "train.epochs", "epochs");
    flag_option(trn, common, "--seed", "train.seed", "training seed");
    flag_option(trn, common, "--model", "paths.model", "output model file");
    flag_option(trn, common, "--metrics", "paths.metrics", "output metrics CSV");

    auto* srv = app.add_subcommand("serve", "run the vision host (emulated array inference)");
    add_common(srv, common);
    flag_option(srv, common, "--address", "bridge.address", "listen address host:port");
    flag_option(srv, common, "--model", "paths.model", "model file");

    auto* trk = app.add_subcommand("track", "run a closed-loop tracking episode");
    add_common(trk, common);
    flag_option(trk, common, "--guidance", "track.guidance", "ppa | reference | groundtruth");
    flag_option(trk, common, "--steps", "track.steps", "episode length");
    flag_option(trk, common, "--address", "bridge.address", "vision host address host:port");
    flag_option(trk, common, "--model", "paths.model", "model file for in-process guidance");
    flag_option(trk, common, "--out", "paths.track", "output track CSV");
    trk->add_flag("--in-process", in_process, "run ppa guidance in this process instead of over the bridge");

    auto* cmp = app.add_subcommand("compare", "compare two track CSVs");
    add_common(cmp, common);
    cmp->add_option("a", cmp_a, "first track CSV")->required();
    cmp->add_option("b", cmp_b, "second track CSV")->required();
    cmp->add_option("--out", cmp_out, "write the summary JSON here as well");

    auto* chk = app.add_subcommand("selfcheck", "zero-noise equivalence and protocol checks");
    add_common(chk, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        auto* sub = app.get_subcommands().front();
        const auto cfg = resolve(sub->get_name(), common);
        if (sub == gen) return cmd_gen_dataset(cfg);
        if (sub == trn) return cmd_train(cfg);
        if (sub == srv) return cmd_serve(cfg);
        if (sub == trk) return cmd_track(cfg, in_process);
        if (sub == cmp) return cmd_compare(cmp_a, cmp_b, cmp_out);
        if (sub == chk) return cmd_selfcheck();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << "\n";
        return kProtocol;
    } catch (const StartupError& e) {
        std::cerr << "startup error: " << e.what() << "\n";
        return kProtocol;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
