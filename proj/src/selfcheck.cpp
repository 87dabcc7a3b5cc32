#include "ppasim/selfcheck.hpp"

#include <exception>
#include <thread>

#include "ppasim/bridge.hpp"
#include "ppasim/errors.hpp"
#include "ppasim/ppa.hpp"

namespace ppasim::selfcheck {

namespace {

CheckResult fail(std::string name, std::string detail) { return {std::move(name), false, std::move(detail)}; }
CheckResult pass(std::string name, std::string detail) { return {std::move(name), true, std::move(detail)}; }

bnn::PredictionDistribution random_distribution(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> score(-bnn::kFeatures, bnn::kFeatures);
    std::array<int, bnn::kLabels> sx{}, sy{};
    for (auto& s : sx) s = score(rng);
    for (auto& s : sy) s = score(rng);
    return bnn::make_prediction(sx, sy);
}

}  // namespace

GrayImage random_frame(std::mt19937_64& rng, int size) {
    std::uniform_int_distribution<int> px(0, 255);
    GrayImage img(size, size);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(px(rng));
    return img;
}

CheckResult zero_noise_equivalence(int frames, std::uint64_t seed) {
    const std::string name = "zero-noise ppa == reference";
    std::mt19937_64 rng(seed);
    ppa::NoiseStream silent(ppa::NoiseModel::noiseless());
    for (int i = 0; i < frames; ++i) {
        const auto model = bnn::random_model(rng());
        const auto frame = random_frame(rng);
        const auto a = bnn::infer_ppa(model, frame, silent);
        const auto b = bnn::infer_reference(model, frame);
        if (!(a.input == b.input)) return fail(name, "input plane differs on frame " + std::to_string(i));
        for (int c = 0; c < bnn::kChannels; ++c) {
            if (!(a.conv[c] == b.conv[c])) {
                return fail(name, "conv plane " + std::to_string(c) + " differs on frame " + std::to_string(i));
            }
            if (!(a.pooled[c] == b.pooled[c])) {
                return fail(name, "pooled plane " + std::to_string(c) + " differs on frame " + std::to_string(i));
            }
        }
        if (!(a.prediction == b.prediction)) return fail(name, "prediction differs on frame " + std::to_string(i));
    }
    return pass(name, std::to_string(frames) + " frames bit-exact");
}

CheckResult codec_roundtrip(int frames, std::uint64_t seed) {
    const std::string name = "codec round-trip";
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> side(1, bridge::kMaxFrameSide);
    for (int i = 0; i < frames; ++i) {
        const int w = i % 2 == 0 ? bnn::kInputSize : side(rng);
        const int h = i % 2 == 0 ? bnn::kInputSize : side(rng);
        GrayImage img(w, h);
        std::uniform_int_distribution<int> px(0, 255);
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(px(rng));
        const auto fid = static_cast<std::uint32_t>(rng());
        const auto f = bridge::FramePayload::from_image(fid, img);
        const auto msg = bridge::frame_message(f);
        const auto bytes = bridge::encode(msg);
        const auto r = bridge::decode(bytes);
        if (r.need_more() || r.consumed != bytes.size() || !(*r.message == msg)) {
            return fail(name, "frame message " + std::to_string(i) + " did not round-trip");
        }
        if (!(bridge::decode_frame(r.message->payload) == f)) {
            return fail(name, "frame payload " + std::to_string(i) + " did not round-trip");
        }

        const auto p = bridge::PredictionPayload::from_distribution(fid, random_distribution(rng));
        const auto pbytes = bridge::encode(bridge::prediction_message(p));
        const auto pr = bridge::decode(pbytes);
        if (pr.need_more() || !(bridge::decode_prediction(pr.message->payload) == p)) {
            return fail(name, "prediction " + std::to_string(i) + " did not round-trip");
        }
    }
    return pass(name, std::to_string(frames) + " frame and prediction messages");
}

CheckResult corruption_detection(int messages, std::uint64_t seed) {
    const std::string name = "single-bit corruption detected";
    std::mt19937_64 rng(seed);
    std::size_t flips = 0;
    for (int i = 0; i < messages; ++i) {
        const auto f = bridge::FramePayload::from_image(static_cast<std::uint32_t>(i), random_frame(rng));
        auto bytes = bridge::encode(bridge::frame_message(f));
        for (std::size_t byte = bridge::kHeaderSize; byte < bytes.size(); ++byte) {
            for (int bit = 0; bit < 8; ++bit) {
                bytes[byte] ^= static_cast<std::uint8_t>(1u << bit);
                bool detected = false;
                try {
                    (void)bridge::decode(bytes);
                } catch (const CorruptionError&) {
                    detected = true;
                }
                bytes[byte] ^= static_cast<std::uint8_t>(1u << bit);
                if (!detected) {
                    return fail(name, "flip of byte " + std::to_string(byte) + " bit " + std::to_string(bit) +
                                          " went unnoticed");
                }
                ++flips;
            }
        }
    }
    return pass(name, std::to_string(flips) + " flips");
}

CheckResult loopback(int frames, std::uint64_t seed) {
    const std::string name = "loopback serve/track";
    std::mt19937_64 rng(seed);
    const auto model = bnn::random_model(rng());
    try {
        bridge::VisionHost host(bridge::Address{"127.0.0.1", 0},
                                [&](const GrayImage& img) { return bnn::infer_reference(model, img).prediction; });
        std::exception_ptr host_error;
        std::thread server([&] {
            try {
                host.run();
            } catch (...) {
                host_error = std::current_exception();
            }
        });
        struct Stop {
            bridge::VisionHost& h;
            std::thread& t;
            ~Stop() {
                h.stop();
                t.join();
            }
        } stop{host, server};

        auto conn = bridge::HostConnection::connect(bridge::Address{"127.0.0.1", host.port()});
        conn.hello();
        for (int i = 0; i < frames; ++i) {
            const auto img = random_frame(rng);
            const auto id = static_cast<std::uint32_t>(i);
            const auto reply = conn.request_prediction(bridge::FramePayload::from_image(id, img));
            if (reply.frame_id != id) return fail(name, "frame_id mismatch at " + std::to_string(i));
            if (!(reply.to_distribution() == bnn::infer_reference(model, img).prediction)) {
                return fail(name, "prediction mismatch at frame " + std::to_string(i));
            }
        }
        conn.bye();
        if (host_error) std::rethrow_exception(host_error);
    } catch (const Error& e) {
        return fail(name, e.what());
    }
    return pass(name, std::to_string(frames) + " frames, all frame_ids matched");
}

std::vector<CheckResult> run_all() {
    return {zero_noise_equivalence(100, 1), codec_roundtrip(200, 2), corruption_detection(2, 3), loopback(50, 4)};
}

}  // namespace ppasim::selfcheck
