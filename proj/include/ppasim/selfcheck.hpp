#pragma once

// Built-in consistency checks shared by `ppasim selfcheck` and the test suites.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ppasim/bnn.hpp"
#include "ppasim/image.hpp"

namespace ppasim::selfcheck {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

GrayImage random_frame(std::mt19937_64& rng, int size = bnn::kInputSize);

// infer_ppa with zero noise against infer_reference: every conv and pooled
// plane, all scores and both labels must match.
CheckResult zero_noise_equivalence(int frames, std::uint64_t seed);

// Random FRAME and PREDICTION messages survive encode/decode unchanged.
CheckResult codec_roundtrip(int frames, std::uint64_t seed);

// Flipping any single bit of the payload or checksum of `messages` random
// frame messages is reported as corruption.
CheckResult corruption_detection(int messages, std::uint64_t seed);

// Serves `frames` random frames through a VisionHost on an ephemeral
// loopback port and checks that every reply carries the requested frame_id
// and the reference prediction.
CheckResult loopback(int frames, std::uint64_t seed);

std::vector<CheckResult> run_all();

}  // namespace ppasim::selfcheck
