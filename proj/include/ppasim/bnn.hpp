#pragma once

// Two-headed binarized localisation network: one shared 3x3 binary conv layer
// followed by OR pooling and two binary fully connected heads (x and y).

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ppasim/image.hpp"
#include "ppasim/ppa.hpp"

namespace ppasim::bnn {

inline constexpr int kChannels = 8;
inline constexpr int kKernelSide = 3;
inline constexpr int kKernelTaps = kKernelSide * kKernelSide;
inline constexpr int kInputSize = 64;
inline constexpr int kPoolWindow = 4;
inline constexpr int kPooledSize = kInputSize / kPoolWindow;
inline constexpr int kPlaneFeatures = kPooledSize * kPooledSize;
inline constexpr int kFeatures = kChannels * kPlaneFeatures;
inline constexpr int kLabels = 8;

// Tap (ky, kx) reads input pixel (y + ky - 1, x + kx - 1); taps are stored
// row-major. Out-of-plane taps contribute 0.
using Kernel = std::array<std::int8_t, kKernelTaps>;

// One FC output's weights in feature order: index = channel * 256 + py * 16 + px.
using FcWeights = std::vector<std::int8_t>;

struct BnnModel {
    std::array<Kernel, kChannels> conv_kernels{};
    // Channel output is 1 where conv sum >= threshold (batch norm folded).
    std::array<float, kChannels> conv_thresholds{};
    std::array<FcWeights, kLabels> fc_x;
    std::array<FcWeights, kLabels> fc_y;
    // Applied to the centered input (pixel - 128).
    float input_threshold = 0.0f;

    void validate() const;
    bool operator==(const BnnModel&) const = default;
};

BnnModel random_model(std::uint64_t seed);

struct PredictionDistribution {
    std::array<int, kLabels> scores_x{};
    std::array<int, kLabels> scores_y{};
    int label_x = 0;
    int label_y = 0;

    bool operator==(const PredictionDistribution&) const = default;
};

// Lowest index wins ties.
int argmax_lowest(std::span<const int> scores);
PredictionDistribution make_prediction(const std::array<int, kLabels>& scores_x,
                                       const std::array<int, kLabels>& scores_y);

struct InferenceResult {
    PredictionDistribution prediction;
    ppa::BitPlane input;
    std::array<ppa::BitPlane, kChannels> conv;    // kInputSize planes
    std::array<ppa::BitPlane, kChannels> pooled;  // kPooledSize planes

    // Flattened pooled features as 0/1 in FC order.
    std::vector<std::uint8_t> features() const;
};

// Runs the network as an instruction sequence on the emulated array. Noise
// is drawn from `noise` in a fixed order.
InferenceResult infer_ppa(const BnnModel& model, const GrayImage& frame, ppa::NoiseStream& noise);

// Exact integer evaluation of the same network, no noise.
InferenceResult infer_reference(const BnnModel& model, const GrayImage& frame);

// Dot product of two +-1 vectors via packed XNOR and popcount:
// 2 * popcount(xnor(w, a)) - n. Throws ShapeError on unequal lengths and
// RangeError on entries other than +-1.
int xnor_dot(std::span<const std::int8_t> w, std::span<const std::int8_t> a);

// Fraction of equal elements.
double agreement(const ppa::BitPlane& a, const ppa::BitPlane& b);
// 1 - mean|a - b| / range.
double agreement(std::span<const int> a, std::span<const int> b,
                 double range = 2.0 * kFeatures);

// BNN1 container; layout documented in docs/FORMATS.md.
std::vector<std::uint8_t> serialize_model(const BnnModel& model);
BnnModel parse_model(std::span<const std::uint8_t> bytes);
void save_model(const std::string& path, const BnnModel& model);
BnnModel load_model(const std::string& path);

}  // namespace ppasim::bnn
