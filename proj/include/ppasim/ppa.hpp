#pragma once

// Pixel-processor-array emulation: digital bit planes, analogue planes and the
// instruction subset used by binarized convolution.
//
// Bit coding is fixed across the project: a stored 1 means +1, a stored 0
// means -1.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ppasim/image.hpp"

namespace ppasim::ppa {

inline constexpr int kSensorPlaneSize = 256;
inline constexpr int kCnnPlaneSize = 64;
inline constexpr float kAnalogMin = -128.0f;
inline constexpr float kAnalogMax = 127.0f;

// Square plane of 1-bit registers, bit-packed row by row. Bit x of row y lives
// in word (y * words_per_row + x / 64) at position x % 64. Padding bits past
// the right edge are kept at zero.
class BitPlane {
public:
    BitPlane() = default;
    explicit BitPlane(int size, bool fill = false);

    static BitPlane from_bits(int size, std::span<const std::uint8_t> bits);
    std::vector<std::uint8_t> to_bits() const;

    int size() const { return size_; }
    int width() const { return size_; }
    int height() const { return size_; }
    int words_per_row() const { return words_per_row_; }

    bool get(int x, int y) const {
        auto w = words_[static_cast<std::size_t>(y) * words_per_row_ + (x >> 6)];
        return (w >> (x & 63)) & 1u;
    }
    void set(int x, int y, bool v) {
        auto& w = words_[static_cast<std::size_t>(y) * words_per_row_ + (x >> 6)];
        const std::uint64_t m = std::uint64_t{1} << (x & 63);
        w = v ? (w | m) : (w & ~m);
    }

    std::span<const std::uint64_t> row(int y) const {
        return {words_.data() + static_cast<std::size_t>(y) * words_per_row_,
                static_cast<std::size_t>(words_per_row_)};
    }
    std::span<std::uint64_t> row(int y) {
        return {words_.data() + static_cast<std::size_t>(y) * words_per_row_,
                static_cast<std::size_t>(words_per_row_)};
    }
    std::span<const std::uint64_t> words() const { return words_; }

    // Mask of valid bits in the last word of each row.
    std::uint64_t tail_mask() const;
    void clear_padding();

    bool operator==(const BitPlane&) const = default;

private:
    int size_ = 0;
    int words_per_row_ = 0;
    std::vector<std::uint64_t> words_;
};

// Square plane of analogue registers. Every write saturates to
// [kAnalogMin, kAnalogMax].
class AnalogPlane {
public:
    AnalogPlane() = default;
    explicit AnalogPlane(int size, float fill = 0.0f);

    int size() const { return size_; }
    int width() const { return size_; }
    int height() const { return size_; }

    float at(int x, int y) const { return values_[static_cast<std::size_t>(y) * size_ + x]; }
    void set(int x, int y, double v);
    std::span<const float> values() const { return values_; }

    bool operator==(const AnalogPlane&) const = default;

private:
    int size_ = 0;
    std::vector<float> values_;
};

float saturate(double v);

struct NoiseModel {
    double sigma_read = 1.0;  // added once per pixel when an image is loaded
    double sigma_op = 0.25;   // added per pixel on every analogue arithmetic op
    std::uint64_t seed = 0;

    static NoiseModel noiseless(std::uint64_t seed = 0) { return {0.0, 0.0, seed}; }
    void validate() const;
};

// Stateful noise realization. Two streams built from the same model produce
// identical samples for identical instruction sequences. A zero sigma draws
// nothing from the generator.
class NoiseStream {
public:
    explicit NoiseStream(const NoiseModel& model);

    double read_sample();
    double op_sample();
    const NoiseModel& model() const { return model_; }

private:
    NoiseModel model_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> unit_{0.0, 1.0};
};

enum class Sign : int { Plus = 1, Minus = -1 };

// Sensor acquisition: value = pixel - 128 + N(0, sigma_read), saturated.
AnalogPlane load_image(const GrayImage& pixels, NoiseStream& noise);

// out = 1 where a >= t.
BitPlane threshold(const AnalogPlane& a, double t);

// out[y][x] = p[y - dy][x - dx] inside the plane, zero-filled elsewhere.
BitPlane shift(const BitPlane& p, int dx, int dy);

BitPlane xnor(const BitPlane& a, const BitPlane& b);
BitPlane bitwise_or(const BitPlane& a, const BitPlane& b);
BitPlane invert(const BitPlane& p);

int popcount_global(const BitPlane& p);

// OR over non-overlapping window x window blocks; output side is size/window.
BitPlane or_pool(const BitPlane& p, int window);

// One shift-and-add step: a + sign * pm(shift(p, dx, dy)) + N(0, sigma_op),
// where pm maps 0/1 to -1/+1 and shifted-in border cells contribute 0.
AnalogPlane accumulate_shifted(const AnalogPlane& a, const BitPlane& p, int dx, int dy,
                               Sign sign, NoiseStream& noise);

}  // namespace ppasim::ppa
