#include "ppasim/ppa.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "ppasim/errors.hpp"

namespace ppasim::ppa {

namespace {

void require_same_size(int a, int b, const char* op) {
    if (a != b) {
        throw ShapeError(std::string(op) + ": plane sizes differ (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
    }
}

void require_positive_size(int size) {
    if (size <= 0) throw ShapeError("plane size must be positive, got " + std::to_string(size));
}

// Row shift toward higher x by n bits (n may be negative).
void shift_row(std::span<const std::uint64_t> in, std::span<std::uint64_t> out, int n) {
    const int words = static_cast<int>(in.size());
    const int ws = std::abs(n) / 64;
    const int bs = std::abs(n) % 64;
    for (int i = 0; i < words; ++i) {
        std::uint64_t v = 0;
        if (n >= 0) {
            const int src = i - ws;
            if (src >= 0) {
                v = in[src] << bs;
                if (bs != 0 && src - 1 >= 0) v |= in[src - 1] >> (64 - bs);
            }
        } else {
            const int src = i + ws;
            if (src < words) {
                v = in[src] >> bs;
                if (bs != 0 && src + 1 < words) v |= in[src + 1] << (64 - bs);
            }
        }
        out[i] = v;
    }
}

}  // namespace

BitPlane::BitPlane(int size, bool fill) : size_(size) {
    require_positive_size(size);
    words_per_row_ = (size + 63) / 64;
    words_.assign(static_cast<std::size_t>(words_per_row_) * size, fill ? ~std::uint64_t{0} : 0);
    clear_padding();
}

BitPlane BitPlane::from_bits(int size, std::span<const std::uint8_t> bits) {
    if (bits.size() != static_cast<std::size_t>(size) * size) {
        throw ShapeError("from_bits: expected " + std::to_string(size * size) + " bits, got " +
                         std::to_string(bits.size()));
    }
    BitPlane p(size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const auto b = bits[static_cast<std::size_t>(y) * size + x];
            if (b > 1) throw RangeError("from_bits: element is not 0 or 1");
            p.set(x, y, b != 0);
        }
    }
    return p;
}

std::vector<std::uint8_t> BitPlane::to_bits() const {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(size_) * size_);
    for (int y = 0; y < size_; ++y) {
        for (int x = 0; x < size_; ++x) out[static_cast<std::size_t>(y) * size_ + x] = get(x, y);
    }
    return out;
}

std::uint64_t BitPlane::tail_mask() const {
    const int rem = size_ % 64;
    return rem == 0 ? ~std::uint64_t{0} : ((std::uint64_t{1} << rem) - 1);
}

void BitPlane::clear_padding() {
    if (size_ == 0) return;
    const auto mask = tail_mask();
    for (int y = 0; y < size_; ++y) row(y).back() &= mask;
}

AnalogPlane::AnalogPlane(int size, float fill) : size_(size) {
    require_positive_size(size);
    values_.assign(static_cast<std::size_t>(size) * size, saturate(fill));
}

void AnalogPlane::set(int x, int y, double v) {
    values_[static_cast<std::size_t>(y) * size_ + x] = saturate(v);
}

float saturate(double v) {
    return static_cast<float>(std::clamp(v, static_cast<double>(kAnalogMin),
                                         static_cast<double>(kAnalogMax)));
}

void NoiseModel::validate() const {
    if (!(sigma_read >= 0.0) || !std::isfinite(sigma_read)) {
        throw RangeError("sigma_read must be finite and >= 0");
    }
    if (!(sigma_op >= 0.0) || !std::isfinite(sigma_op)) {
        throw RangeError("sigma_op must be finite and >= 0");
    }
}

NoiseStream::NoiseStream(const NoiseModel& model) : model_(model), rng_(model.seed) {
    model_.validate();
}

double NoiseStream::read_sample() {
    if (model_.sigma_read == 0.0) return 0.0;
    return model_.sigma_read * unit_(rng_);
}

double NoiseStream::op_sample() {
    if (model_.sigma_op == 0.0) return 0.0;
    return model_.sigma_op * unit_(rng_);
}

AnalogPlane load_image(const GrayImage& pixels, NoiseStream& noise) {
    if (pixels.width != pixels.height || pixels.width <= 0 ||
        pixels.pixels.size() != static_cast<std::size_t>(pixels.width) * pixels.height) {
        throw ShapeError("load_image: expected a square plane, got " +
                         std::to_string(pixels.width) + "x" + std::to_string(pixels.height));
    }
    AnalogPlane out(pixels.width);
    for (int y = 0; y < pixels.height; ++y) {
        for (int x = 0; x < pixels.width; ++x) {
            out.set(x, y, static_cast<double>(pixels.at(x, y)) - 128.0 + noise.read_sample());
        }
    }
    return out;
}

BitPlane threshold(const AnalogPlane& a, double t) {
    BitPlane out(a.size());
    for (int y = 0; y < a.size(); ++y) {
        for (int x = 0; x < a.size(); ++x) {
            if (static_cast<double>(a.at(x, y)) >= t) out.set(x, y, true);
        }
    }
    return out;
}

BitPlane shift(const BitPlane& p, int dx, int dy) {
    const int n = p.size();
    if (std::abs(dx) >= n || std::abs(dy) >= n) {
        throw RangeError("shift: magnitude (" + std::to_string(dx) + "," + std::to_string(dy) +
                         ") must be below plane size " + std::to_string(n));
    }
    BitPlane out(n);
    for (int y = 0; y < n; ++y) {
        const int src = y - dy;
        if (src < 0 || src >= n) continue;
        shift_row(p.row(src), out.row(y), dx);
    }
    out.clear_padding();
    return out;
}

BitPlane xnor(const BitPlane& a, const BitPlane& b) {
    require_same_size(a.size(), b.size(), "xnor");
    BitPlane out(a.size());
    for (int y = 0; y < a.size(); ++y) {
        auto ra = a.row(y), rb = b.row(y);
        auto ro = out.row(y);
        for (std::size_t i = 0; i < ro.size(); ++i) ro[i] = ~(ra[i] ^ rb[i]);
    }
    out.clear_padding();
    return out;
}

BitPlane bitwise_or(const BitPlane& a, const BitPlane& b) {
    require_same_size(a.size(), b.size(), "bitwise_or");
    BitPlane out(a.size());
    for (int y = 0; y < a.size(); ++y) {
        auto ra = a.row(y), rb = b.row(y);
        auto ro = out.row(y);
        for (std::size_t i = 0; i < ro.size(); ++i) ro[i] = ra[i] | rb[i];
    }
    return out;
}

BitPlane invert(const BitPlane& p) {
    BitPlane out(p.size());
    for (int y = 0; y < p.size(); ++y) {
        auto rp = p.row(y);
        auto ro = out.row(y);
        for (std::size_t i = 0; i < ro.size(); ++i) ro[i] = ~rp[i];
    }
    out.clear_padding();
    return out;
}

int popcount_global(const BitPlane& p) {
    int count = 0;
    for (auto w : p.words()) count += std::popcount(w);
    return count;
}

BitPlane or_pool(const BitPlane& p, int window) {
    if (window <= 0 || p.size() % window != 0) {
        throw ShapeError("or_pool: window " + std::to_string(window) + " does not divide plane size " +
                         std::to_string(p.size()));
    }
    // Fold the window with shifts and ORs, the way the array would, then
    // sample the block origins.
    BitPlane acc = p;
    for (int k = 1; k < window; ++k) acc = bitwise_or(acc, shift(p, -k, 0));
    BitPlane rows = acc;
    for (int k = 1; k < window; ++k) rows = bitwise_or(rows, shift(acc, 0, -k));

    const int n = p.size() / window;
    BitPlane out(n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) out.set(x, y, rows.get(x * window, y * window));
    }
    return out;
}

AnalogPlane accumulate_shifted(const AnalogPlane& a, const BitPlane& p, int dx, int dy,
                               Sign sign, NoiseStream& noise) {
    require_same_size(a.size(), p.size(), "accumulate_shifted");
    const int n = p.size();
    if (std::abs(dx) >= n || std::abs(dy) >= n) {
        throw RangeError("accumulate_shifted: shift magnitude must be below plane size");
    }
    const double s = static_cast<double>(static_cast<int>(sign));
    AnalogPlane out(n);
    for (int y = 0; y < n; ++y) {
        const int sy = y - dy;
        for (int x = 0; x < n; ++x) {
            const int sx = x - dx;
            double contribution = 0.0;
            if (sx >= 0 && sx < n && sy >= 0 && sy < n) contribution = p.get(sx, sy) ? s : -s;
            out.set(x, y, static_cast<double>(a.at(x, y)) + contribution + noise.op_sample());
        }
    }
    return out;
}

}  // namespace ppasim::ppa
