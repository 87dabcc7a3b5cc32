#include "ppasim/bnn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>

#include "ppasim/errors.hpp"

namespace ppasim::bnn {

namespace {

void require_frame(const GrayImage& frame) {
    if (frame.width != kInputSize || frame.height != kInputSize ||
        frame.pixels.size() != static_cast<std::size_t>(kInputSize) * kInputSize) {
        throw ShapeError("expected a " + std::to_string(kInputSize) + "x" + std::to_string(kInputSize) +
                         " frame, got " + std::to_string(frame.width) + "x" + std::to_string(frame.height));
    }
}

void require_pm1(std::int8_t w, const char* what) {
    if (w != 1 && w != -1) throw RangeError(std::string(what) + ": weight is not +1 or -1");
}

int feature_index(int c, int py, int px) { return c * kPlaneFeatures + py * kPooledSize + px; }

// FC weights of one output, split into one pooled-size plane per channel.
std::array<ppa::BitPlane, kChannels> fc_planes(const FcWeights& w) {
    std::array<ppa::BitPlane, kChannels> planes;
    for (int c = 0; c < kChannels; ++c) {
        planes[c] = ppa::BitPlane(kPooledSize);
        for (int py = 0; py < kPooledSize; ++py) {
            for (int px = 0; px < kPooledSize; ++px) {
                planes[c].set(px, py, w[feature_index(c, py, px)] > 0);
            }
        }
    }
    return planes;
}

int ppa_fc_score(const std::array<ppa::BitPlane, kChannels>& weights,
                 const std::array<ppa::BitPlane, kChannels>& pooled) {
    int matches = 0;
    for (int c = 0; c < kChannels; ++c) matches += ppa::popcount_global(ppa::xnor(weights[c], pooled[c]));
    return 2 * matches - kFeatures;
}

// --- little-endian byte helpers for the model container ---

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_bits(std::vector<std::uint8_t>& out, const std::vector<bool>& bits) {
    std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    out.insert(out.end(), packed.begin(), packed.end());
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::span<const std::uint8_t> take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw IoError("model file truncated");
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint32_t u32() {
        auto s = take(4);
        return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
               (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::vector<std::int8_t> pm1_bits(std::size_t n) {
        auto s = take((n + 7) / 8);
        std::vector<std::int8_t> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = ((s[i / 8] >> (i % 8)) & 1u) ? 1 : -1;
        return out;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

constexpr std::array<std::uint8_t, 4> kModelMagic{'B', 'N', 'N', '1'};

}  // namespace

void BnnModel::validate() const {
    for (const auto& k : conv_kernels) {
        for (auto w : k) require_pm1(w, "conv kernel");
    }
    for (float t : conv_thresholds) {
        if (std::isnan(t)) throw RangeError("conv threshold is NaN");
    }
    if (!std::isfinite(input_threshold)) throw RangeError("input threshold is not finite");
    for (const auto* head : {&fc_x, &fc_y}) {
        for (const auto& w : *head) {
            if (w.size() != static_cast<std::size_t>(kFeatures)) {
                throw ShapeError("fc weight vector has length " + std::to_string(w.size()) + ", expected " +
                                 std::to_string(kFeatures));
            }
            for (auto v : w) require_pm1(v, "fc weight");
        }
    }
}

BnnModel random_model(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<float> thr(-4.0f, 4.0f);
    auto pm = [&] { return static_cast<std::int8_t>(coin(rng) ? 1 : -1); };

    BnnModel m;
    for (auto& k : m.conv_kernels) {
        for (auto& w : k) w = pm();
    }
    for (auto& t : m.conv_thresholds) t = thr(rng);
    for (auto* head : {&m.fc_x, &m.fc_y}) {
        for (auto& w : *head) {
            w.resize(kFeatures);
            for (auto& v : w) v = pm();
        }
    }
    m.input_threshold = 0.0f;
    return m;
}

int argmax_lowest(std::span<const int> scores) {
    if (scores.empty()) throw ShapeError("argmax of empty score vector");
    // max_element returns the first maximum.
    return static_cast<int>(std::distance(scores.begin(), std::max_element(scores.begin(), scores.end())));
}

PredictionDistribution make_prediction(const std::array<int, kLabels>& scores_x,
                                       const std::array<int, kLabels>& scores_y) {
    PredictionDistribution p;
    p.scores_x = scores_x;
    p.scores_y = scores_y;
    p.label_x = argmax_lowest(scores_x);
    p.label_y = argmax_lowest(scores_y);
    return p;
}

std::vector<std::uint8_t> InferenceResult::features() const {
    std::vector<std::uint8_t> f(kFeatures);
    for (int c = 0; c < kChannels; ++c) {
        for (int py = 0; py < kPooledSize; ++py) {
            for (int px = 0; px < kPooledSize; ++px) f[feature_index(c, py, px)] = pooled[c].get(px, py);
        }
    }
    return f;
}

InferenceResult infer_ppa(const BnnModel& model, const GrayImage& frame, ppa::NoiseStream& noise) {
    require_frame(frame);
    InferenceResult r;
    r.input = ppa::threshold(ppa::load_image(frame, noise), model.input_threshold);

    for (int c = 0; c < kChannels; ++c) {
        ppa::AnalogPlane acc(kInputSize, 0.0f);
        for (int ky = 0; ky < kKernelSide; ++ky) {
            for (int kx = 0; kx < kKernelSide; ++kx) {
                const auto w = model.conv_kernels[c][ky * kKernelSide + kx];
                // Reading input at (x + kx - 1) means shifting the plane by -(kx - 1).
                acc = ppa::accumulate_shifted(acc, r.input, 1 - kx, 1 - ky,
                                              w > 0 ? ppa::Sign::Plus : ppa::Sign::Minus, noise);
            }
        }
        r.conv[c] = ppa::threshold(acc, model.conv_thresholds[c]);
        r.pooled[c] = ppa::or_pool(r.conv[c], kPoolWindow);
    }

    std::array<int, kLabels> sx{}, sy{};
    for (int o = 0; o < kLabels; ++o) {
        sx[o] = ppa_fc_score(fc_planes(model.fc_x[o]), r.pooled);
        sy[o] = ppa_fc_score(fc_planes(model.fc_y[o]), r.pooled);
    }
    r.prediction = make_prediction(sx, sy);
    return r;
}

InferenceResult infer_reference(const BnnModel& model, const GrayImage& frame) {
    require_frame(frame);
    constexpr int n = kInputSize;

    // +1 / -1 input values.
    std::vector<int> in(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const int centered = static_cast<int>(frame.at(x, y)) - 128;
            in[y * n + x] = static_cast<double>(centered) >= static_cast<double>(model.input_threshold) ? 1 : -1;
        }
    }

    InferenceResult r;
    r.input = ppa::BitPlane(n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) r.input.set(x, y, in[y * n + x] > 0);
    }

    std::vector<int> features(kFeatures, -1);
    for (int c = 0; c < kChannels; ++c) {
        const auto& k = model.conv_kernels[c];
        r.conv[c] = ppa::BitPlane(n);
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                int sum = 0;
                for (int ky = 0; ky < kKernelSide; ++ky) {
                    for (int kx = 0; kx < kKernelSide; ++kx) {
                        const int iy = y + ky - 1, ix = x + kx - 1;
                        if (iy < 0 || iy >= n || ix < 0 || ix >= n) continue;
                        sum += k[ky * kKernelSide + kx] * in[iy * n + ix];
                    }
                }
                if (static_cast<double>(sum) >= static_cast<double>(model.conv_thresholds[c])) {
                    r.conv[c].set(x, y, true);
                }
            }
        }
        r.pooled[c] = ppa::BitPlane(kPooledSize);
        for (int py = 0; py < kPooledSize; ++py) {
            for (int px = 0; px < kPooledSize; ++px) {
                bool any = false;
                for (int wy = 0; wy < kPoolWindow && !any; ++wy) {
                    for (int wx = 0; wx < kPoolWindow && !any; ++wx) {
                        any = r.conv[c].get(px * kPoolWindow + wx, py * kPoolWindow + wy);
                    }
                }
                r.pooled[c].set(px, py, any);
                features[feature_index(c, py, px)] = any ? 1 : -1;
            }
        }
    }

    auto dot = [&](const FcWeights& w) {
        int s = 0;
        for (int i = 0; i < kFeatures; ++i) s += w[i] * features[i];
        return s;
    };
    std::array<int, kLabels> sx{}, sy{};
    for (int o = 0; o < kLabels; ++o) {
        sx[o] = dot(model.fc_x[o]);
        sy[o] = dot(model.fc_y[o]);
    }
    r.prediction = make_prediction(sx, sy);
    return r;
}

int xnor_dot(std::span<const std::int8_t> w, std::span<const std::int8_t> a) {
    if (w.size() != a.size()) throw ShapeError("xnor_dot: vectors differ in length");
    const std::size_t n = w.size();
    int matches = 0;
    for (std::size_t base = 0; base < n; base += 64) {
        const std::size_t len = std::min<std::size_t>(64, n - base);
        std::uint64_t wb = 0, ab = 0;
        for (std::size_t i = 0; i < len; ++i) {
            require_pm1(w[base + i], "xnor_dot");
            require_pm1(a[base + i], "xnor_dot");
            wb |= static_cast<std::uint64_t>(w[base + i] > 0) << i;
            ab |= static_cast<std::uint64_t>(a[base + i] > 0) << i;
        }
        const std::uint64_t mask = len == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << len) - 1;
        matches += std::popcount(~(wb ^ ab) & mask);
    }
    return 2 * matches - static_cast<int>(n);
}

double agreement(const ppa::BitPlane& a, const ppa::BitPlane& b) {
    if (a.size() != b.size()) throw ShapeError("agreement: plane sizes differ");
    const int equal = ppa::popcount_global(ppa::xnor(a, b));
    return static_cast<double>(equal) / (static_cast<double>(a.size()) * a.size());
}

double agreement(std::span<const int> a, std::span<const int> b, double range) {
    if (a.size() != b.size()) throw ShapeError("agreement: score vectors differ in length");
    if (a.empty()) throw ShapeError("agreement: empty score vectors");
    if (!(range > 0.0)) throw RangeError("agreement: range must be positive");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(static_cast<double>(a[i]) - b[i]);
    return 1.0 - total / static_cast<double>(a.size()) / range;
}

std::vector<std::uint8_t> serialize_model(const BnnModel& model) {
    model.validate();
    std::vector<std::uint8_t> out(kModelMagic.begin(), kModelMagic.end());
    put_u32(out, kChannels);
    put_u32(out, kKernelSide);
    put_u32(out, kInputSize);
    put_u32(out, kPoolWindow);
    put_u32(out, kLabels);
    put_f32(out, model.input_threshold);

    std::vector<bool> kbits;
    for (const auto& k : model.conv_kernels) {
        for (auto w : k) kbits.push_back(w > 0);
    }
    put_bits(out, kbits);
    for (float t : model.conv_thresholds) put_f32(out, t);
    for (const auto* head : {&model.fc_x, &model.fc_y}) {
        std::vector<bool> bits;
        bits.reserve(static_cast<std::size_t>(kLabels) * kFeatures);
        for (const auto& w : *head) {
            for (auto v : w) bits.push_back(v > 0);
        }
        put_bits(out, bits);
    }
    return out;
}

BnnModel parse_model(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(4);
    if (!std::equal(magic.begin(), magic.end(), kModelMagic.begin())) throw IoError("not a BNN1 model file");
    const std::array<std::uint32_t, 5> expected{kChannels, kKernelSide, kInputSize, kPoolWindow, kLabels};
    for (auto e : expected) {
        if (r.u32() != e) throw ShapeError("model dimensions do not match this build");
    }
    BnnModel m;
    m.input_threshold = r.f32();
    auto kbits = r.pm1_bits(static_cast<std::size_t>(kChannels) * kKernelTaps);
    for (int c = 0; c < kChannels; ++c) {
        std::copy_n(kbits.begin() + c * kKernelTaps, kKernelTaps, m.conv_kernels[c].begin());
    }
    for (auto& t : m.conv_thresholds) t = r.f32();
    for (auto* head : {&m.fc_x, &m.fc_y}) {
        auto bits = r.pm1_bits(static_cast<std::size_t>(kLabels) * kFeatures);
        for (int o = 0; o < kLabels; ++o) {
            (*head)[o].assign(bits.begin() + static_cast<std::ptrdiff_t>(o) * kFeatures,
                              bits.begin() + static_cast<std::ptrdiff_t>(o + 1) * kFeatures);
        }
    }
    if (!r.done()) throw IoError("trailing bytes after model payload");
    m.validate();
    return m;
}

void save_model(const std::string& path, const BnnModel& model) {
    const auto bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

BnnModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_model(bytes);
}

}  // namespace ppasim::bnn
