#include "ppasim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "ppasim/errors.hpp"

namespace ppasim::train {

namespace {

using bnn::kChannels;
using bnn::kFeatures;
using bnn::kInputSize;
using bnn::kKernelSide;
using bnn::kKernelTaps;
using bnn::kLabels;
using bnn::kPlaneFeatures;
using bnn::kPooledSize;
using bnn::kPoolWindow;

constexpr int kPixels = kInputSize * kInputSize;
constexpr double kRunningMomentum = 0.1;
constexpr std::size_t kNoiseTable = std::size_t{1} << 20;

float sign_pm(float v) { return v >= 0.0f ? 1.0f : -1.0f; }

// +1/-1 input planes, binarized the same way inference does.
std::vector<std::int8_t> binarize_inputs(const world::Dataset& data, float input_threshold) {
    std::vector<std::int8_t> out(data.size() * kPixels);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& img = data[i].image;
        if (img.width != kInputSize || img.height != kInputSize) throw ShapeError("training frames must be 64x64");
        for (int p = 0; p < kPixels; ++p) {
            const int centered = static_cast<int>(img.pixels[p]) - 128;
            out[i * kPixels + p] = static_cast<double>(centered) >= input_threshold ? 1 : -1;
        }
    }
    return out;
}

// Valid output range for a tap offset along one axis.
struct TapRange {
    int lo, hi, off;
};
TapRange tap_range(int k) {
    const int off = k - 1;
    return {std::max(0, -off), std::min(kInputSize, kInputSize - off), off};
}

struct Softmax {
    std::array<double, kLabels> p{};
    double loss = 0.0;
};

Softmax softmax_xent(const std::array<double, kLabels>& logits, int label) {
    Softmax s;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (int o = 0; o < kLabels; ++o) {
        s.p[o] = std::exp(logits[o] - mx);
        z += s.p[o];
    }
    for (auto& v : s.p) v /= z;
    s.loss = -(logits[label] - mx - std::log(z));
    return s;
}

class Trainer {
public:
    Trainer(const TrainConfig& cfg, LatentModel latent, const world::Dataset& data)
        : cfg_(cfg), m_(std::move(latent)), data_(data), inputs_(binarize_inputs(data, m_.input_threshold)) {
        const auto b = static_cast<std::size_t>(cfg.batch_size);
        v_.resize(b * kChannels * kPixels);
        xhat_.resize(v_.size());
        pooled_.resize(b * kFeatures);
        argpos_.resize(b * kFeatures);
        act_.resize(b * kFeatures);
        gconv_vel_.fill({});
        gbeta_vel_.fill(0.0);
        for (int o = 0; o < kLabels; ++o) {
            fcx_vel_[o].assign(kFeatures, 0.0f);
            fcy_vel_[o].assign(kFeatures, 0.0f);
        }
        if (cfg.conv_noise_sigma > 0.0) {
            // Sampling a fresh Gaussian per pixel dominates the epoch time; a
            // fixed table read at random offsets is indistinguishable here.
            std::mt19937_64 nrng(world::derive_seed(cfg.seed, 2));
            std::normal_distribution<float> unit(0.0f, 1.0f);
            noise_table_.resize(kNoiseTable);
            for (auto& v : noise_table_) v = static_cast<float>(cfg.conv_noise_sigma) * unit(nrng);
            noise_rng_.seed(world::derive_seed(cfg.seed, 3));
        }
    }

    // Runs one pass over the shuffled training set.
    EpochMetrics epoch(std::mt19937_64& rng) {
        std::vector<std::size_t> order(data_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);

        EpochMetrics em;
        double sum_lx = 0.0, sum_ly = 0.0;
        std::size_t correct_x = 0, correct_y = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
            const std::span<const std::size_t> batch(order.data() + start, end - start);
            const auto r = step(batch);
            sum_lx += r.loss_x;
            sum_ly += r.loss_y;
            correct_x += r.correct_x;
            correct_y += r.correct_y;
        }
        const auto n = static_cast<double>(data_.size());
        em.loss_x = sum_lx / n;
        em.loss_y = sum_ly / n;
        em.loss = em.loss_x + em.loss_y;
        em.train_acc_x = static_cast<double>(correct_x) / n;
        em.train_acc_y = static_cast<double>(correct_y) / n;
        if (!std::isfinite(em.loss)) throw TrainingDivergedError("training loss became non-finite");
        for (int c = 0; c < kChannels; ++c) {
            if (!std::isfinite(m_.bn_beta[c]) || !std::isfinite(m_.bn_mean[c]) || !std::isfinite(m_.bn_var[c])) {
                throw TrainingDivergedError("batch-norm parameters became non-finite");
            }
        }
        return em;
    }

    const LatentModel& model() const { return m_; }
    void set_noise_scale(float s) { noise_scale_ = s; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    struct BatchResult {
        double loss_x = 0.0, loss_y = 0.0;
        std::size_t correct_x = 0, correct_y = 0;
    };

    const std::int8_t* input(std::size_t sample) const { return inputs_.data() + sample * kPixels; }

    BatchResult step(std::span<const std::size_t> batch) {
        const int B = static_cast<int>(batch.size());
        const std::size_t plane_stride = kPixels;
        const std::size_t sample_stride = static_cast<std::size_t>(kChannels) * kPixels;

        // --- conv with binarized kernels ---
        std::array<std::array<float, kKernelTaps>, kChannels> kw{};
        for (int c = 0; c < kChannels; ++c) {
            for (int t = 0; t < kKernelTaps; ++t) kw[c][t] = sign_pm(m_.conv[c][t]);
        }
        std::fill(v_.begin(), v_.begin() + static_cast<std::ptrdiff_t>(B * sample_stride), 0.0f);
        for (int b = 0; b < B; ++b) {
            const std::int8_t* in = input(batch[b]);
            for (int c = 0; c < kChannels; ++c) {
                float* out = v_.data() + b * sample_stride + c * plane_stride;
                for (int ky = 0; ky < kKernelSide; ++ky) {
                    const auto ry = tap_range(ky);
                    for (int kx = 0; kx < kKernelSide; ++kx) {
                        const auto rx = tap_range(kx);
                        const float w = kw[c][ky * kKernelSide + kx];
                        for (int y = ry.lo; y < ry.hi; ++y) {
                            const std::int8_t* src = in + (y + ry.off) * kInputSize + rx.off;
                            float* dst = out + y * kInputSize;
                            for (int x = rx.lo; x < rx.hi; ++x) dst[x] += w * static_cast<float>(src[x]);
                        }
                    }
                }
            }
        }

        if (!noise_table_.empty() && noise_scale_ > 0.0f) {
            for (int b = 0; b < B; ++b) {
                for (int c = 0; c < kChannels; ++c) {
                    float* out = v_.data() + b * sample_stride + c * plane_stride;
                    const std::size_t off = noise_rng_() & (kNoiseTable - 1);
                    for (int i = 0; i < kPixels; ++i) {
                        out[i] += noise_scale_ * noise_table_[(off + i) & (kNoiseTable - 1)];
                    }
                }
            }
        }

        // --- batch norm (scale fixed at 1) ---
        const double count = static_cast<double>(B) * kPixels;
        std::array<double, kChannels> mean{}, inv_std{};
        for (int c = 0; c < kChannels; ++c) {
            double s = 0.0, s2 = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* p = v_.data() + b * sample_stride + c * plane_stride;
                for (int i = 0; i < kPixels; ++i) {
                    s += p[i];
                    s2 += static_cast<double>(p[i]) * p[i];
                }
            }
            mean[c] = s / count;
            const double var = std::max(0.0, s2 / count - mean[c] * mean[c]);
            inv_std[c] = 1.0 / std::sqrt(var + kBnEpsilon);
            m_.bn_mean[c] = (1.0 - kRunningMomentum) * m_.bn_mean[c] + kRunningMomentum * mean[c];
            m_.bn_var[c] = (1.0 - kRunningMomentum) * m_.bn_var[c] + kRunningMomentum * var;
        }
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < kChannels; ++c) {
                const float* p = v_.data() + b * sample_stride + c * plane_stride;
                float* q = xhat_.data() + b * sample_stride + c * plane_stride;
                const auto mu = static_cast<float>(mean[c]);
                const auto is = static_cast<float>(inv_std[c]);
                for (int i = 0; i < kPixels; ++i) q[i] = (p[i] - mu) * is;
            }
        }

        // --- max pool of the normalized response, then sign ---
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < kChannels; ++c) {
                const float* q = xhat_.data() + b * sample_stride + c * plane_stride;
                const auto beta = static_cast<float>(m_.bn_beta[c]);
                for (int py = 0; py < kPooledSize; ++py) {
                    for (int px = 0; px < kPooledSize; ++px) {
                        int best = (py * kPoolWindow) * kInputSize + px * kPoolWindow;
                        for (int wy = 0; wy < kPoolWindow; ++wy) {
                            for (int wx = 0; wx < kPoolWindow; ++wx) {
                                const int pos = (py * kPoolWindow + wy) * kInputSize + px * kPoolWindow + wx;
                                if (q[pos] > q[best]) best = pos;
                            }
                        }
                        const std::size_t f = b * static_cast<std::size_t>(kFeatures) + c * kPlaneFeatures +
                                              py * kPooledSize + px;
                        pooled_[f] = q[best] + beta;
                        argpos_[f] = best;
                        act_[f] = sign_pm(pooled_[f]);
                    }
                }
            }
        }

        // --- binary FC heads, softmax cross-entropy ---
        std::array<std::vector<float>, kLabels> wx, wy;
        for (int o = 0; o < kLabels; ++o) {
            wx[o].resize(kFeatures);
            wy[o].resize(kFeatures);
            for (int f = 0; f < kFeatures; ++f) {
                wx[o][f] = sign_pm(m_.fc_x[o][f]);
                wy[o][f] = sign_pm(m_.fc_y[o][f]);
            }
        }
        const double scale = 1.0 / std::sqrt(static_cast<double>(kFeatures));

        BatchResult res;
        std::array<std::vector<double>, kLabels> gfx, gfy;
        for (int o = 0; o < kLabels; ++o) {
            gfx[o].assign(kFeatures, 0.0);
            gfy[o].assign(kFeatures, 0.0);
        }
        std::vector<double> gact(static_cast<std::size_t>(B) * kFeatures, 0.0);

        for (int b = 0; b < B; ++b) {
            const float* a = act_.data() + b * static_cast<std::size_t>(kFeatures);
            std::array<double, kLabels> lx{}, ly{};
            std::array<int, kLabels> sx{}, sy{};
            for (int o = 0; o < kLabels; ++o) {
                float dx = 0.0f, dy = 0.0f;
                for (int f = 0; f < kFeatures; ++f) {
                    dx += wx[o][f] * a[f];
                    dy += wy[o][f] * a[f];
                }
                sx[o] = static_cast<int>(dx);
                sy[o] = static_cast<int>(dy);
                lx[o] = dx * scale;
                ly[o] = dy * scale;
            }
            const auto& frame = data_[batch[b]];
            const auto smx = softmax_xent(lx, frame.label_x);
            const auto smy = softmax_xent(ly, frame.label_y);
            res.loss_x += smx.loss;
            res.loss_y += smy.loss;
            if (bnn::argmax_lowest(sx) == frame.label_x) ++res.correct_x;
            if (bnn::argmax_lowest(sy) == frame.label_y) ++res.correct_y;

            double* ga = gact.data() + b * static_cast<std::size_t>(kFeatures);
            for (int o = 0; o < kLabels; ++o) {
                const double gx = (smx.p[o] - (o == frame.label_x ? 1.0 : 0.0)) * scale / B;
                const double gy = (smy.p[o] - (o == frame.label_y ? 1.0 : 0.0)) * scale / B;
                for (int f = 0; f < kFeatures; ++f) {
                    gfx[o][f] += gx * a[f];
                    gfy[o][f] += gy * a[f];
                    ga[f] += gx * wx[o][f] + gy * wy[o][f];
                }
            }
        }

        // --- back through sign (hard-tanh STE), pool and batch norm ---
        std::array<double, kChannels> gbeta{}, g1{}, g2{};
        // Sparse gradient w.r.t. the normalized response at pooled positions.
        std::vector<std::pair<std::size_t, double>> gz;
        gz.reserve(static_cast<std::size_t>(B) * kFeatures);
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < kChannels; ++c) {
                for (int i = 0; i < kPlaneFeatures; ++i) {
                    const std::size_t f = b * static_cast<std::size_t>(kFeatures) + c * kPlaneFeatures + i;
                    if (std::abs(pooled_[f]) > 1.0f) continue;
                    const double g = gact[f];
                    const std::size_t pos = b * sample_stride + c * plane_stride + argpos_[f];
                    gz.emplace_back(pos, g);
                    gbeta[c] += g;
                    g1[c] += g;
                    g2[c] += g * xhat_[pos];
                }
            }
        }

        // dv = inv_std * (gz - g1/N - xhat * g2/N), accumulated into kernel grads.
        std::vector<float> gv(static_cast<std::size_t>(B) * sample_stride);
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < kChannels; ++c) {
                const std::size_t base = b * sample_stride + c * plane_stride;
                const auto k1 = static_cast<float>(g1[c] / count);
                const auto k2 = static_cast<float>(g2[c] / count);
                const auto is = static_cast<float>(inv_std[c]);
                for (int i = 0; i < kPixels; ++i) gv[base + i] = -is * (k1 + xhat_[base + i] * k2);
            }
        }
        for (const auto& [pos, g] : gz) {
            const int c = static_cast<int>((pos % sample_stride) / plane_stride);
            gv[pos] += static_cast<float>(inv_std[c] * g);
        }

        std::array<std::array<double, kKernelTaps>, kChannels> gk{};
        for (int b = 0; b < B; ++b) {
            const std::int8_t* in = input(batch[b]);
            for (int c = 0; c < kChannels; ++c) {
                const float* g = gv.data() + b * sample_stride + c * plane_stride;
                for (int ky = 0; ky < kKernelSide; ++ky) {
                    const auto ry = tap_range(ky);
                    for (int kx = 0; kx < kKernelSide; ++kx) {
                        const auto rx = tap_range(kx);
                        float acc = 0.0f;
                        for (int y = ry.lo; y < ry.hi; ++y) {
                            const std::int8_t* src = in + (y + ry.off) * kInputSize + rx.off;
                            const float* gr = g + y * kInputSize;
                            for (int x = rx.lo; x < rx.hi; ++x) acc += gr[x] * static_cast<float>(src[x]);
                        }
                        gk[c][ky * kKernelSide + kx] += acc;
                    }
                }
            }
        }

        // --- momentum SGD on latent weights, clipped to [-1, 1] ---
        // With clipping the STE window |latent| <= 1 always passes.
        const double lr = lr_, mom = cfg_.momentum;
        auto update = [&](float& w, float& vel, double g) {
            vel = static_cast<float>(mom * vel + g);
            w = std::clamp(static_cast<float>(w - lr * vel), -1.0f, 1.0f);
        };
        for (int c = 0; c < kChannels; ++c) {
            for (int t = 0; t < kKernelTaps; ++t) update(m_.conv[c][t], gconv_vel_[c][t], gk[c][t]);
            gbeta_vel_[c] = mom * gbeta_vel_[c] + gbeta[c];
            m_.bn_beta[c] -= lr * gbeta_vel_[c];
        }
        for (int o = 0; o < kLabels; ++o) {
            for (int f = 0; f < kFeatures; ++f) {
                update(m_.fc_x[o][f], fcx_vel_[o][f], gfx[o][f]);
                update(m_.fc_y[o][f], fcy_vel_[o][f], gfy[o][f]);
            }
        }
        return res;
    }

    TrainConfig cfg_;
    LatentModel m_;
    const world::Dataset& data_;
    std::vector<std::int8_t> inputs_;

    std::vector<float> v_, xhat_, pooled_, act_;
    std::vector<int> argpos_;
    std::vector<float> noise_table_;
    std::mt19937_64 noise_rng_;
    float noise_scale_ = 0.0f;
    double lr_ = 0.0;

    std::array<std::array<float, kKernelTaps>, kChannels> gconv_vel_{};
    std::array<double, kChannels> gbeta_vel_{};
    std::array<std::vector<float>, kLabels> fcx_vel_, fcy_vel_;
};

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be finite and non-negative");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (noise_warmup_epochs < 0) throw ConfigError("noise_warmup_epochs must be >= 0");
    if (!(conv_noise_sigma >= 0.0) || !std::isfinite(conv_noise_sigma)) {
        throw ConfigError("conv_noise_sigma must be finite and >= 0");
    }
}

double learning_rate_at(const TrainConfig& config, int epoch) {
    const double t = static_cast<double>(epoch - 1) / config.epochs;
    return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

LatentModel init_latent(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> conv_init(-1.0f, 1.0f);
    std::uniform_real_distribution<float> fc_init(-0.1f, 0.1f);
    LatentModel m;
    for (auto& k : m.conv) {
        for (auto& w : k) w = conv_init(rng);
    }
    for (auto* head : {&m.fc_x, &m.fc_y}) {
        for (auto& w : *head) {
            w.resize(kFeatures);
            for (auto& v : w) v = fc_init(rng);
        }
    }
    m.bn_var.fill(1.0);
    return m;
}

TrainResult train(const TrainConfig& config, const world::Dataset& train_set, const world::Dataset& test_set) {
    config.validate();
    if (train_set.empty()) throw ConfigError("training set is empty");
    if (test_set.empty()) throw ConfigError("test set is empty");
    for (const auto* set : {&train_set, &test_set}) {
        for (const auto& f : *set) {
            if (f.label_x >= kLabels || f.label_y >= kLabels) throw ConfigError("dataset label out of range");
        }
    }

    std::mt19937_64 rng(config.seed);
    Trainer trainer(config, init_latent(world::derive_seed(config.seed, 1)), train_set);

    TrainResult result;
    for (int e = 1; e <= config.epochs; ++e) {
        const int warm = config.noise_warmup_epochs;
        const double ramp = warm <= 0 ? 1.0 : std::clamp(static_cast<double>(e - warm) / warm, 0.0, 1.0);
        trainer.set_noise_scale(static_cast<float>(ramp));
        trainer.set_learning_rate(learning_rate_at(config, e));
        auto em = trainer.epoch(rng);
        em.epoch = e;
        const auto acc = evaluate(export_model(trainer.model()), test_set);
        em.acc_x = acc.x;
        em.acc_y = acc.y;
        em.acc_joint = acc.joint;
        result.history.push_back(em);
    }
    result.latent = trainer.model();
    return result;
}

TrainResult train(const TrainConfig& config) {
    config.validate();
    if (config.dataset_path.empty()) throw ConfigError("dataset_path is not set");
    const auto train_set = world::load_dataset(world::train_file(config.dataset_path));
    const auto test_set = world::load_dataset(world::test_file(config.dataset_path));
    return train(config, train_set, test_set);
}

float fold_threshold(double mean, double var, double beta) {
    if (!std::isfinite(mean) || !std::isfinite(var) || !std::isfinite(beta) || var < 0.0) {
        throw ExportError("batch-norm statistics are not finite");
    }
    return static_cast<float>(mean - beta * std::sqrt(var + kBnEpsilon));
}

bnn::BnnModel export_model(const LatentModel& latent) {
    bnn::BnnModel m;
    for (int c = 0; c < kChannels; ++c) {
        for (int t = 0; t < kKernelTaps; ++t) {
            m.conv_kernels[c][t] = latent.conv[c][t] >= 0.0f ? 1 : -1;
        }
        m.conv_thresholds[c] = fold_threshold(latent.bn_mean[c], latent.bn_var[c], latent.bn_beta[c]);
    }
    for (int o = 0; o < kLabels; ++o) {
        for (auto [src, dst] : {std::pair{&latent.fc_x, &m.fc_x}, std::pair{&latent.fc_y, &m.fc_y}}) {
            const auto& w = (*src)[o];
            if (w.size() != static_cast<std::size_t>(kFeatures)) throw ExportError("latent FC vector has wrong length");
            auto& out = (*dst)[o];
            out.resize(kFeatures);
            for (int f = 0; f < kFeatures; ++f) out[f] = w[f] >= 0.0f ? 1 : -1;
        }
    }
    m.input_threshold = latent.input_threshold;
    return m;
}

Accuracy evaluate(const bnn::BnnModel& model, const world::Dataset& data) {
    if (data.empty()) throw ConfigError("cannot evaluate on an empty dataset");
    std::size_t cx = 0, cy = 0, cj = 0;
    for (const auto& f : data) {
        const auto p = bnn::infer_reference(model, f.image).prediction;
        const bool ok_x = p.label_x == f.label_x, ok_y = p.label_y == f.label_y;
        cx += ok_x;
        cy += ok_y;
        cj += ok_x && ok_y;
    }
    const auto n = static_cast<double>(data.size());
    return {static_cast<double>(cx) / n, static_cast<double>(cy) / n, static_cast<double>(cj) / n};
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
    std::ostringstream out;
    out << "epoch,loss,acc_x,acc_y,acc_joint,loss_x,loss_y,train_acc_x,train_acc_y\n";
    char buf[256];
    for (const auto& m : history) {
        std::snprintf(buf, sizeof buf, "%d,%.9f,%.6f,%.6f,%.6f,%.9f,%.9f,%.6f,%.6f\n", m.epoch, m.loss, m.acc_x,
                      m.acc_y, m.acc_joint, m.loss_x, m.loss_y, m.train_acc_x, m.train_acc_y);
        out << buf;
    }
    return out.str();
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << metrics_csv(history);
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace ppasim::train
