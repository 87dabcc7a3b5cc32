#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "ppasim/bnn.hpp"
#include "ppasim/errors.hpp"
#include "ppasim/selfcheck.hpp"

using namespace ppasim;
using namespace ppasim::bnn;

namespace {

struct OracleOut {
    std::vector<int> features;  // +-1
    std::array<int, kLabels> sx{}, sy{};
};

// Direct evaluation in +-1 integer arithmetic, written independently of the
// library paths.
OracleOut oracle(const BnnModel& m, const GrayImage& img) {
    const int n = kInputSize;
    std::vector<int> in(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n * n; ++i) in[i] = (static_cast<double>(img.pixels[i]) - 128.0 >= m.input_threshold) ? 1 : -1;

    OracleOut o;
    o.features.assign(kFeatures, -1);
    for (int c = 0; c < kChannels; ++c) {
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                long sum = 0;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const int sx = x + kx - 1, sy = y + ky - 1;
                        if (sx < 0 || sx >= n || sy < 0 || sy >= n) continue;
                        sum += m.conv_kernels[c][ky * 3 + kx] * in[sy * n + sx];
                    }
                }
                if (static_cast<double>(sum) >= m.conv_thresholds[c]) {
                    o.features[c * 256 + (y / 4) * 16 + x / 4] = 1;
                }
            }
        }
    }
    for (int k = 0; k < kLabels; ++k) {
        long ax = 0, ay = 0;
        for (int f = 0; f < kFeatures; ++f) {
            ax += static_cast<long>(m.fc_x[k][f]) * o.features[f];
            ay += static_cast<long>(m.fc_y[k][f]) * o.features[f];
        }
        o.sx[k] = static_cast<int>(ax);
        o.sy[k] = static_cast<int>(ay);
    }
    return o;
}

}  // namespace

TEST_CASE("xnor-popcount identity against a dot product") {
    std::mt19937_64 rng(17);
    for (int n : {1, 8, 63, 64, 65, 2048}) {
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<std::int8_t> w(n), a(n);
            for (auto& v : w) v = (rng() & 1u) ? 1 : -1;
            for (auto& v : a) v = (rng() & 1u) ? 1 : -1;
            int dot = 0;
            for (int i = 0; i < n; ++i) dot += w[i] * a[i];
            REQUIRE(xnor_dot(w, a) == dot);
        }
    }
    const std::vector<std::int8_t> ones(10, 1), neg(10, -1), bad{1, 0};
    CHECK(xnor_dot(ones, ones) == 10);
    CHECK(xnor_dot(ones, neg) == -10);
    CHECK(xnor_dot({}, {}) == 0);
    CHECK_THROWS_AS(xnor_dot(ones, bad), ShapeError);
    CHECK_THROWS_AS(xnor_dot(bad, bad), RangeError);
}

TEST_CASE("argmax and predictions") {
    CHECK(argmax_lowest(std::array<int, 4>{3, 7, 7, 1}) == 1);
    CHECK(argmax_lowest(std::array<int, 8>{}) == 0);
    CHECK_THROWS_AS(argmax_lowest(std::span<const int>{}), ShapeError);

    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        std::array<int, kLabels> s{};
        for (auto& v : s) v = static_cast<int>(rng() % 9) - 4;
        const int base = argmax_lowest(s);
        const int shift = static_cast<int>(rng() % 2001) - 1000;
        for (auto& v : s) v += shift;
        REQUIRE(argmax_lowest(s) == base);
    }
}

TEST_CASE("zero-noise ppa inference equals the reference path") {
    const auto r = selfcheck::zero_noise_equivalence(100, 99);
    INFO(r.detail);
    CHECK(r.passed);
}

TEST_CASE("scores match the direct dot-product oracle") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        auto m = random_model(rng());
        m.input_threshold = static_cast<float>(static_cast<int>(rng() % 41) - 20);
        const auto img = selfcheck::random_frame(rng);
        const auto ref = infer_reference(m, img);
        const auto o = oracle(m, img);
        const auto f = ref.features();
        for (int i = 0; i < kFeatures; ++i) REQUIRE((f[i] ? 1 : -1) == o.features[i]);
        CHECK(ref.prediction.scores_x == o.sx);
        CHECK(ref.prediction.scores_y == o.sy);
        CHECK(ref.prediction.label_x == argmax_lowest(o.sx));
        CHECK(ref.prediction.label_y == argmax_lowest(o.sy));
    }
}

TEST_CASE("fc weights equal to the features score F") {
    std::mt19937_64 rng(5);
    auto m = random_model(rng());
    const auto img = selfcheck::random_frame(rng);
    const auto feats = infer_reference(m, img).features();
    for (int f = 0; f < kFeatures; ++f) m.fc_x[6][f] = feats[f] ? 1 : -1;
    const auto p = infer_reference(m, img).prediction;
    CHECK(p.scores_x[6] == kFeatures);
    CHECK(p.label_x == 6);
}

TEST_CASE("constant input propagates through the kernel sums") {
    // All-zero frame binarizes to all -1; the conv output at an interior pixel
    // is minus the kernel sum.
    std::mt19937_64 rng(8);
    auto m = random_model(rng());
    for (int c = 0; c < kChannels; ++c) {
        int ksum = 0;
        for (auto w : m.conv_kernels[c]) ksum += w;
        m.conv_thresholds[c] = static_cast<float>(-ksum);  // interior passes exactly at the threshold
    }
    const auto r = infer_reference(m, GrayImage(kInputSize, kInputSize, 0));
    CHECK(ppa::popcount_global(r.input) == 0);
    for (int c = 0; c < kChannels; ++c) {
        for (int y = 1; y < kInputSize - 1; ++y) {
            for (int x = 1; x < kInputSize - 1; ++x) REQUIRE(r.conv[c].get(x, y));
        }
    }
    const auto again = infer_reference(m, GrayImage(kInputSize, kInputSize, 0));
    CHECK(again.prediction == r.prediction);
}

TEST_CASE("noisy inference is reproducible for a fixed seed") {
    std::mt19937_64 rng(4);
    const auto m = random_model(rng());
    const auto img = selfcheck::random_frame(rng);
    ppa::NoiseStream a({1.0, 0.25, 77}), b({1.0, 0.25, 77});
    const auto ra = infer_ppa(m, img, a), rb = infer_ppa(m, img, b);
    CHECK(ra.prediction == rb.prediction);
    for (int c = 0; c < kChannels; ++c) CHECK(ra.conv[c] == rb.conv[c]);
}

TEST_CASE("inference rejects wrong frame sizes") {
    const auto m = random_model(1);
    ppa::NoiseStream silent(ppa::NoiseModel::noiseless());
    CHECK_THROWS_AS(infer_reference(m, GrayImage(32, 32)), ShapeError);
    CHECK_THROWS_AS(infer_ppa(m, GrayImage(64, 63), silent), ShapeError);
}

TEST_CASE("agreement") {
    std::mt19937_64 rng(12);
    ppa::BitPlane p(64);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) p.set(x, y, rng() & 1u);
    }
    CHECK(agreement(p, p) == 1.0);
    CHECK(agreement(p, ppa::invert(p)) == 0.0);
    CHECK_THROWS_AS(agreement(p, ppa::BitPlane(32)), ShapeError);

    const std::array<int, 2> a{0, 100}, b{10, 90};
    CHECK(agreement(a, a) == 1.0);
    CHECK(agreement(a, b, 100.0) == doctest::Approx(0.9));
    CHECK_THROWS_AS(agreement(std::array<int, 2>{}, std::array<int, 3>{}), ShapeError);
}

TEST_CASE("BNN1 serialization") {
    std::mt19937_64 rng(3);
    auto m = random_model(rng());
    m.input_threshold = -3.25f;
    const auto bytes = serialize_model(m);
    CHECK(bytes.size() == 4165);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "BNN1");
    CHECK(parse_model(bytes) == m);

    SUBCASE("file round-trip") {
        const auto path = (std::filesystem::temp_directory_path() / "ppasim_test_model.bnn").string();
        save_model(path, m);
        CHECK(load_model(path) == m);
        std::filesystem::remove(path);
    }
    SUBCASE("bad magic") {
        auto bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(parse_model(bad), IoError);
    }
    SUBCASE("truncated") {
        CHECK_THROWS_AS(parse_model(std::span(bytes).first(bytes.size() - 1)), IoError);
    }
    SUBCASE("trailing bytes") {
        auto longer = bytes;
        longer.push_back(0);
        CHECK_THROWS_AS(parse_model(longer), IoError);
    }
    SUBCASE("wrong dimensions") {
        auto bad = bytes;
        bad[4] = 9;  // channels
        CHECK_THROWS_AS(parse_model(bad), ShapeError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_model("/nonexistent/model.bnn"), IoError); }
}

TEST_CASE("model validation") {
    auto m = random_model(1);
    CHECK_NOTHROW(m.validate());
    m.conv_kernels[2][4] = 0;
    CHECK_THROWS_AS(m.validate(), RangeError);
    m = random_model(1);
    m.fc_y[3].pop_back();
    CHECK_THROWS_AS(m.validate(), ShapeError);
}
