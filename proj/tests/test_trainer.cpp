#include <doctest.h>

#include <cmath>
#include <random>

#include "ppasim/errors.hpp"
#include "ppasim/trainer.hpp"

using namespace ppasim;
using namespace ppasim::train;

namespace {

const std::pair<world::Dataset, world::Dataset>& small_sets() {
    static const auto sets = [] {
        world::DatasetSpec spec;
        spec.n_train = 96;
        spec.n_test = 32;
        spec.seed = 21;
        return world::generate_dataset(spec);
    }();
    return sets;
}

TrainConfig quick_config() {
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 16;
    c.noise_warmup_epochs = 1;
    return c;
}

// sign(BN(v)) with the fixed unit scale, written out directly.
bool bn_sign(double v, double mean, double var, double beta) {
    return (v - mean) / std::sqrt(var + kBnEpsilon) + beta >= 0.0;
}

}  // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(TrainConfig{}.validate());
    auto c = TrainConfig{};
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.learning_rate = -1e-3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.momentum = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.conv_noise_sigma = std::nan("");
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("learning rate schedule") {
    TrainConfig c;
    c.epochs = 10;
    c.learning_rate = 0.05;
    CHECK(learning_rate_at(c, 1) == doctest::Approx(0.05));
    double prev = 1.0;
    for (int e = 1; e <= c.epochs; ++e) {
        const double lr = learning_rate_at(c, e);
        CHECK(lr > 0.0);
        CHECK(lr < prev);
        prev = lr;
    }
}

TEST_CASE("fold correctness") {
    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> mean_d(-6.0, 6.0), var_d(0.05, 30.0), beta_d(-2.0, 2.0);
    std::uniform_real_distribution<double> real_v(-9.0, 9.0);
    std::uniform_int_distribution<int> int_v(-9, 9);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const double mean = mean_d(rng), var = var_d(rng), beta = beta_d(rng);
        const float t = fold_threshold(mean, var, beta);
        // Realizable conv sums are integers; also probe arbitrary reals.
        for (double v : {static_cast<double>(int_v(rng)), real_v(rng)}) {
            // Skip values within float rounding of the boundary.
            if (std::abs(v - t) < 1e-4) continue;
            REQUIRE(bn_sign(v, mean, var, beta) == (v >= t));
            ++checked;
        }
    }
    CHECK(checked > 1900);
    CHECK_THROWS_AS(fold_threshold(std::nan(""), 1.0, 0.0), ExportError);
    CHECK_THROWS_AS(fold_threshold(0.0, INFINITY, 0.0), ExportError);
}

TEST_CASE("export binarizes with sign(0) = +1") {
    LatentModel l = init_latent(1);
    for (auto& k : l.conv) k.fill(0.3f);
    for (auto* head : {&l.fc_x, &l.fc_y}) {
        for (auto& w : *head) std::fill(w.begin(), w.end(), 0.3f);
    }
    auto m = export_model(l);
    for (const auto& k : m.conv_kernels) {
        for (auto w : k) CHECK(w == 1);
    }
    for (const auto& w : m.fc_y) CHECK(std::count(w.begin(), w.end(), 1) == bnn::kFeatures);

    l.conv[0][0] = 0.0f;
    l.conv[0][1] = -0.0f;
    l.conv[0][2] = -1e-6f;
    m = export_model(l);
    CHECK(m.conv_kernels[0][0] == 1);
    CHECK(m.conv_kernels[0][1] == 1);
    CHECK(m.conv_kernels[0][2] == -1);

    const auto bytes = bnn::serialize_model(m);
    CHECK(bnn::parse_model(bytes) == m);

    l.bn_var[3] = std::nan("");
    CHECK_THROWS_AS(export_model(l), ExportError);
}

TEST_CASE("empty or invalid datasets") {
    const auto& [tr, te] = small_sets();
    CHECK_THROWS_AS(train::train(quick_config(), world::Dataset{}, te), ConfigError);
    CHECK_THROWS_AS(train::train(quick_config(), tr, world::Dataset{}), ConfigError);
    auto bad = te;
    bad[0].label_y = 8;
    CHECK_THROWS_AS(train::train(quick_config(), tr, bad), ConfigError);
    auto c = quick_config();
    CHECK_THROWS_AS(train::train(c), ConfigError);  // no dataset_path
    c.dataset_path = "/nonexistent/dir";
    CHECK_THROWS_AS(train::train(c), IoError);
}

TEST_CASE("zero learning rate leaves the weights at their initial values") {
    const auto& [tr, te] = small_sets();
    auto c = quick_config();
    c.learning_rate = 0.0;
    const auto r = train::train(c, tr, te);
    const auto init = init_latent(world::derive_seed(c.seed, 1));
    CHECK(r.latent.conv == init.conv);
    CHECK(r.latent.fc_x == init.fc_x);
    CHECK(r.latent.fc_y == init.fc_y);
    CHECK(r.latent.bn_beta == init.bn_beta);
}

TEST_CASE("a single example is memorized") {
    const world::Dataset one{small_sets().first[5]};
    TrainConfig c;
    c.epochs = 40;
    c.batch_size = 1;
    c.conv_noise_sigma = 0.0;
    const auto r = train::train(c, one, one);
    const auto p = bnn::infer_reference(export_model(r.latent), one[0].image).prediction;
    CHECK(p.label_x == one[0].label_x);
    CHECK(p.label_y == one[0].label_y);
    CHECK(r.history.back().acc_joint == 1.0);
}

TEST_CASE("training run properties") {
    const auto& [tr, te] = small_sets();
    const auto c = quick_config();
    const auto a = train::train(c, tr, te);
    REQUIRE(a.history.size() == 3);

    SUBCASE("seeded determinism") {
        const auto b = train::train(c, tr, te);
        CHECK(metrics_csv(a.history) == metrics_csv(b.history));
        CHECK(bnn::serialize_model(export_model(a.latent)) == bnn::serialize_model(export_model(b.latent)));
        auto other = c;
        other.seed = 2;
        CHECK(metrics_csv(train::train(other, tr, te).history) != metrics_csv(a.history));
    }
    SUBCASE("loss is the sum of both heads") {
        for (const auto& m : a.history) CHECK(std::abs(m.loss - (m.loss_x + m.loss_y)) <= 1e-6);
    }
    SUBCASE("shadow weights stay clipped") {
        for (const auto& k : a.latent.conv) {
            for (float w : k) CHECK((w >= -1.0f && w <= 1.0f));
        }
        for (const auto* head : {&a.latent.fc_x, &a.latent.fc_y}) {
            for (const auto& w : *head) {
                for (float v : w) REQUIRE((v >= -1.0f && v <= 1.0f));
            }
        }
    }
    SUBCASE("exported model reproduces the final reported accuracy") {
        const auto acc = evaluate(export_model(a.latent), te);
        CHECK(acc.x == a.history.back().acc_x);
        CHECK(acc.y == a.history.back().acc_y);
        CHECK(acc.joint == a.history.back().acc_joint);
    }
    SUBCASE("metrics CSV") {
        const auto csv = metrics_csv(a.history);
        CHECK(csv.rfind("epoch,loss,acc_x,acc_y,acc_joint,", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    }
}

TEST_CASE("a diverging run is reported") {
    const auto& [tr, te] = small_sets();
    auto c = quick_config();
    c.learning_rate = 1e308;
    CHECK_THROWS_AS(train::train(c, tr, te), TrainingDivergedError);
}
