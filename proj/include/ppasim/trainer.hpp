#pragma once

// Straight-through-estimator training of the binarized localisation network.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ppasim/bnn.hpp"
#include "ppasim/world.hpp"

namespace ppasim::train {

inline constexpr double kBnEpsilon = 1e-5;

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    // Peak rate; epoch e (1-based) uses lr * (1 + cos(pi (e - 1) / epochs)) / 2.
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    // Std-dev of Gaussian noise added to conv sums in the training forward
    // pass, so the learned thresholds keep a margin the emulated array can
    // honour. Nine analogue ops at sigma_op = 0.25 give 0.75; the default adds
    // headroom for the input read noise as well.
    double conv_noise_sigma = 1.0;
    // Noise is off for the first `noise_warmup_epochs` epochs, then ramps
    // linearly to full strength over the same number of epochs.
    int noise_warmup_epochs = 5;
    // Directory holding train.loc1 and test.loc1.
    std::string dataset_path;

    void validate() const;
};

// Real-valued shadow weights in [-1, 1] plus batch-norm state. The batch-norm
// scale is fixed at 1; only the shift is learned.
struct LatentModel {
    std::array<std::array<float, bnn::kKernelTaps>, bnn::kChannels> conv{};
    std::array<std::vector<float>, bnn::kLabels> fc_x;
    std::array<std::vector<float>, bnn::kLabels> fc_y;
    std::array<double, bnn::kChannels> bn_beta{};
    std::array<double, bnn::kChannels> bn_mean{};
    std::array<double, bnn::kChannels> bn_var{};
    float input_threshold = 0.0f;

    bool operator==(const LatentModel&) const = default;
};

LatentModel init_latent(std::uint64_t seed);

double learning_rate_at(const TrainConfig& config, int epoch);

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;  // loss_x + loss_y, mean per example
    double loss_x = 0.0;
    double loss_y = 0.0;
    double train_acc_x = 0.0;
    double train_acc_y = 0.0;
    // Test accuracy of the exported model under exact inference.
    double acc_x = 0.0;
    double acc_y = 0.0;
    double acc_joint = 0.0;
};

struct TrainResult {
    LatentModel latent;
    std::vector<EpochMetrics> history;
};

TrainResult train(const TrainConfig& config, const world::Dataset& train_set, const world::Dataset& test_set);
// Loads the dataset from config.dataset_path.
TrainResult train(const TrainConfig& config);

// v >= threshold  <=>  (v - mean) / sqrt(var + eps) + beta >= 0
float fold_threshold(double mean, double var, double beta);

// Weights take sign(latent) with sign(0) = +1.
bnn::BnnModel export_model(const LatentModel& latent);

struct Accuracy {
    double x = 0.0;
    double y = 0.0;
    double joint = 0.0;
};

Accuracy evaluate(const bnn::BnnModel& model, const world::Dataset& data);

// Columns: epoch,loss,acc_x,acc_y,acc_joint,loss_x,loss_y,train_acc_x,train_acc_y
std::string metrics_csv(const std::vector<EpochMetrics>& history);
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history);

}  // namespace ppasim::train
