#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace metadagger {

enum class Activation { ReLU, Linear };

struct Layer {
    Eigen::MatrixXd weights;  // fan_out x fan_in
    Eigen::VectorXd bias;
    Activation activation = Activation::ReLU;
};

/// Fully connected regression network with ReLU hidden layers and a linear
/// scalar head. Used for both the meta learner and the low learner.
struct PolicyModel {
    std::vector<int> layer_sizes;  // [d_in, h_1, ..., 1]
    std::vector<Layer> layers;
    std::uint64_t init_seed = 0;

    int input_dim() const { return layer_sizes.front(); }
    std::size_t parameter_count() const;

    /// Shape chain, scalar output, finiteness.
    void validate() const;

    /// Bitwise comparison of every parameter and the metadata.
    friend bool operator==(const PolicyModel& a, const PolicyModel& b);
};

struct TrainConfig {
    double learning_rate = 0.02;
    int epochs = 100;
    int batch_size = 32;
    std::uint64_t shuffle_seed = 0;
    double l2 = 0.0;

    void validate() const;
};

struct TrainResult {
    PolicyModel model;
    std::vector<double> loss_trace;  // full-dataset MSE after each epoch
};

/// Per-parameter gradients, laid out like PolicyModel::layers.
struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
};

/// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
PolicyModel init_model(std::vector<int> layer_sizes, std::uint64_t seed);

/// Unclamped network output.
double forward_raw(const PolicyModel& model, std::span<const double> input);

/// Steering command: forward_raw clamped to [-1, 1].
double forward(const PolicyModel& model, std::span<const double> input);

/// Raw outputs for a d_in x N batch.
Eigen::RowVectorXd forward_batch(const PolicyModel& model, const Eigen::MatrixXd& inputs);

/// Mean squared error of the raw output over a batch.
double mse(const PolicyModel& model, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets);

/// Gradient of the single-sample loss (forward_raw(x) - y)^2.
Gradients loss_gradient(const PolicyModel& model, std::span<const double> input, double target);

/// d forward_raw / d input.
std::vector<double> input_gradient(const PolicyModel& model, std::span<const double> input);

/// Minibatch gradient descent on the mean squared error, starting from the
/// given parameters. Bitwise deterministic in (model, data, config).
/// `inputs` is d_in x N, one sample per column.
TrainResult train(PolicyModel model, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                  const TrainConfig& config);

/// Maximum relative error between analytic and central-difference gradients
/// over every parameter, |a - n| / max(|a| + |n|, 1e-6).
double gradient_check(const PolicyModel& model, std::span<const double> input, double target, double epsilon);

/// |d output / d input| normalized to sum to one; uniform when the gradient vanishes.
std::vector<double> saliency(const PolicyModel& model, std::span<const double> input);

void write_model(std::ostream& os, const PolicyModel& model);
PolicyModel read_model(std::istream& is);
void save_model(const std::filesystem::path& path, const PolicyModel& model);
PolicyModel load_model(const std::filesystem::path& path);

}  // namespace metadagger
