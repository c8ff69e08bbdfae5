#include "metadagger/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "metadagger/errors.hpp"
#include "metadagger/io.hpp"
#include "metadagger/random.hpp"

namespace metadagger {

namespace {

bool same_bits(const double* a, const double* b, Eigen::Index n) {
    return std::memcmp(a, b, static_cast<std::size_t>(n) * sizeof(double)) == 0;
}

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> x) {
    return {x.data(), static_cast<Eigen::Index>(x.size())};
}

void check_input(const PolicyModel& model, std::size_t n) {
    if (static_cast<int>(n) != model.input_dim())
        throw DimensionError("input has " + std::to_string(n) + " features, model expects " +
                             std::to_string(model.input_dim()));
}

// Forward pass keeping pre-activations and activations for backprop.
struct Trace {
    std::vector<Eigen::MatrixXd> pre;   // Z_l
    std::vector<Eigen::MatrixXd> post;  // A_l, post[0] = input
};

Trace forward_trace(const PolicyModel& model, const Eigen::MatrixXd& inputs) {
    Trace tr;
    tr.post.reserve(model.layers.size() + 1);
    tr.pre.reserve(model.layers.size());
    tr.post.push_back(inputs);
    for (const auto& layer : model.layers) {
        Eigen::MatrixXd z = layer.weights * tr.post.back();
        z.colwise() += layer.bias;
        Eigen::MatrixXd a = layer.activation == Activation::ReLU ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
        tr.pre.push_back(std::move(z));
        tr.post.push_back(std::move(a));
    }
    return tr;
}

// Backprop from dL/d(output) (1 x B) to parameter gradients and dL/d(input).
Gradients backward(const PolicyModel& model, const Trace& tr, Eigen::MatrixXd upstream,
                   Eigen::MatrixXd* input_grad = nullptr) {
    const std::size_t n = model.layers.size();
    Gradients g;
    g.weights.resize(n);
    g.biases.resize(n);
    for (std::size_t k = n; k-- > 0;) {
        const auto& layer = model.layers[k];
        if (layer.activation == Activation::ReLU)
            upstream = upstream.cwiseProduct((tr.pre[k].array() > 0.0).cast<double>().matrix());
        g.weights[k] = upstream * tr.post[k].transpose();
        g.biases[k] = upstream.rowwise().sum();
        if (k > 0 || input_grad != nullptr) upstream = layer.weights.transpose() * upstream;
    }
    if (input_grad != nullptr) *input_grad = std::move(upstream);
    return g;
}

double single_loss(const PolicyModel& model, std::span<const double> input, double target) {
    const double r = forward_raw(model, input) - target;
    return r * r;
}

double& parameter_ref(PolicyModel& model, std::size_t layer, bool is_bias, Eigen::Index index) {
    if (is_bias) return model.layers[layer].bias(index);
    return model.layers[layer].weights.data()[index];
}

}  // namespace

std::size_t PolicyModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
}

void PolicyModel::validate() const {
    if (layer_sizes.size() < 2) throw InvariantError("policy needs at least an input and an output size");
    if (layer_sizes.back() != 1) throw InvariantError("policy output dimension must be 1");
    for (int s : layer_sizes)
        if (s < 1) throw InvariantError("layer sizes must be positive");
    if (layers.size() != layer_sizes.size() - 1) throw InvariantError("layer count does not match layer sizes");
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& l = layers[k];
        if (l.weights.rows() != layer_sizes[k + 1] || l.weights.cols() != layer_sizes[k] ||
            l.bias.size() != layer_sizes[k + 1])
            throw InvariantError("layer " + std::to_string(k) + " shape breaks the chain");
        const Activation expected = k + 1 == layers.size() ? Activation::Linear : Activation::ReLU;
        if (l.activation != expected) throw InvariantError("unexpected activation at layer " + std::to_string(k));
        if (!l.weights.allFinite() || !l.bias.allFinite())
            throw InvariantError("non-finite parameter in layer " + std::to_string(k));
    }
}

bool operator==(const PolicyModel& a, const PolicyModel& b) {
    if (a.layer_sizes != b.layer_sizes || a.init_seed != b.init_seed || a.layers.size() != b.layers.size())
        return false;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        const auto& la = a.layers[k];
        const auto& lb = b.layers[k];
        if (la.activation != lb.activation || la.weights.rows() != lb.weights.rows() ||
            la.weights.cols() != lb.weights.cols() || la.bias.size() != lb.bias.size())
            return false;
        if (!same_bits(la.weights.data(), lb.weights.data(), la.weights.size()) ||
            !same_bits(la.bias.data(), lb.bias.data(), la.bias.size()))
            return false;
    }
    return true;
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw InvariantError("learning_rate must be finite and non-negative");
    if (epochs < 1) throw InvariantError("epochs must be >= 1");
    if (batch_size < 1) throw InvariantError("batch_size must be >= 1");
    if (!(l2 >= 0.0)) throw InvariantError("l2 must be non-negative");
}

PolicyModel init_model(std::vector<int> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2 || layer_sizes.back() != 1)
        throw InvariantError("layer sizes must be [d_in, ..., 1]");
    for (int s : layer_sizes)
        if (s < 1) throw InvariantError("layer sizes must be positive");

    PolicyModel model;
    model.layer_sizes = std::move(layer_sizes);
    model.init_seed = seed;
    Rng rng(seed);
    const std::size_t n = model.layer_sizes.size() - 1;
    for (std::size_t k = 0; k < n; ++k) {
        const int fan_in = model.layer_sizes[k];
        const int fan_out = model.layer_sizes[k + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        Layer layer;
        layer.weights.resize(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c) layer.weights(r, c) = rng.uniform(-bound, bound);
        layer.bias = Eigen::VectorXd::Zero(fan_out);
        layer.activation = k + 1 == n ? Activation::Linear : Activation::ReLU;
        model.layers.push_back(std::move(layer));
    }
    return model;
}

double forward_raw(const PolicyModel& model, std::span<const double> input) {
    check_input(model, input.size());
    Eigen::VectorXd a = as_vector(input);
    for (const auto& layer : model.layers) {
        Eigen::VectorXd z = layer.weights * a + layer.bias;
        a = layer.activation == Activation::ReLU ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
    }
    return a(0);
}

double forward(const PolicyModel& model, std::span<const double> input) {
    return std::clamp(forward_raw(model, input), -1.0, 1.0);
}

Eigen::RowVectorXd forward_batch(const PolicyModel& model, const Eigen::MatrixXd& inputs) {
    check_input(model, static_cast<std::size_t>(inputs.rows()));
    Eigen::MatrixXd a = inputs;
    for (const auto& layer : model.layers) {
        Eigen::MatrixXd z = layer.weights * a;
        z.colwise() += layer.bias;
        a = layer.activation == Activation::ReLU ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
    }
    return a.row(0);
}

double mse(const PolicyModel& model, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets) {
    // Column blocks keep the activations cache-sized on large datasets.
    constexpr Eigen::Index kBlock = 512;
    double sum = 0.0;
    for (Eigen::Index start = 0; start < inputs.cols(); start += kBlock) {
        const Eigen::Index len = std::min(kBlock, inputs.cols() - start);
        const Eigen::RowVectorXd out = forward_batch(model, inputs.middleCols(start, len));
        sum += (out.transpose() - targets.segment(start, len)).squaredNorm();
    }
    return sum / static_cast<double>(targets.size());
}

Gradients loss_gradient(const PolicyModel& model, std::span<const double> input, double target) {
    check_input(model, input.size());
    const Trace tr = forward_trace(model, Eigen::MatrixXd(as_vector(input)));
    Eigen::MatrixXd upstream(1, 1);
    upstream(0, 0) = 2.0 * (tr.post.back()(0, 0) - target);
    return backward(model, tr, std::move(upstream));
}

std::vector<double> input_gradient(const PolicyModel& model, std::span<const double> input) {
    check_input(model, input.size());
    const Trace tr = forward_trace(model, Eigen::MatrixXd(as_vector(input)));
    Eigen::MatrixXd grad;
    backward(model, tr, Eigen::MatrixXd::Ones(1, 1), &grad);
    return {grad.data(), grad.data() + grad.size()};
}

TrainResult train(PolicyModel model, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                  const TrainConfig& config) {
    config.validate();
    model.validate();
    const Eigen::Index n = inputs.cols();
    if (n == 0) throw TrainingError("cannot train on an empty dataset");
    if (targets.size() != n) throw DimensionError("inputs and targets disagree on sample count");
    check_input(model, static_cast<std::size_t>(inputs.rows()));

    Rng rng(config.shuffle_seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    TrainResult result;
    result.loss_trace.reserve(static_cast<std::size_t>(config.epochs));
    const Eigen::Index batch = std::min<Eigen::Index>(config.batch_size, n);
    Eigen::MatrixXd xb(inputs.rows(), batch);
    Eigen::RowVectorXd yb(batch);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        for (Eigen::Index start = 0; start < n; start += batch) {
            const Eigen::Index len = std::min(batch, n - start);
            if (xb.cols() != len) {
                xb.resize(inputs.rows(), len);
                yb.resize(len);
            }
            for (Eigen::Index j = 0; j < len; ++j) {
                const Eigen::Index idx = order[static_cast<std::size_t>(start + j)];
                xb.col(j) = inputs.col(idx);
                yb(j) = targets(idx);
            }
            const Trace tr = forward_trace(model, xb);
            Eigen::MatrixXd upstream = (tr.post.back() - yb) * (2.0 / static_cast<double>(len));
            const Gradients g = backward(model, tr, std::move(upstream));
            for (std::size_t k = 0; k < model.layers.size(); ++k) {
                auto& layer = model.layers[k];
                if (config.l2 > 0.0) {
                    layer.weights -= config.learning_rate * (g.weights[k] + 2.0 * config.l2 * layer.weights);
                } else {
                    layer.weights -= config.learning_rate * g.weights[k];
                }
                layer.bias -= config.learning_rate * g.biases[k];
            }
        }

        const double loss = mse(model, inputs, targets);
        if (!std::isfinite(loss))
            throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
        result.loss_trace.push_back(loss);
    }
    result.model = std::move(model);
    return result;
}

double gradient_check(const PolicyModel& model, std::span<const double> input, double target, double epsilon) {
    const Gradients analytic = loss_gradient(model, input, target);
    PolicyModel probe = model;
    double worst = 0.0;
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        for (int bias = 0; bias < 2; ++bias) {
            const Eigen::Index count = bias ? model.layers[k].bias.size() : model.layers[k].weights.size();
            for (Eigen::Index i = 0; i < count; ++i) {
                double& p = parameter_ref(probe, k, bias != 0, i);
                const double saved = p;
                p = saved + epsilon;
                const double up = single_loss(probe, input, target);
                p = saved - epsilon;
                const double down = single_loss(probe, input, target);
                p = saved;
                const double numeric = (up - down) / (2.0 * epsilon);
                const double a = bias ? analytic.biases[k](i) : analytic.weights[k].data()[i];
                const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

std::vector<double> saliency(const PolicyModel& model, std::span<const double> input) {
    std::vector<double> g = input_gradient(model, input);
    double total = 0.0;
    for (double& v : g) {
        v = std::abs(v);
        total += v;
    }
    if (!(total > 0.0)) {
        std::fill(g.begin(), g.end(), 1.0 / static_cast<double>(g.size()));
        return g;
    }
    for (double& v : g) v /= total;
    return g;
}

void write_model(std::ostream& os, const PolicyModel& model) {
    model.validate();
    os << "policy-v1\n";
    for (std::size_t i = 0; i < model.layer_sizes.size(); ++i)
        os << (i ? " " : "") << model.layer_sizes[i];
    os << "\ninit_seed " << model.init_seed << '\n';
    for (const auto& layer : model.layers) {
        // row-major weights, then biases
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) os << format_exact(layer.weights(r, c)) << '\n';
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) os << format_exact(layer.bias(r)) << '\n';
    }
}

PolicyModel read_model(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty model file");
    if (line != "policy-v1") throw VersionError("unsupported model file version: '" + line + "'");

    if (!std::getline(is, line)) throw FormatError("model file truncated before layer sizes");
    std::vector<int> sizes;
    {
        std::istringstream ss(line);
        int s;
        while (ss >> s) sizes.push_back(s);
        if (!ss.eof()) throw FormatError("malformed layer sizes: '" + line + "'");
    }
    if (sizes.size() < 2 || sizes.back() != 1) throw InvariantError("layer sizes must be [d_in, ..., 1]");
    for (int s : sizes)
        if (s < 1) throw InvariantError("layer sizes must be positive");

    if (!std::getline(is, line)) throw FormatError("model file truncated before init_seed");
    std::uint64_t seed = 0;
    {
        constexpr std::string_view key = "init_seed ";
        if (line.rfind(key, 0) != 0) throw FormatError("expected init_seed line");
        const char* b = line.data() + key.size();
        const char* e = line.data() + line.size();
        auto [ptr, ec] = std::from_chars(b, e, seed);
        if (ec != std::errc{} || ptr != e) throw FormatError("malformed init_seed");
    }

    auto next_value = [&](const char* what) {
        if (!std::getline(is, line)) throw FormatError(std::string("model file truncated in ") + what);
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
        if (ec != std::errc{} || ptr != line.data() + line.size())
            throw FormatError("malformed parameter: '" + line + "'");
        return v;
    };

    PolicyModel model;
    model.layer_sizes = sizes;
    model.init_seed = seed;
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
        Layer layer;
        layer.weights.resize(sizes[k + 1], sizes[k]);
        layer.bias.resize(sizes[k + 1]);
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = next_value("weights");
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = next_value("biases");
        layer.activation = k + 2 == sizes.size() ? Activation::Linear : Activation::ReLU;
        model.layers.push_back(std::move(layer));
    }
    while (std::getline(is, line))
        if (!line.empty()) throw FormatError("trailing data after model parameters");
    model.validate();
    return model;
}

void save_model(const std::filesystem::path& path, const PolicyModel& model) {
    std::ostringstream os;
    write_model(os, model);
    atomic_write(path, os.str());
}

PolicyModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open model file: " + path.string());
    return read_model(in);
}

}  // namespace metadagger
