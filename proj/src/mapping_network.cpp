#include "cirsynth/mapping_network.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "cirsynth/error.hpp"

namespace cirsynth {

using nlohmann::json;

std::string to_string(Activation a) {
    switch (a) {
        case Activation::ReLU: return "relu";
        case Activation::GELU: return "gelu";
        case Activation::Tanh: return "tanh";
    }
    return "relu";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::ReLU;
    if (s == "gelu") return Activation::GELU;
    if (s == "tanh") return Activation::Tanh;
    throw Error(ErrorCode::InvalidConfig, "unknown activation '" + s + "'");
}

void MappingNetworkConfig::validate() const {
    if (input_dim == 0 || token_dim == 0) throw Error(ErrorCode::InvalidConfig, "mapping dims must be >= 1");
    if (token_count == 0) throw Error(ErrorCode::InvalidConfig, "token_count must be >= 1");
    if (layers == 0) throw Error(ErrorCode::InvalidConfig, "mapping network needs >= 1 layer");
}

json MappingNetworkConfig::to_json() const {
    return {{"input_dim", input_dim},   {"token_dim", token_dim}, {"token_count", token_count},
            {"hidden_dim", hidden_dim}, {"layers", layers},       {"activation", to_string(activation)}};
}

MappingNetworkConfig MappingNetworkConfig::from_json(const json& j) {
    MappingNetworkConfig c;
    c.input_dim = j.value("input_dim", std::size_t{0});
    c.token_dim = j.value("token_dim", std::size_t{0});
    c.token_count = j.value("token_count", std::size_t{4});
    c.hidden_dim = j.value("hidden_dim", std::size_t{0});
    c.layers = j.value("layers", std::size_t{3});
    c.activation = activation_from_string(j.value("activation", std::string("relu")));
    c.validate();
    return c;
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double activate(Activation a, double x) {
    switch (a) {
        case Activation::ReLU: return x > 0.0 ? x : 0.0;
        case Activation::GELU: return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
        case Activation::Tanh: return std::tanh(x);
    }
    return x;
}

double activate_grad(Activation a, double x) {
    switch (a) {
        case Activation::ReLU: return x > 0.0 ? 1.0 : 0.0;
        case Activation::GELU: {
            const double u = kGeluC * (x + 0.044715 * x * x * x);
            const double t = std::tanh(u);
            const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        }
        case Activation::Tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

}  // namespace

MappingNetwork::MappingNetwork(MappingNetworkConfig config) : config_(config) {
    config_.validate();
    const auto hidden = static_cast<Eigen::Index>(config_.resolved_hidden_dim());
    const auto out = static_cast<Eigen::Index>(config_.token_count * config_.token_dim);
    auto in = static_cast<Eigen::Index>(config_.input_dim);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const bool last = l + 1 == config_.layers;
        const auto rows = last ? out : hidden;
        layers_.push_back({Mat::Zero(rows, in), Vec::Zero(rows)});
        in = rows;
    }
}

MappingNetwork::MappingNetwork(MappingNetworkConfig config, std::uint64_t seed) : MappingNetwork(config) {
    std::mt19937_64 rng(seed);
    for (auto& layer : layers_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
        std::uniform_real_distribution<double> uniform(-bound, bound);
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
            for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = uniform(rng);
        }
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = uniform(rng);
    }
}

MappingNetwork MappingNetwork::zeros(MappingNetworkConfig config) { return MappingNetwork(config); }

Mat MappingNetwork::forward(const Mat& images, MappingForwardCache* cache) const {
    if (images.rows() != static_cast<Eigen::Index>(config_.input_dim)) {
        throw Error(ErrorCode::DimMismatch, "mapping input dim " + std::to_string(images.rows()) + " vs " +
                                                std::to_string(config_.input_dim));
    }
    if (cache) {
        cache->inputs.clear();
        cache->pre_activations.clear();
    }
    Mat x = images;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (cache) cache->inputs.push_back(x);
        Mat z = layers_[l].weight * x;
        z.colwise() += layers_[l].bias;
        if (l + 1 == layers_.size()) return z;
        if (cache) cache->pre_activations.push_back(z);
        x = z.unaryExpr([a = config_.activation](double v) { return activate(a, v); });
    }
    return x;
}

std::vector<double> MappingNetwork::backward(const MappingForwardCache& cache, const Mat& grad_output) const {
    std::vector<double> grad(parameter_count());
    // Offsets of each layer inside the flat layout.
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& layer : layers_) {
        offsets.push_back(off);
        off += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    }
    Mat g = grad_output;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const auto& layer = layers_[l];
        Eigen::Map<Mat> gw(grad.data() + offsets[l], layer.weight.rows(), layer.weight.cols());
        Eigen::Map<Vec> gb(grad.data() + offsets[l] + layer.weight.size(), layer.bias.size());
        gw = g * cache.inputs[l].transpose();
        gb = g.rowwise().sum();
        if (l == 0) break;
        Mat gx = layer.weight.transpose() * g;
        const Mat& z = cache.pre_activations[l - 1];
        g = gx.cwiseProduct(z.unaryExpr([a = config_.activation](double v) { return activate_grad(a, v); }));
    }
    return grad;
}

std::vector<Vec> MappingNetwork::map_image_to_tokens(const Vec& image) const {
    const Mat out = forward(image);
    const auto d = static_cast<Eigen::Index>(config_.token_dim);
    std::vector<Vec> tokens;
    tokens.reserve(config_.token_count);
    for (std::size_t j = 0; j < config_.token_count; ++j) {
        tokens.emplace_back(out.col(0).segment(static_cast<Eigen::Index>(j) * d, d));
    }
    return tokens;
}

std::vector<Vec> MappingNetwork::map_image_to_tokens(const EmbeddingVector& image) const {
    return map_image_to_tokens(to_eigen(image));
}

std::size_t MappingNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    return n;
}

std::vector<double> MappingNetwork::parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& layer : layers_) {
        out.insert(out.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
        out.insert(out.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
    }
    return out;
}

void MappingNetwork::set_parameters(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
        throw Error(ErrorCode::DimMismatch, "parameter count " + std::to_string(flat.size()) + " vs " +
                                                std::to_string(parameter_count()));
    }
    std::size_t off = 0;
    for (auto& layer : layers_) {
        std::copy_n(flat.data() + off, layer.weight.size(), layer.weight.data());
        off += static_cast<std::size_t>(layer.weight.size());
        std::copy_n(flat.data() + off, layer.bias.size(), layer.bias.data());
        off += static_cast<std::size_t>(layer.bias.size());
    }
}

json MappingNetwork::to_json() const {
    return {{"config", config_.to_json()}, {"parameters", parameters()}};
}

MappingNetwork MappingNetwork::from_json(const json& j) {
    MappingNetwork net(MappingNetworkConfig::from_json(j.at("config")));
    net.set_parameters(j.at("parameters").get<std::vector<double>>());
    return net;
}

}  // namespace cirsynth
