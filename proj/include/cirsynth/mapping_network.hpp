#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirsynth/encoders.hpp"

namespace cirsynth {

enum class Activation { ReLU, GELU, Tanh };

[[nodiscard]] std::string to_string(Activation a);
[[nodiscard]] Activation activation_from_string(const std::string& s);

struct MappingNetworkConfig {
    std::size_t input_dim = 0;
    std::size_t token_dim = 0;
    std::size_t token_count = 4;
    std::size_t hidden_dim = 0;  // 0: same as input_dim
    std::size_t layers = 3;      // linear layers; activations sit between them
    Activation activation = Activation::ReLU;

    void validate() const;
    [[nodiscard]] std::size_t resolved_hidden_dim() const { return hidden_dim == 0 ? input_dim : hidden_dim; }
    [[nodiscard]] nlohmann::json to_json() const;
    static MappingNetworkConfig from_json(const nlohmann::json& j);
};

struct DenseLayer {
    Mat weight;  // out x in
    Vec bias;
};

/// Activations saved by forward() for backward().
struct MappingForwardCache {
    std::vector<Mat> inputs;           // input to each layer
    std::vector<Mat> pre_activations;  // W x + b of each hidden layer
};

/// Image embedding -> token_count pseudo-word token embeddings. The only
/// trainable object in the system.
class MappingNetwork {
public:
    MappingNetwork() = default;

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases.
    MappingNetwork(MappingNetworkConfig config, std::uint64_t seed);

    static MappingNetwork zeros(MappingNetworkConfig config);

    [[nodiscard]] const MappingNetworkConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::size_t token_count() const noexcept { return config_.token_count; }
    [[nodiscard]] std::size_t token_dim() const noexcept { return config_.token_dim; }
    [[nodiscard]] std::size_t input_dim() const noexcept { return config_.input_dim; }
    [[nodiscard]] const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

    /// Exactly token_count vectors of token_dim. Throws DimMismatch.
    [[nodiscard]] std::vector<Vec> map_image_to_tokens(const Vec& image) const;
    [[nodiscard]] std::vector<Vec> map_image_to_tokens(const EmbeddingVector& image) const;

    /// Batched forward: columns of `images` are samples. Output is
    /// (token_count * token_dim) x batch; token j of sample b is rows
    /// [j*token_dim, (j+1)*token_dim) of column b.
    [[nodiscard]] Mat forward(const Mat& images, MappingForwardCache* cache = nullptr) const;

    /// Flat parameter gradient (same layout as parameters()) given the
    /// gradient w.r.t. forward()'s output.
    [[nodiscard]] std::vector<double> backward(const MappingForwardCache& cache, const Mat& grad_output) const;

    /// Layer by layer: weight (column-major), then bias.
    [[nodiscard]] std::size_t parameter_count() const;
    [[nodiscard]] std::vector<double> parameters() const;
    void set_parameters(std::span<const double> flat);

    [[nodiscard]] nlohmann::json to_json() const;
    static MappingNetwork from_json(const nlohmann::json& j);

    friend bool operator==(const MappingNetwork& a, const MappingNetwork& b) {
        return a.parameters() == b.parameters() && a.config_.to_json() == b.config_.to_json();
    }

private:
    explicit MappingNetwork(MappingNetworkConfig config);

    MappingNetworkConfig config_;
    std::vector<DenseLayer> layers_;
};

}  // namespace cirsynth
