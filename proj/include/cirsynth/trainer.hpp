#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirsynth/composition.hpp"
#include "cirsynth/encoders.hpp"
#include "cirsynth/mapping_network.hpp"
#include "cirsynth/triplet.hpp"

namespace cirsynth {

/// Text side of the unlabeled-image term: the prompt template with the
/// pseudo tokens, or the pseudo tokens alone.
enum class ZsTextMode { Template, RawTokens };

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t unlabeled_batch_size = 512;
    std::size_t triplet_batch_size = 256;
    double temperature = 0.01;
    double zscir_weight = 1.0;    // 0 disables the unlabeled-image term
    double triplet_weight = 1.0;  // 0 disables the triplet term
    std::size_t steps = 0;
    std::size_t checkpoint_interval = 0;  // 0: only at the end
    std::uint64_t seed = 0;
    ZsTextMode zs_text_mode = ZsTextMode::Template;
    PromptTemplate prompt;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
    double l_zscir = 0.0;
    double l_triplet = 0.0;
    double l_hybrid = 0.0;  // zscir_weight * l_zscir + triplet_weight * l_triplet
};

/// A synthetic triplet resolved to raw image embeddings.
struct TrainingTriplet {
    Vec reference;
    std::string query_text;
    Vec target;
    TripletStatus status = TripletStatus::Kept;
};

/// Columns of `images` are raw image embeddings.
[[nodiscard]] double zscir_loss(const Mat& images, const MappingNetwork& net, const EncoderBundle& encoders,
                                double temperature, const PromptTemplate& tmpl = {},
                                ZsTextMode mode = ZsTextMode::Template);

/// Throws UnfilteredTriplet if any triplet is not kept.
[[nodiscard]] double triplet_loss(std::span<const TrainingTriplet> triplets, const MappingNetwork& net,
                                  const EncoderBundle& encoders, double temperature, const PromptTemplate& tmpl = {});

struct HybridGradient {
    LossBreakdown losses;
    std::vector<double> gradient;  // w.r.t. MappingNetwork::parameters()
};

/// l_hybrid and its gradient w.r.t. the mapping network only.
[[nodiscard]] HybridGradient hybrid_loss_and_gradient(const Mat& unlabeled, std::span<const TrainingTriplet> triplets,
                                                      const MappingNetwork& net, const EncoderBundle& encoders,
                                                      const TrainConfig& config);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

void adam_update(MappingNetwork& net, AdamState& state, std::span<const double> gradient, const TrainConfig& config);

/// One optimizer update of the mapping network on the given batches.
LossBreakdown train_step(const Mat& unlabeled, std::span<const TrainingTriplet> triplets, MappingNetwork& net,
                         AdamState& adam, const EncoderBundle& encoders, const TrainConfig& config);

/// Endless concatenation of seeded permutations of [0, size). The batch at
/// step s is positions [s*batch, (s+1)*batch), so any step can be replayed
/// without replaying the ones before it.
class BatchStream {
public:
    BatchStream(std::size_t size, std::size_t batch, std::uint64_t seed);

    [[nodiscard]] std::vector<std::size_t> batch_at(std::uint64_t step) const;

private:
    [[nodiscard]] const std::vector<std::size_t>& permutation(std::uint64_t epoch) const;

    std::size_t size_;
    std::size_t batch_;
    std::uint64_t seed_;
    mutable std::uint64_t cached_epoch_ = ~std::uint64_t{0};
    mutable std::vector<std::size_t> cached_perm_;
};

struct LossRecord {
    std::uint64_t step = 0;
    LossBreakdown losses;
};

struct Checkpoint {
    static constexpr int kVersion = 1;
    static constexpr const char* kFormat = "cirsynth.checkpoint";

    MappingNetwork net;
    AdamState adam;
    std::uint64_t step = 0;
    std::string config_hash;
    PromptTemplate prompt;

    void save(const std::filesystem::path& path) const;
    /// Throws MissingInput, VersionMismatch, or CorruptCheckpoint.
    static Checkpoint load(const std::filesystem::path& path);
};

/// Owns the mutable training state. Encoders are held by const reference
/// and never written.
class Trainer {
public:
    Trainer(Mat unlabeled_images, std::vector<TrainingTriplet> triplets, const EncoderBundle& encoders,
            MappingNetwork init, TrainConfig config);

    /// Restores network, optimizer, and step from a checkpoint.
    void resume(const Checkpoint& checkpoint);

    LossBreakdown step();

    using StepCallback = std::function<void(const Trainer&, const LossRecord&)>;

    /// Runs until config.steps; on_step fires after every update.
    void run(const StepCallback& on_step = {});

    [[nodiscard]] const MappingNetwork& network() const noexcept { return net_; }
    [[nodiscard]] const AdamState& optimizer_state() const noexcept { return adam_; }
    [[nodiscard]] std::uint64_t current_step() const noexcept { return step_; }
    [[nodiscard]] const TrainConfig& config() const noexcept { return config_; }
    [[nodiscard]] Checkpoint checkpoint(std::string config_hash) const;

private:
    Mat unlabeled_;
    std::vector<TrainingTriplet> triplets_;
    const EncoderBundle& encoders_;
    MappingNetwork net_;
    TrainConfig config_;
    AdamState adam_;
    std::uint64_t step_ = 0;
    BatchStream unlabeled_stream_;
    BatchStream triplet_stream_;
};

}  // namespace cirsynth
