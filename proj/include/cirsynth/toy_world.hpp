#pragma once

// Controlled world for end-to-end learning checks: images are points in
// R^d, each query word names a fixed displacement, and the target of
// (reference, word) is reference + displacement. The toy text encoder maps
// each word near the text-space image of its displacement, so a mapping
// network that learns to invert the visual encoder can compose.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cirsynth/encoders.hpp"
#include "cirsynth/mapping_network.hpp"
#include "cirsynth/retrieval_eval.hpp"
#include "cirsynth/trainer.hpp"

namespace cirsynth {

struct ToyWorldConfig {
    std::size_t dim = 16;
    std::size_t vocabulary_size = 10;
    double displacement_norm = 3.0;
    double word_noise = 0.05;           // relative to the word embedding norm
    double template_token_scale = 0.1;  // norm of "a", "photo", "of", ","
    std::size_t unlabeled_count = 4000;
    std::size_t triplet_count = 4000;
    std::size_t query_count = 100;
    std::size_t gallery_size = 100;
    /// Triplet references are drawn from N(shift * u, spread^2 I) for a
    /// fixed unit u; shifted held-out queries use N(-shift * u, I).
    double triplet_shift = 0.0;
    double triplet_spread = 1.0;
    std::uint64_t seed = 0;
};

/// One query with its own candidate set: the target, the reference moved by
/// every other word, and unrelated images moved by the query word.
struct ToyQuery {
    Vec reference;
    std::string word;
    ImageId target_id;
    std::vector<std::pair<ImageId, Vec>> candidates;
};

class ToyWorld {
public:
    explicit ToyWorld(const ToyWorldConfig& config);

    [[nodiscard]] const ToyEncoderBundle& encoders() const noexcept { return encoders_; }
    [[nodiscard]] const Mat& unlabeled() const noexcept { return unlabeled_; }
    [[nodiscard]] const std::vector<TrainingTriplet>& triplets() const noexcept { return triplets_; }
    [[nodiscard]] const std::vector<ToyQuery>& heldout_queries() const noexcept { return heldout_; }
    [[nodiscard]] const std::vector<ToyQuery>& shifted_queries() const noexcept { return shifted_; }
    [[nodiscard]] const std::vector<std::string>& words() const noexcept { return words_; }
    [[nodiscard]] const ToyWorldConfig& config() const noexcept { return config_; }

    [[nodiscard]] MappingNetworkConfig network_config(std::size_t token_count, std::size_t hidden_dim = 0) const;

    /// R@K over the per-query candidate sets, plus their average.
    [[nodiscard]] MetricsReport evaluate(const MappingNetwork& net, const std::vector<ToyQuery>& queries,
                                         const std::vector<std::size_t>& k_values = {1, 5, 10, 50},
                                         const PromptTemplate& prompt = {}) const;

private:
    ToyWorldConfig config_;
    ToyEncoderBundle encoders_;
    std::vector<std::string> words_;
    std::vector<Vec> displacements_;
    Mat unlabeled_;
    std::vector<TrainingTriplet> triplets_;
    std::vector<ToyQuery> heldout_;
    std::vector<ToyQuery> shifted_;
};

}  // namespace cirsynth
