#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirsynth/embedding.hpp"
#include "cirsynth/provider.hpp"
#include "cirsynth/query_synth.hpp"
#include "cirsynth/triplet.hpp"

namespace cirsynth {

struct FilterParams {
    double similarity_threshold = 0.7;

    void validate() const;
};

/// Trimmed, with internal whitespace runs collapsed to one space.
[[nodiscard]] std::string normalize_whitespace(const std::string& s);

/// Semantic embeddings of the three texts of a triplet.
struct SemanticTriple {
    EmbeddingVector reference;
    EmbeddingVector query;
    EmbeddingVector target;
};

/// cos(reference + query, target), with no normalization of the sum.
[[nodiscard]] double semantic_consistency(const SemanticTriple& e);

/// Applies the caption-equality rule, then the similarity rule. Never
/// touches the provider when the captions match.
[[nodiscard]] SyntheticTriplet filter_triplet(SyntheticTriplet t, const FilterParams& params,
                                              ProviderGateway& gateway);

/// The similarity rule alone, for callers that already hold embeddings.
[[nodiscard]] SyntheticTriplet filter_triplet(SyntheticTriplet t, const FilterParams& params,
                                              const SemanticTriple& embeddings);

struct FilterReport {
    std::size_t input = 0;
    std::size_t kept = 0;
    std::size_t dropped_same_caption = 0;
    std::size_t dropped_low_similarity = 0;
    std::size_t errored = 0;

    [[nodiscard]] double kept_ratio() const noexcept {
        return input == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(input);
    }
    [[nodiscard]] nlohmann::json to_json() const;
};

struct FilterResult {
    std::vector<SyntheticTriplet> kept;    // input order
    std::vector<SyntheticTriplet> scored;  // every non-errored triplet with its verdict
    std::vector<ItemError> errors;
    FilterReport report;
};

[[nodiscard]] FilterResult filter_dataset(std::span<const SyntheticTriplet> triplets, const FilterParams& params,
                                          ProviderGateway& gateway, std::size_t workers = 1);

}  // namespace cirsynth
