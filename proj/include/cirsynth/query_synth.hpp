#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cirsynth/provider.hpp"
#include "cirsynth/triplet.hpp"

namespace cirsynth {

/// The instruction-generation prompt with both captions substituted
/// literally. Throws EmptyCaption.
[[nodiscard]] std::string build_prompt(const std::string& reference_caption, const std::string& target_caption);

/// Captions both images, then asks the LLM for the edit instruction.
/// Provider errors propagate. Result status is Unfiltered.
[[nodiscard]] SyntheticTriplet synthesize_triplet(const ImagePair& pair, ProviderGateway& gateway);

/// Same, with the captions already known.
[[nodiscard]] SyntheticTriplet synthesize_triplet(const ImagePair& pair, const std::string& reference_caption,
                                                  const std::string& target_caption, ProviderGateway& gateway);

struct ItemError {
    std::size_t index = 0;
    std::string item;  // e.g. "ref->tgt"
    std::string error;
};

struct SynthesisResult {
    std::vector<SyntheticTriplet> triplets;  // input order, failed items omitted
    std::vector<ItemError> errors;
};

/// Runs synthesize_triplet over a batch with up to `workers` concurrent
/// provider calls. Captions found in `known_captions` are reused.
[[nodiscard]] SynthesisResult synthesize_batch(std::span<const ImagePair> pairs, ProviderGateway& gateway,
                                               std::size_t workers = 1,
                                               const std::map<ImageId, std::string>& known_captions = {});

}  // namespace cirsynth
