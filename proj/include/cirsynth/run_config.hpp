#pragma once

// Resolved configuration for one pipeline run. Layering is
// defaults <- config file <- command-line overrides; the resolved form is
// snapshotted next to the outputs and its hash is stamped into every
// artifact.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirsynth/mapping_network.hpp"
#include "cirsynth/pair_miner.hpp"
#include "cirsynth/provider.hpp"
#include "cirsynth/retrieval_eval.hpp"
#include "cirsynth/semantic_filter.hpp"
#include "cirsynth/trainer.hpp"

namespace cirsynth {

struct RunPaths {
    std::filesystem::path embeddings;  // image embeddings, also the unlabeled training set
    std::filesystem::path queries;     // evaluation queries
    std::string query_layout = "generic";
    std::filesystem::path gallery;     // defaults to embeddings
    std::filesystem::path encoders;    // toy encoder JSON; empty: derived from the seed
    std::filesystem::path image_dir;   // <image_dir>/<image_id> bytes sent to the captioner
    std::filesystem::path out_dir = "out";
    std::filesystem::path cache_dir;   // defaults to <out_dir>/cache
};

struct ProviderSettings {
    bool mock = true;
    std::size_t semantic_dim = 64;
    MockTextEmbedder::Mode embedder_mode = MockTextEmbedder::Mode::BagOfWords;
    std::optional<ProviderConfig> caption;
    std::optional<ProviderConfig> llm;
    std::optional<ProviderConfig> embedding;
};

/// Shape of the seed-derived toy encoders; 0 means "same as the image dim".
struct EncoderSettings {
    std::size_t token_dim = 0;
    std::size_t output_dim = 0;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t workers = 4;
    RunPaths paths;
    MinerParams miner;
    FilterParams filter;
    ProviderSettings providers;
    EncoderSettings encoders;
    MappingNetworkConfig mapping;  // input/token dims are filled in from the data
    TrainConfig train;             // train.seed is always derived from `seed`
    EvalOptions eval;              // eval.prompt mirrors train.prompt
    std::vector<std::size_t> ablate_token_counts{1, 2, 3, 4, 5, 6, 7, 8};

    void validate() const;

    [[nodiscard]] nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static RunConfig from_json(const nlohmann::json& j);

    /// sha256 of the canonical JSON without paths and worker count.
    [[nodiscard]] std::string hash() const;

    [[nodiscard]] std::filesystem::path cache_dir() const;
    [[nodiscard]] std::filesystem::path gallery_path() const;
    [[nodiscard]] std::uint64_t stage_seed(std::string_view stage) const;
};

/// Parses `value` according to the JSON type found at `pointer` in
/// `target` (numbers, booleans, strings, or comma-separated number lists)
/// and stores it there. Throws InvalidConfig for unknown pointers or
/// unparsable values.
void apply_override(nlohmann::json& target, const std::string& pointer, const std::string& value);

/// Dotted key ("train.steps") to JSON pointer ("/train/steps").
[[nodiscard]] std::string dotted_to_pointer(const std::string& key);

/// defaults <- file (if any) <- overrides, in that order.
[[nodiscard]] RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                       const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace cirsynth
