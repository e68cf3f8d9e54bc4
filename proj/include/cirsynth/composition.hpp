#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirsynth/embedding.hpp"
#include "cirsynth/encoders.hpp"
#include "cirsynth/mapping_network.hpp"

namespace cirsynth {

/// "<prefix> [pseudo tokens]<separator><query text>". The separator and
/// query text are dropped entirely when the query text is empty.
struct PromptTemplate {
    std::string prefix = "a photo of";
    std::string separator = ", ";

    [[nodiscard]] nlohmann::json to_json() const { return {{"prefix", prefix}, {"separator", separator}}; }
    static PromptTemplate from_json(const nlohmann::json& j);
};

struct ComposedQuery {
    std::vector<Vec> pseudo_tokens;
    std::string query_text;
    UnitVector composed_feature;
};

/// Template tokens + pseudo tokens + separator/query tokens, spliced at the
/// embedding layer.
[[nodiscard]] std::vector<Vec> build_token_sequence(std::span<const Vec> pseudo_tokens, const std::string& query_text,
                                                    const EncoderBundle& encoders, const PromptTemplate& tmpl = {});

/// Throws EncoderNotLoaded, or DimMismatch when the network does not fit
/// the encoders.
[[nodiscard]] ComposedQuery compose_query(const EmbeddingVector& image, const std::string& query_text,
                                          const MappingNetwork& net, const EncoderBundle& encoders,
                                          const PromptTemplate& tmpl = {});

void check_compatible(const MappingNetwork& net, const EncoderBundle& encoders);

/// Batched composition with a backward pass down to the mapping network
/// parameters.
class ComposedBatch {
public:
    /// images: columns are raw image embeddings. query_texts.size() must
    /// equal the batch size; empty strings give the bare template.
    ComposedBatch(const Mat& images, std::span<const std::string> query_texts, const MappingNetwork& net,
                  const EncoderBundle& encoders, const PromptTemplate& tmpl = {});

    /// Columns are unit composed features.
    [[nodiscard]] const Mat& features() const noexcept { return features_; }

    /// Parameter gradient given d(loss)/d(features).
    [[nodiscard]] std::vector<double> backward(const Mat& grad_features) const;

private:
    const MappingNetwork& net_;
    const EncoderBundle& encoders_;
    MappingForwardCache cache_;
    std::vector<std::vector<Vec>> sequences_;
    std::vector<std::size_t> pseudo_offset_;
    Mat features_;
};

}  // namespace cirsynth
