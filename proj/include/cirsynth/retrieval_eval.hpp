#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cirsynth/composition.hpp"
#include "cirsynth/embedding.hpp"
#include "cirsynth/encoders.hpp"
#include "cirsynth/mapping_network.hpp"
#include "cirsynth/triplet.hpp"

namespace cirsynth {

struct QueryRecord {
    ImageId reference_id;
    std::string query_text;
    std::set<ImageId> ground_truth_ids;
    std::optional<std::vector<ImageId>> subset_ids;

    /// Throws MalformedRecord when an invariant fails.
    void validate() const;
};

/// Candidate images with unit features; ids unique, dims uniform.
class Gallery {
public:
    Gallery() = default;
    explicit Gallery(std::vector<std::pair<ImageId, UnitVector>> items);

    [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
    [[nodiscard]] bool empty() const noexcept { return items_.empty(); }
    [[nodiscard]] const std::vector<std::pair<ImageId, UnitVector>>& items() const noexcept { return items_; }
    [[nodiscard]] const UnitVector* find(const ImageId& id) const;

private:
    std::vector<std::pair<ImageId, UnitVector>> items_;
    std::unordered_map<ImageId, std::size_t> index_;
};

using Ranking = std::vector<ImageId>;

/// Descending cosine, ties by ascending id, excluded ids removed first.
/// Throws EmptyGallery when nothing is left to rank.
[[nodiscard]] Ranking rank_candidates(const UnitVector& composed_feature, const Gallery& gallery,
                                      const std::set<ImageId>& exclude = {});

/// Ranks only `candidates` (ids looked up in the gallery).
[[nodiscard]] Ranking rank_subset(const UnitVector& composed_feature, const Gallery& gallery,
                                  std::span<const ImageId> candidates, const std::set<ImageId>& exclude = {});

/// Fraction of queries whose top-K intersects their ground truth.
[[nodiscard]] double recall_at_k(std::span<const Ranking> rankings, std::span<const QueryRecord> queries,
                                 std::size_t k);

/// Recall within each query's subset (reference removed). Throws
/// MissingSubset if a query carries no subset.
[[nodiscard]] double subset_recall_at_k(std::span<const QueryRecord> queries,
                                        std::span<const UnitVector> composed_features, const Gallery& gallery,
                                        std::size_t k);

/// Mean over queries of AP@K normalized by min(|GT|, K).
[[nodiscard]] double map_at_k(std::span<const Ranking> rankings, std::span<const QueryRecord> queries,
                              std::size_t k);

struct EvalOptions {
    std::vector<std::size_t> k_values{1, 5, 10, 50};
    std::vector<std::size_t> subset_k_values{1, 2, 3};
    bool exclude_reference = true;
    PromptTemplate prompt;
};

struct MetricsReport {
    std::size_t query_count = 0;
    std::map<std::size_t, double> recall;
    std::map<std::size_t, double> subset_recall;  // empty unless every query has a subset
    std::map<std::size_t, double> map;
    double average_recall = 0.0;  // mean of the reported R@K values

    [[nodiscard]] nlohmann::json to_json() const;
    /// Aligned plain-text table.
    [[nodiscard]] std::string to_table() const;
};

/// Lookup of raw image embeddings by id.
using ImageStore = std::map<ImageId, EmbeddingVector>;

/// Composes each query, ranks the gallery, and computes every metric.
/// `images` must hold each query's reference embedding.
[[nodiscard]] MetricsReport evaluate(const MappingNetwork& net, const EncoderBundle& encoders,
                                     std::span<const QueryRecord> queries, const ImageStore& images,
                                     const Gallery& gallery, const EvalOptions& options = {});

/// Encodes every image with the frozen visual encoder.
[[nodiscard]] Gallery build_gallery(const ImageStore& images, const EncoderBundle& encoders);

}  // namespace cirsynth
