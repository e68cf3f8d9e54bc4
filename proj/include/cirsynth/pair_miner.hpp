#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "cirsynth/embedding.hpp"
#include "cirsynth/triplet.hpp"

namespace cirsynth {

enum class DistanceMetric { Cosine };

struct MinerParams {
    std::size_t subgroup_size = 6;
    double max_seed_distance = 0.94;
    double min_member_distance = 0.002;
    std::size_t pairs_per_subgroup = 9;
    DistanceMetric distance = DistanceMetric::Cosine;

    /// Throws InvalidConfig.
    void validate() const;
};

/// Seed first, then the accepted members in ascending distance to the seed.
struct Subgroup {
    ImageId seed_id;
    std::vector<ImageId> member_ids;

    friend bool operator==(const Subgroup&, const Subgroup&) = default;
};

struct MinedPair {
    ImagePair pair;
    ImageId subgroup_seed_id;

    friend bool operator==(const MinedPair&, const MinedPair&) = default;
};

using EmbeddingMap = std::map<ImageId, UnitVector>;

[[nodiscard]] double distance(const UnitVector& a, const UnitVector& b, DistanceMetric metric);

/// Greedy subgroup mining. Seeds are visited in sorted-id order; for each,
/// the other images are scanned by ascending distance and accepted while
/// they stay under max_seed_distance from the seed and above
/// min_member_distance from every accepted member. A seed that is already
/// a member of an earlier subgroup is skipped, so a planted cluster yields
/// one subgroup rather than one per member. Candidate construction is
/// sharded over `workers`; the merge runs in seed order.
[[nodiscard]] std::vector<Subgroup> extract_subgroups(const EmbeddingMap& embeddings, const MinerParams& params,
                                                      std::size_t workers = 1);

/// Independent re-check of both thresholds, size, and uniqueness.
[[nodiscard]] bool validate_subgroup(const Subgroup& group, const EmbeddingMap& embeddings, const MinerParams& params);

/// Deterministic pairing: consecutive chain (m0,m1)..(m_{n-2},m_{n-1}),
/// then seed fan-out (m0,m2)..(m0,m_{n-1}), then remaining forward pairs
/// (i<j) and finally reverse pairs (j>i), all lexicographic; truncated to
/// pairs_per_subgroup. Throws InvalidSubgroup.
[[nodiscard]] std::vector<ImagePair> extract_pairs(const Subgroup& group, const MinerParams& params);

/// Keeps the first occurrence of each ordered pair.
[[nodiscard]] std::vector<ImagePair> dedupe_pairs(std::span<const ImagePair> pairs);
[[nodiscard]] std::vector<MinedPair> dedupe_pairs(std::span<const MinedPair> pairs);

/// extract_subgroups -> extract_pairs -> dedupe_pairs.
[[nodiscard]] std::vector<MinedPair> mine_pairs(const EmbeddingMap& embeddings, const MinerParams& params,
                                                std::size_t workers = 1);

}  // namespace cirsynth
