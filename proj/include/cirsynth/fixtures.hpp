#pragma once

// Generated datasets with known structure, used by the CLI `fixture`
// command and by the test suites.

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "cirsynth/retrieval_eval.hpp"

namespace cirsynth {

struct ClusterFixtureConfig {
    std::size_t clusters = 20;
    std::size_t per_cluster = 6;
    std::size_t dim = 64;
    double spread_degrees = 20.0;  // angle between each member and its cluster axis
    std::uint64_t seed = 0;
};

/// Each cluster lives in its own 3-coordinate block, so clusters are
/// mutually orthogonal (cosine distance 1). Members sit on a cone of
/// spread_degrees around the block diagonal at evenly spaced azimuths
/// with a small seeded jitter, which keeps every intra-cluster distance
/// well inside (0.002, 0.94) for the default spread.
struct ClusterFixture {
    ImageStore images;
    std::map<ImageId, std::size_t> cluster_of;
    /// One query per cluster: first member as reference, second as target.
    std::vector<QueryRecord> queries;
};

/// Throws InvalidConfig when the blocks do not fit in `dim`.
[[nodiscard]] ClusterFixture make_cluster_fixture(const ClusterFixtureConfig& config = {});

}  // namespace cirsynth
