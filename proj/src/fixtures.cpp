#include "cirsynth/fixtures.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "cirsynth/error.hpp"
#include "cirsynth/hashing.hpp"

namespace cirsynth {

ClusterFixture make_cluster_fixture(const ClusterFixtureConfig& config) {
    if (config.clusters == 0 || config.per_cluster < 2 || config.dim < 3 * config.clusters) {
        throw Error(ErrorCode::InvalidConfig, "cluster fixture needs dim >= 3 * clusters and >= 2 members");
    }
    std::mt19937_64 rng(derive_seed(config.seed, "cluster-fixture"));
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);

    // Orthonormal frame of the 3-d block: axis along (1,1,1), two across it.
    const double s3 = std::sqrt(3.0);
    const double s2 = std::sqrt(2.0);
    const double s6 = std::sqrt(6.0);
    const double axis[3] = {1 / s3, 1 / s3, 1 / s3};
    const double u[3] = {1 / s2, -1 / s2, 0};
    const double w[3] = {1 / s6, 1 / s6, -2 / s6};
    const double spread = config.spread_degrees * std::numbers::pi / 180.0;

    ClusterFixture out;
    for (std::size_t c = 0; c < config.clusters; ++c) {
        std::vector<ImageId> members;
        for (std::size_t m = 0; m < config.per_cluster; ++m) {
            const double phi = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(config.per_cluster);
            const double theta = spread * (1.0 + jitter(rng));
            std::vector<double> v(config.dim, 0.0);
            for (int i = 0; i < 3; ++i) {
                v[3 * c + static_cast<std::size_t>(i)] =
                    std::cos(theta) * axis[i] + std::sin(theta) * (std::cos(phi) * u[i] + std::sin(phi) * w[i]);
            }
            char id[32];
            std::snprintf(id, sizeof id, "c%02zu_m%02zu", c, m);
            out.images.emplace(id, EmbeddingVector(std::move(v)));
            out.cluster_of.emplace(id, c);
            members.emplace_back(id);
        }
        out.queries.push_back({members[0], "change it to its neighbour", {members[1]}, members});
    }
    return out;
}

}  // namespace cirsynth
