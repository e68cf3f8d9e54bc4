#include "cirsynth/pair_miner.hpp"

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>

#include "cirsynth/error.hpp"
#include "cirsynth/parallel.hpp"

namespace cirsynth {

void MinerParams::validate() const {
    if (subgroup_size < 2) throw Error(ErrorCode::InvalidConfig, "subgroup_size must be >= 2");
    if (pairs_per_subgroup == 0) throw Error(ErrorCode::InvalidConfig, "pairs_per_subgroup must be >= 1");
    if (pairs_per_subgroup > subgroup_size * (subgroup_size - 1)) {
        throw Error(ErrorCode::InvalidConfig, "pairs_per_subgroup exceeds the ordered pairs of a subgroup");
    }
    if (!(min_member_distance >= 0.0 && min_member_distance < max_seed_distance)) {
        throw Error(ErrorCode::InvalidConfig, "need 0 <= min_member_distance < max_seed_distance");
    }
}

double distance(const UnitVector& a, const UnitVector& b, DistanceMetric metric) {
    switch (metric) {
        case DistanceMetric::Cosine: return cosine_distance(a, b);
    }
    return cosine_distance(a, b);
}

namespace {

std::optional<Subgroup> grow_from_seed(std::size_t seed, const std::vector<const ImageId*>& ids,
                                       const std::vector<const UnitVector*>& vecs, const MinerParams& params) {
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(ids.size());
    for (std::size_t j = 0; j < ids.size(); ++j) {
        if (j == seed) continue;
        const double d = distance(*vecs[seed], *vecs[j], params.distance);
        if (d < params.max_seed_distance) order.emplace_back(d, j);
    }
    if (order.size() + 1 < params.subgroup_size) return std::nullopt;
    std::sort(order.begin(), order.end());  // ties: lower index, i.e. smaller id

    std::vector<std::size_t> members{seed};
    for (const auto& [d, j] : order) {
        const bool distinct = std::all_of(members.begin(), members.end(), [&](std::size_t m) {
            return distance(*vecs[m], *vecs[j], params.distance) > params.min_member_distance;
        });
        if (!distinct) continue;
        members.push_back(j);
        if (members.size() == params.subgroup_size) break;
    }
    if (members.size() < params.subgroup_size) return std::nullopt;

    Subgroup g{*ids[seed], {}};
    for (std::size_t m : members) g.member_ids.push_back(*ids[m]);
    return g;
}

}  // namespace

std::vector<Subgroup> extract_subgroups(const EmbeddingMap& embeddings, const MinerParams& params,
                                        std::size_t workers) {
    params.validate();
    std::vector<const ImageId*> ids;
    std::vector<const UnitVector*> vecs;
    for (const auto& [id, v] : embeddings) {
        if (!vecs.empty() && v.dim() != vecs.front()->dim()) {
            throw Error(ErrorCode::DimMismatch, "embedding " + id + " has a different dim");
        }
        ids.push_back(&id);
        vecs.push_back(&v);
    }
    if (ids.size() < params.subgroup_size) return {};

    std::vector<std::optional<Subgroup>> candidates(ids.size());
    parallel_for(ids.size(), workers, [&](std::size_t i) { candidates[i] = grow_from_seed(i, ids, vecs, params); });

    std::vector<Subgroup> out;
    std::unordered_set<ImageId> covered;
    for (auto& c : candidates) {
        if (!c || covered.contains(c->seed_id)) continue;
        covered.insert(c->member_ids.begin(), c->member_ids.end());
        out.push_back(std::move(*c));
    }
    return out;
}

bool validate_subgroup(const Subgroup& group, const EmbeddingMap& embeddings, const MinerParams& params) {
    const auto& m = group.member_ids;
    if (m.size() != params.subgroup_size || m.empty() || m.front() != group.seed_id) return false;
    if (std::set<ImageId>(m.begin(), m.end()).size() != m.size()) return false;
    std::vector<const UnitVector*> v;
    for (const auto& id : m) {
        const auto it = embeddings.find(id);
        if (it == embeddings.end()) return false;
        v.push_back(&it->second);
    }
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (!(distance(*v[0], *v[i], params.distance) < params.max_seed_distance)) return false;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        for (std::size_t j = i + 1; j < v.size(); ++j) {
            if (!(distance(*v[i], *v[j], params.distance) > params.min_member_distance)) return false;
        }
    }
    return true;
}

std::vector<ImagePair> extract_pairs(const Subgroup& group, const MinerParams& params) {
    params.validate();
    const auto& m = group.member_ids;
    const auto n = m.size();
    if (n != params.subgroup_size || m.front() != group.seed_id ||
        std::set<ImageId>(m.begin(), m.end()).size() != n) {
        throw Error(ErrorCode::InvalidSubgroup, "subgroup seeded by " + group.seed_id + " is malformed");
    }

    std::vector<std::pair<std::size_t, std::size_t>> order;
    std::set<std::pair<std::size_t, std::size_t>> used;
    const auto emit = [&](std::size_t a, std::size_t b) {
        if (used.insert({a, b}).second) order.emplace_back(a, b);
    };
    for (std::size_t i = 0; i + 1 < n; ++i) emit(i, i + 1);
    for (std::size_t j = 2; j < n; ++j) emit(0, j);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) emit(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = j + 1; i < n; ++i) emit(i, j);
    }

    std::vector<ImagePair> out;
    out.reserve(params.pairs_per_subgroup);
    for (std::size_t p = 0; p < params.pairs_per_subgroup; ++p) {
        out.push_back({m[order[p].first], m[order[p].second]});
    }
    return out;
}

std::vector<ImagePair> dedupe_pairs(std::span<const ImagePair> pairs) {
    std::set<ImagePair> seen;
    std::vector<ImagePair> out;
    for (const auto& p : pairs) {
        if (seen.insert(p).second) out.push_back(p);
    }
    return out;
}

std::vector<MinedPair> dedupe_pairs(std::span<const MinedPair> pairs) {
    std::set<ImagePair> seen;
    std::vector<MinedPair> out;
    for (const auto& p : pairs) {
        if (seen.insert(p.pair).second) out.push_back(p);
    }
    return out;
}

std::vector<MinedPair> mine_pairs(const EmbeddingMap& embeddings, const MinerParams& params, std::size_t workers) {
    std::vector<MinedPair> all;
    for (const auto& g : extract_subgroups(embeddings, params, workers)) {
        for (auto& p : extract_pairs(g, params)) all.push_back({std::move(p), g.seed_id});
    }
    return dedupe_pairs(all);
}

}  // namespace cirsynth
