#include "cirsynth/retrieval_eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "cirsynth/error.hpp"

namespace cirsynth {

void QueryRecord::validate() const {
    if (reference_id.empty()) throw Error(ErrorCode::MalformedRecord, "query without reference_id");
    if (ground_truth_ids.empty()) {
        throw Error(ErrorCode::MalformedRecord, "query " + reference_id + " has no ground truth");
    }
    if (ground_truth_ids.contains(reference_id)) {
        throw Error(ErrorCode::MalformedRecord, "query " + reference_id + " lists its reference as ground truth");
    }
    if (subset_ids) {
        const auto& s = *subset_ids;
        if (std::find(s.begin(), s.end(), reference_id) == s.end()) {
            throw Error(ErrorCode::MalformedRecord, "subset of " + reference_id + " lacks the reference");
        }
        const bool any_gt = std::any_of(s.begin(), s.end(), [&](const ImageId& id) {
            return ground_truth_ids.contains(id);
        });
        if (!any_gt) throw Error(ErrorCode::MalformedRecord, "subset of " + reference_id + " has no ground truth");
    }
}

Gallery::Gallery(std::vector<std::pair<ImageId, UnitVector>> items) : items_(std::move(items)) {
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (!index_.emplace(items_[i].first, i).second) {
            throw Error(ErrorCode::InvalidArgument, "duplicate gallery id " + items_[i].first);
        }
        if (items_[i].second.dim() != items_[0].second.dim()) {
            throw Error(ErrorCode::DimMismatch, "gallery item " + items_[i].first + " has a different dim");
        }
    }
}

const UnitVector* Gallery::find(const ImageId& id) const {
    const auto it = index_.find(id);
    return it == index_.end() ? nullptr : &items_[it->second].second;
}

namespace {

Ranking sort_scored(std::vector<std::pair<double, const ImageId*>>& scored) {
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return *a.second < *b.second;
    });
    Ranking out;
    out.reserve(scored.size());
    for (const auto& [score, id] : scored) out.push_back(*id);
    return out;
}

}  // namespace

Ranking rank_candidates(const UnitVector& composed_feature, const Gallery& gallery, const std::set<ImageId>& exclude) {
    std::vector<std::pair<double, const ImageId*>> scored;
    scored.reserve(gallery.size());
    for (const auto& [id, feature] : gallery.items()) {
        if (exclude.contains(id)) continue;
        scored.emplace_back(cosine_similarity(composed_feature, feature), &id);
    }
    if (scored.empty()) throw Error(ErrorCode::EmptyGallery, "no candidates left after exclusion");
    return sort_scored(scored);
}

Ranking rank_subset(const UnitVector& composed_feature, const Gallery& gallery, std::span<const ImageId> candidates,
                    const std::set<ImageId>& exclude) {
    std::vector<std::pair<double, const ImageId*>> scored;
    std::set<ImageId> seen;
    for (const auto& id : candidates) {
        if (exclude.contains(id) || !seen.insert(id).second) continue;
        const UnitVector* feature = gallery.find(id);
        if (!feature) throw Error(ErrorCode::MissingInput, "subset image " + id + " is not in the gallery");
        scored.emplace_back(cosine_similarity(composed_feature, *feature), &id);
    }
    if (scored.empty()) throw Error(ErrorCode::EmptyGallery, "subset has no candidates after exclusion");
    return sort_scored(scored);
}

double recall_at_k(std::span<const Ranking> rankings, std::span<const QueryRecord> queries, std::size_t k) {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "K must be >= 1");
    if (rankings.size() != queries.size()) throw Error(ErrorCode::BatchMismatch, "rankings vs queries");
    if (queries.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto& r = rankings[q];
        const auto top = std::min(k, r.size());
        const bool hit = std::any_of(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(top),
                                     [&](const ImageId& id) { return queries[q].ground_truth_ids.contains(id); });
        hits += hit ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double subset_recall_at_k(std::span<const QueryRecord> queries, std::span<const UnitVector> composed_features,
                          const Gallery& gallery, std::size_t k) {
    if (queries.size() != composed_features.size()) throw Error(ErrorCode::BatchMismatch, "features vs queries");
    std::vector<Ranking> rankings;
    rankings.reserve(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        if (!queries[q].subset_ids) {
            throw Error(ErrorCode::MissingSubset, "query " + queries[q].reference_id + " has no subset");
        }
        rankings.push_back(rank_subset(composed_features[q], gallery, *queries[q].subset_ids,
                                       {queries[q].reference_id}));
    }
    return recall_at_k(rankings, queries, k);
}

double map_at_k(std::span<const Ranking> rankings, std::span<const QueryRecord> queries, std::size_t k) {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "K must be >= 1");
    if (rankings.size() != queries.size()) throw Error(ErrorCode::BatchMismatch, "rankings vs queries");
    if (queries.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto& gt = queries[q].ground_truth_ids;
        const auto& r = rankings[q];
        double ap = 0.0;
        std::size_t relevant = 0;
        for (std::size_t i = 0; i < std::min(k, r.size()); ++i) {
            if (gt.contains(r[i])) {
                ++relevant;
                ap += static_cast<double>(relevant) / static_cast<double>(i + 1);
            }
        }
        total += ap / static_cast<double>(std::min(gt.size(), k));
    }
    return total / static_cast<double>(queries.size());
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["query_count"] = query_count;
    auto put = [&j](const char* name, const std::map<std::size_t, double>& m) {
        auto& o = j[name] = nlohmann::json::object();
        for (const auto& [k, v] : m) o[std::to_string(k)] = v;
    };
    put("recall", recall);
    put("subset_recall", subset_recall);
    put("map", map);
    j["average_recall"] = average_recall;
    return j;
}

namespace {
std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}
}  // namespace

std::string MetricsReport::to_table() const {
    std::vector<std::string> header;
    std::vector<std::string> row;
    for (const auto& [k, v] : recall) {
        header.push_back("R@" + std::to_string(k));
        row.push_back(pct(v));
    }
    if (!recall.empty()) {
        header.emplace_back("Avg");
        row.push_back(pct(average_recall));
    }
    for (const auto& [k, v] : subset_recall) {
        header.push_back("Rs@" + std::to_string(k));
        row.push_back(pct(v));
    }
    for (const auto& [k, v] : map) {
        header.push_back("mAP@" + std::to_string(k));
        row.push_back(pct(v));
    }
    std::ostringstream out;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto w = std::max(header[i].size(), row[i].size());
        out << (i ? "  " : "") << std::string(w - header[i].size(), ' ') << header[i];
    }
    out << '\n';
    for (std::size_t i = 0; i < row.size(); ++i) {
        const auto w = std::max(header[i].size(), row[i].size());
        out << (i ? "  " : "") << std::string(w - row[i].size(), ' ') << row[i];
    }
    out << '\n';
    return out.str();
}

Gallery build_gallery(const ImageStore& images, const EncoderBundle& encoders) {
    std::vector<std::pair<ImageId, UnitVector>> items;
    items.reserve(images.size());
    for (const auto& [id, v] : images) items.emplace_back(id, encoders.encode_image(v));
    return Gallery(std::move(items));
}

MetricsReport evaluate(const MappingNetwork& net, const EncoderBundle& encoders, std::span<const QueryRecord> queries,
                       const ImageStore& images, const Gallery& gallery, const EvalOptions& options) {
    check_compatible(net, encoders);
    if (gallery.empty()) throw Error(ErrorCode::EmptyGallery, "gallery is empty");
    MetricsReport report;
    report.query_count = queries.size();

    std::vector<UnitVector> features;
    std::vector<Ranking> rankings;
    features.reserve(queries.size());
    rankings.reserve(queries.size());
    bool all_subsets = !queries.empty();
    for (const auto& q : queries) {
        q.validate();
        const auto it = images.find(q.reference_id);
        if (it == images.end()) throw Error(ErrorCode::MissingInput, "no embedding for reference " + q.reference_id);
        auto composed = compose_query(it->second, q.query_text, net, encoders, options.prompt);
        std::set<ImageId> exclude;
        if (options.exclude_reference) exclude.insert(q.reference_id);
        rankings.push_back(rank_candidates(composed.composed_feature, gallery, exclude));
        features.push_back(std::move(composed.composed_feature));
        all_subsets = all_subsets && q.subset_ids.has_value();
    }

    double recall_sum = 0.0;
    for (std::size_t k : options.k_values) {
        report.recall[k] = recall_at_k(rankings, queries, k);
        report.map[k] = map_at_k(rankings, queries, k);
    }
    for (const auto& [k, v] : report.recall) recall_sum += v;
    report.average_recall = report.recall.empty() ? 0.0 : recall_sum / static_cast<double>(report.recall.size());
    if (all_subsets) {
        for (std::size_t k : options.subset_k_values) {
            report.subset_recall[k] = subset_recall_at_k(queries, features, gallery, k);
        }
    }
    return report;
}

}  // namespace cirsynth
