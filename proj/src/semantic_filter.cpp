#include "cirsynth/semantic_filter.hpp"

#include <cctype>
#include <optional>

#include "cirsynth/error.hpp"
#include "cirsynth/parallel.hpp"

namespace cirsynth {

void FilterParams::validate() const {
    if (!(similarity_threshold >= -1.0 && similarity_threshold <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "similarity_threshold must lie in [-1, 1]");
    }
}

std::string normalize_whitespace(const std::string& s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

double semantic_consistency(const SemanticTriple& e) {
    return cosine_similarity(add(e.reference, e.query), e.target);
}

SyntheticTriplet filter_triplet(SyntheticTriplet t, const FilterParams& params, const SemanticTriple& embeddings) {
    params.validate();
    if (normalize_whitespace(t.reference_caption) == normalize_whitespace(t.target_caption)) {
        t.filter_score.reset();
        t.status = TripletStatus::DroppedSameCaption;
        return t;
    }
    const double s = semantic_consistency(embeddings);
    t.filter_score = s;
    t.status = s >= params.similarity_threshold ? TripletStatus::Kept : TripletStatus::DroppedLowSimilarity;
    return t;
}

SyntheticTriplet filter_triplet(SyntheticTriplet t, const FilterParams& params, ProviderGateway& gateway) {
    params.validate();
    if (normalize_whitespace(t.reference_caption) == normalize_whitespace(t.target_caption)) {
        t.filter_score.reset();
        t.status = TripletStatus::DroppedSameCaption;
        return t;
    }
    SemanticTriple e{gateway.embed_text(t.reference_caption), gateway.embed_text(t.query_text),
                     gateway.embed_text(t.target_caption)};
    return filter_triplet(std::move(t), params, e);
}

nlohmann::json FilterReport::to_json() const {
    return {{"input", input},
            {"kept", kept},
            {"dropped_same_caption", dropped_same_caption},
            {"dropped_low_similarity", dropped_low_similarity},
            {"errored", errored},
            {"kept_ratio", kept_ratio()}};
}

FilterResult filter_dataset(std::span<const SyntheticTriplet> triplets, const FilterParams& params,
                            ProviderGateway& gateway, std::size_t workers) {
    params.validate();
    std::vector<std::optional<SyntheticTriplet>> slots(triplets.size());
    std::vector<std::string> failures(triplets.size());
    parallel_for(triplets.size(), workers, [&](std::size_t i) {
        try {
            slots[i] = filter_triplet(triplets[i], params, gateway);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });

    FilterResult r;
    r.report.input = triplets.size();
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        if (!slots[i]) {
            ++r.report.errored;
            r.errors.push_back({i, triplets[i].reference_id + "->" + triplets[i].target_id, failures[i]});
            continue;
        }
        switch (slots[i]->status) {
            case TripletStatus::Kept:
                ++r.report.kept;
                r.kept.push_back(*slots[i]);
                break;
            case TripletStatus::DroppedSameCaption: ++r.report.dropped_same_caption; break;
            case TripletStatus::DroppedLowSimilarity: ++r.report.dropped_low_similarity; break;
            case TripletStatus::Unfiltered: break;
        }
        r.scored.push_back(std::move(*slots[i]));
    }
    return r;
}

}  // namespace cirsynth
