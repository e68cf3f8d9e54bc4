#include "cirsynth/toy_world.hpp"

#include <random>

#include "cirsynth/error.hpp"
#include "cirsynth/hashing.hpp"

namespace cirsynth {

namespace {

const std::vector<std::string>& word_pool() {
    static const std::vector<std::string> kWords{"north", "south",  "east",    "west",   "up",
                                                 "down",  "bigger", "smaller", "warmer", "cooler"};
    return kWords;
}

Vec gaussian(std::mt19937_64& rng, std::size_t dim, double sigma = 1.0) {
    std::normal_distribution<double> normal(0.0, sigma);
    Vec v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
    return v;
}

}  // namespace

ToyWorld::ToyWorld(const ToyWorldConfig& config) : config_(config) {
    if (config_.dim == 0 || config_.vocabulary_size < 2 || config_.gallery_size < config_.vocabulary_size) {
        throw Error(ErrorCode::InvalidConfig, "toy world needs dim >= 1, >= 2 words, gallery >= vocabulary");
    }
    const auto d = config_.dim;
    std::mt19937_64 rng(derive_seed(config_.seed, "toy-world"));

    for (std::size_t i = 0; i < config_.vocabulary_size; ++i) {
        words_.push_back(i < word_pool().size() ? word_pool()[i] : "word" + std::to_string(i));
    }
    encoders_ = ToyEncoderBundle(derive_seed(config_.seed, "toy-encoders"), d, d, d, words_);
    for (const char* w : {"a", "photo", "of", ","}) {
        encoders_.set_token_embedding(w, encoders_.vocabulary().at(w).normalized() * config_.template_token_scale);
    }

    // Each word token is the text-side preimage of a point near V * displacement.
    const Mat text_pinv = encoders_.text_map().completeOrthogonalDecomposition().pseudoInverse();
    for (const auto& w : words_) {
        Vec disp = gaussian(rng, d);
        disp *= config_.displacement_norm / disp.norm();
        displacements_.push_back(disp);
        Vec feature = encoders_.visual_map() * disp;
        feature += gaussian(rng, d, config_.word_noise * feature.norm() / std::sqrt(static_cast<double>(d)));
        encoders_.set_token_embedding(w, text_pinv * feature);
    }

    unlabeled_.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(config_.unlabeled_count));
    for (Eigen::Index i = 0; i < unlabeled_.cols(); ++i) unlabeled_.col(i) = gaussian(rng, d);

    Vec shift_dir = gaussian(rng, d);
    shift_dir.normalize();
    std::uniform_int_distribution<std::size_t> pick_word(0, words_.size() - 1);

    for (std::size_t i = 0; i < config_.triplet_count; ++i) {
        const auto w = pick_word(rng);
        Vec ref = config_.triplet_shift * shift_dir + gaussian(rng, d, config_.triplet_spread);
        Vec tgt = ref + displacements_[w];
        triplets_.push_back({std::move(ref), words_[w], std::move(tgt), TripletStatus::Kept});
    }

    const auto make_queries = [&](const Vec& center) {
        std::vector<ToyQuery> out;
        for (std::size_t q = 0; q < config_.query_count; ++q) {
            const auto w = pick_word(rng);
            ToyQuery query;
            query.reference = center + gaussian(rng, d);
            query.word = words_[w];
            query.target_id = "target";
            query.candidates.emplace_back("target", query.reference + displacements_[w]);
            for (std::size_t o = 0; o < words_.size(); ++o) {
                if (o == w) continue;
                query.candidates.emplace_back("ref+" + words_[o], query.reference + displacements_[o]);
            }
            for (std::size_t j = query.candidates.size(); j < config_.gallery_size; ++j) {
                query.candidates.emplace_back("other" + std::to_string(j),
                                              center + gaussian(rng, d) + displacements_[w]);
            }
            out.push_back(std::move(query));
        }
        return out;
    };
    heldout_ = make_queries(Vec::Zero(static_cast<Eigen::Index>(d)));
    shifted_ = make_queries(-config_.triplet_shift * shift_dir);
}

MappingNetworkConfig ToyWorld::network_config(std::size_t token_count, std::size_t hidden_dim) const {
    MappingNetworkConfig c;
    c.input_dim = config_.dim;
    c.token_dim = config_.dim;
    c.token_count = token_count;
    c.hidden_dim = hidden_dim;
    return c;
}

MetricsReport ToyWorld::evaluate(const MappingNetwork& net, const std::vector<ToyQuery>& queries,
                                 const std::vector<std::size_t>& k_values, const PromptTemplate& prompt) const {
    std::vector<Ranking> rankings;
    std::vector<QueryRecord> records;
    for (const auto& q : queries) {
        std::vector<std::pair<ImageId, UnitVector>> items;
        for (const auto& [id, v] : q.candidates) items.emplace_back(id, encoders_.encode_image(from_eigen(v)));
        const Gallery gallery(std::move(items));
        const auto composed = compose_query(from_eigen(q.reference), q.word, net, encoders_, prompt);
        rankings.push_back(rank_candidates(composed.composed_feature, gallery));
        records.push_back({"reference", q.word, {q.target_id}, std::nullopt});
    }
    MetricsReport report;
    report.query_count = queries.size();
    double sum = 0.0;
    for (std::size_t k : k_values) {
        report.recall[k] = recall_at_k(rankings, records, k);
        report.map[k] = map_at_k(rankings, records, k);
        sum += report.recall[k];
    }
    report.average_recall = k_values.empty() ? 0.0 : sum / static_cast<double>(k_values.size());
    return report;
}

}  // namespace cirsynth
