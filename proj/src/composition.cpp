#include "cirsynth/composition.hpp"

#include "cirsynth/error.hpp"

namespace cirsynth {

PromptTemplate PromptTemplate::from_json(const nlohmann::json& j) {
    PromptTemplate t;
    t.prefix = j.value("prefix", t.prefix);
    t.separator = j.value("separator", t.separator);
    return t;
}

void check_compatible(const MappingNetwork& net, const EncoderBundle& encoders) {
    if (!encoders.loaded()) throw Error(ErrorCode::EncoderNotLoaded, "encoder bundle is not loaded");
    if (net.token_dim() != encoders.token_dim()) {
        throw Error(ErrorCode::DimMismatch, "pseudo-token dim " + std::to_string(net.token_dim()) +
                                                " vs encoder token dim " + std::to_string(encoders.token_dim()));
    }
    if (net.input_dim() != encoders.image_dim()) {
        throw Error(ErrorCode::DimMismatch, "mapping input dim " + std::to_string(net.input_dim()) +
                                                " vs image dim " + std::to_string(encoders.image_dim()));
    }
}

namespace {

struct Sequence {
    std::vector<Vec> tokens;
    std::size_t pseudo_offset = 0;
};

Sequence splice(std::span<const Vec> pseudo_tokens, const std::string& query_text, const EncoderBundle& encoders,
                const PromptTemplate& tmpl) {
    Sequence s;
    if (!tmpl.prefix.empty()) s.tokens = encoders.tokenize_and_embed(tmpl.prefix);
    s.pseudo_offset = s.tokens.size();
    s.tokens.insert(s.tokens.end(), pseudo_tokens.begin(), pseudo_tokens.end());
    if (!query_text.empty()) {
        auto tail = encoders.tokenize_and_embed(tmpl.separator + query_text);
        s.tokens.insert(s.tokens.end(), std::make_move_iterator(tail.begin()), std::make_move_iterator(tail.end()));
    }
    return s;
}

}  // namespace

std::vector<Vec> build_token_sequence(std::span<const Vec> pseudo_tokens, const std::string& query_text,
                                      const EncoderBundle& encoders, const PromptTemplate& tmpl) {
    if (!encoders.loaded()) throw Error(ErrorCode::EncoderNotLoaded, "encoder bundle is not loaded");
    return splice(pseudo_tokens, query_text, encoders, tmpl).tokens;
}

ComposedQuery compose_query(const EmbeddingVector& image, const std::string& query_text, const MappingNetwork& net,
                            const EncoderBundle& encoders, const PromptTemplate& tmpl) {
    check_compatible(net, encoders);
    ComposedQuery q;
    q.pseudo_tokens = net.map_image_to_tokens(image);
    q.query_text = query_text;
    const auto seq = build_token_sequence(q.pseudo_tokens, query_text, encoders, tmpl);
    q.composed_feature = l2_normalize(from_eigen(encoders.encode_text_tokens(seq)));
    return q;
}

ComposedBatch::ComposedBatch(const Mat& images, std::span<const std::string> query_texts, const MappingNetwork& net,
                             const EncoderBundle& encoders, const PromptTemplate& tmpl)
    : net_(net), encoders_(encoders) {
    check_compatible(net, encoders);
    if (static_cast<std::size_t>(images.cols()) != query_texts.size()) {
        throw Error(ErrorCode::BatchMismatch, "images and query texts differ in batch size");
    }
    const Mat out = net.forward(images, &cache_);
    const auto d = static_cast<Eigen::Index>(net.token_dim());
    const auto k = net.token_count();
    features_.resize(static_cast<Eigen::Index>(encoders.output_dim()), images.cols());
    sequences_.reserve(query_texts.size());
    std::vector<Vec> pseudo(k);
    for (Eigen::Index b = 0; b < images.cols(); ++b) {
        for (std::size_t j = 0; j < k; ++j) pseudo[j] = out.col(b).segment(static_cast<Eigen::Index>(j) * d, d);
        auto seq = splice(pseudo, query_texts[static_cast<std::size_t>(b)], encoders, tmpl);
        features_.col(b) = encoders.encode_text_tokens(seq.tokens);
        pseudo_offset_.push_back(seq.pseudo_offset);
        sequences_.push_back(std::move(seq.tokens));
    }
}

std::vector<double> ComposedBatch::backward(const Mat& grad_features) const {
    const auto d = static_cast<Eigen::Index>(net_.token_dim());
    const auto k = net_.token_count();
    Mat grad_out(static_cast<Eigen::Index>(k) * d, features_.cols());
    for (Eigen::Index b = 0; b < features_.cols(); ++b) {
        const auto& seq = sequences_[static_cast<std::size_t>(b)];
        const auto grads = encoders_.text_tokens_vjp(seq, grad_features.col(b));
        const auto off = pseudo_offset_[static_cast<std::size_t>(b)];
        for (std::size_t j = 0; j < k; ++j) {
            grad_out.col(b).segment(static_cast<Eigen::Index>(j) * d, d) = grads[off + j];
        }
    }
    return net_.backward(cache_, grad_out);
}

}  // namespace cirsynth
