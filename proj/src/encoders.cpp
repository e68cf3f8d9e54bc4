#include "cirsynth/encoders.hpp"

#include <cctype>
#include <cmath>
#include <random>

#include "cirsynth/error.hpp"
#include "cirsynth/hashing.hpp"

namespace cirsynth {

using nlohmann::json;

Vec to_eigen(const EmbeddingVector& v) {
    return Eigen::Map<const Vec>(v.raw().data(), static_cast<Eigen::Index>(v.dim()));
}

EmbeddingVector from_eigen(const Vec& v) {
    return EmbeddingVector(std::vector<double>(v.data(), v.data() + v.size()));
}

UnitVector EncoderBundle::encode_image(const EmbeddingVector& image) const {
    return l2_normalize(from_eigen(encode_image(to_eigen(image))));
}

UnitVector EncoderBundle::encode_text(std::string_view text) const {
    const auto tokens = tokenize_and_embed(text);
    return l2_normalize(from_eigen(encode_text_tokens(tokens)));
}

const std::vector<std::string>& toy_base_vocabulary() {
    static const std::vector<std::string> kWords{"<unk>", "a", "photo", "of", ",", "change", "to", "the"};
    return kWords;
}

namespace {

Mat gaussian_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal(rng);
    }
    return m;
}

Vec token_vector(std::uint64_t seed, const std::string& word, std::size_t dim) {
    std::mt19937_64 rng(hash64(std::to_string(seed) + ":token:" + word));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    Vec v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
    return v;
}

std::vector<double> flatten(const Mat& m) { return {m.data(), m.data() + m.size()}; }

Mat unflatten(const json& j, std::size_t rows, std::size_t cols) {
    const auto data = j.get<std::vector<double>>();
    if (data.size() != rows * cols) throw Error(ErrorCode::MalformedRecord, "encoder matrix size mismatch");
    return Eigen::Map<const Mat>(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void append_bytes(std::string& out, const double* data, std::size_t n) {
    out.append(reinterpret_cast<const char*>(data), n * sizeof(double));
}

}  // namespace

ToyEncoderBundle::ToyEncoderBundle(std::uint64_t seed, std::size_t image_dim, std::size_t token_dim,
                                   std::size_t output_dim, std::vector<std::string> extra_words)
    : loaded_(true) {
    if (image_dim == 0 || token_dim == 0 || output_dim == 0) {
        throw Error(ErrorCode::InvalidConfig, "encoder dims must be >= 1");
    }
    std::mt19937_64 rng(seed);
    visual_ = gaussian_matrix(rng, output_dim, image_dim);
    text_ = gaussian_matrix(rng, output_dim, token_dim);
    for (const auto& w : toy_base_vocabulary()) vocab_[w] = token_vector(seed, w, token_dim);
    for (const auto& w : extra_words) vocab_[w] = token_vector(seed, w, token_dim);
}

void ToyEncoderBundle::require_loaded() const {
    if (!loaded_) throw Error(ErrorCode::EncoderNotLoaded, "toy encoder bundle has no weights");
}

std::size_t ToyEncoderBundle::image_dim() const {
    require_loaded();
    return static_cast<std::size_t>(visual_.cols());
}

std::size_t ToyEncoderBundle::token_dim() const {
    require_loaded();
    return static_cast<std::size_t>(text_.cols());
}

std::size_t ToyEncoderBundle::output_dim() const {
    require_loaded();
    return static_cast<std::size_t>(text_.rows());
}

const Mat& ToyEncoderBundle::visual_map() const {
    require_loaded();
    return visual_;
}

const Mat& ToyEncoderBundle::text_map() const {
    require_loaded();
    return text_;
}

Vec ToyEncoderBundle::encode_image(const Vec& image) const {
    require_loaded();
    if (image.size() != visual_.cols()) {
        throw Error(ErrorCode::DimMismatch, "image dim " + std::to_string(image.size()) + " vs encoder " +
                                                std::to_string(visual_.cols()));
    }
    Vec y = visual_ * image;
    const double n = y.norm();
    if (n < kZeroNormEpsilon) throw Error(ErrorCode::ZeroVector, "image feature is zero");
    return y / n;
}

std::vector<std::string> ToyEncoderBundle::tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    const auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c == '_' || c == '-') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
            if (std::ispunct(c)) out.emplace_back(1, ch);
        }
    }
    flush();
    return out;
}

std::vector<Vec> ToyEncoderBundle::tokenize_and_embed(std::string_view text) const {
    require_loaded();
    std::vector<Vec> out;
    for (const auto& tok : tokenize(text)) {
        auto it = vocab_.find(tok);
        out.push_back(it != vocab_.end() ? it->second : vocab_.at("<unk>"));
    }
    return out;
}

Vec ToyEncoderBundle::encode_text_tokens(std::span<const Vec> tokens) const {
    require_loaded();
    if (tokens.empty()) throw Error(ErrorCode::InvalidArgument, "empty token sequence");
    Vec mean = Vec::Zero(text_.cols());
    for (const auto& t : tokens) {
        if (t.size() != text_.cols()) {
            throw Error(ErrorCode::DimMismatch, "token dim " + std::to_string(t.size()) + " vs encoder " +
                                                    std::to_string(text_.cols()));
        }
        mean += t;
    }
    mean /= static_cast<double>(tokens.size());
    Vec y = text_ * mean;
    const double n = y.norm();
    if (n < kZeroNormEpsilon) throw Error(ErrorCode::ZeroVector, "pooled text feature is zero");
    return y / n;
}

std::vector<Vec> ToyEncoderBundle::text_tokens_vjp(std::span<const Vec> tokens, const Vec& grad_feature) const {
    require_loaded();
    if (tokens.empty()) throw Error(ErrorCode::InvalidArgument, "empty token sequence");
    Vec mean = Vec::Zero(text_.cols());
    for (const auto& t : tokens) mean += t;
    mean /= static_cast<double>(tokens.size());
    const Vec y = text_ * mean;
    const double n = y.norm();
    const Vec f = y / n;
    // d(y/|y|)/dy = (I - f f^T) / |y|
    const Vec grad_y = (grad_feature - f * f.dot(grad_feature)) / n;
    const Vec grad_token = text_.transpose() * grad_y / static_cast<double>(tokens.size());
    return std::vector<Vec>(tokens.size(), grad_token);
}

void ToyEncoderBundle::set_token_embedding(const std::string& word, const Vec& embedding) {
    require_loaded();
    if (embedding.size() != text_.cols()) throw Error(ErrorCode::DimMismatch, "token embedding dim");
    vocab_[word] = embedding;
}

std::string ToyEncoderBundle::weights_snapshot() const {
    std::string out;
    if (!loaded_) return out;
    append_bytes(out, visual_.data(), static_cast<std::size_t>(visual_.size()));
    append_bytes(out, text_.data(), static_cast<std::size_t>(text_.size()));
    for (const auto& [word, v] : vocab_) {
        out.append(word).push_back('\0');
        append_bytes(out, v.data(), static_cast<std::size_t>(v.size()));
    }
    return out;
}

json ToyEncoderBundle::to_json() const {
    require_loaded();
    json vocab = json::object();
    for (const auto& [word, v] : vocab_) vocab[word] = std::vector<double>(v.data(), v.data() + v.size());
    return {{"type", "toy"},
            {"image_dim", visual_.cols()},
            {"token_dim", text_.cols()},
            {"output_dim", text_.rows()},
            {"visual", flatten(visual_)},
            {"text", flatten(text_)},
            {"vocabulary", vocab}};
}

ToyEncoderBundle ToyEncoderBundle::from_json(const json& j) {
    try {
        ToyEncoderBundle b;
        const auto d_img = j.at("image_dim").get<std::size_t>();
        const auto d_tok = j.at("token_dim").get<std::size_t>();
        const auto d_out = j.at("output_dim").get<std::size_t>();
        b.visual_ = unflatten(j.at("visual"), d_out, d_img);
        b.text_ = unflatten(j.at("text"), d_out, d_tok);
        for (const auto& [word, v] : j.at("vocabulary").items()) {
            const auto data = v.get<std::vector<double>>();
            if (data.size() != d_tok) throw Error(ErrorCode::MalformedRecord, "vocabulary entry dim");
            b.vocab_[word] = Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(d_tok));
        }
        if (!b.vocab_.contains("<unk>")) throw Error(ErrorCode::MalformedRecord, "vocabulary lacks <unk>");
        b.loaded_ = true;
        return b;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedRecord, std::string("encoder bundle: ") + e.what());
    }
}

}  // namespace cirsynth
