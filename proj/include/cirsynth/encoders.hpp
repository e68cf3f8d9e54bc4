#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cirsynth/embedding.hpp"

namespace cirsynth {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

[[nodiscard]] Vec to_eigen(const EmbeddingVector& v);
[[nodiscard]] EmbeddingVector from_eigen(const Vec& v);

/// Frozen visual + text encoders sharing one retrieval space.
///
/// The text side is split at the embedding layer: tokenize_and_embed()
/// turns text into token embeddings, and encode_text_tokens() pools any
/// token sequence (including spliced continuous tokens) into one feature.
/// text_tokens_vjp() gives the gradient of that feature w.r.t. each input
/// token; nothing ever writes encoder weights.
class EncoderBundle {
public:
    virtual ~EncoderBundle() = default;

    [[nodiscard]] virtual bool loaded() const noexcept = 0;
    [[nodiscard]] virtual std::size_t image_dim() const = 0;
    [[nodiscard]] virtual std::size_t token_dim() const = 0;
    [[nodiscard]] virtual std::size_t output_dim() const = 0;

    /// Unit-norm image feature.
    [[nodiscard]] virtual Vec encode_image(const Vec& image) const = 0;

    [[nodiscard]] virtual std::vector<Vec> tokenize_and_embed(std::string_view text) const = 0;

    /// Unit-norm pooled text feature.
    [[nodiscard]] virtual Vec encode_text_tokens(std::span<const Vec> tokens) const = 0;

    /// d(feature)/d(token_i)^T * grad_feature for every token.
    [[nodiscard]] virtual std::vector<Vec> text_tokens_vjp(std::span<const Vec> tokens,
                                                           const Vec& grad_feature) const = 0;

    /// Raw bytes of every encoder weight, for frozen-contract checks.
    [[nodiscard]] virtual std::string weights_snapshot() const = 0;

    [[nodiscard]] UnitVector encode_image(const EmbeddingVector& image) const;
    [[nodiscard]] UnitVector encode_text(std::string_view text) const;
};

/// Desk-scale stand-in for pretrained dual encoders.
///
/// visual(x) = normalize(V x)
/// text(t_1..t_n) = normalize(W * mean(t_i))
///
/// V and W are fixed Gaussian maps and the vocabulary is a small lookup
/// table; words outside it map to "<unk>". Punctuation characters become
/// their own tokens, so ", " yields the "," token.
class ToyEncoderBundle final : public EncoderBundle {
public:
    /// Unloaded bundle: every encode call throws EncoderNotLoaded.
    ToyEncoderBundle() = default;

    ToyEncoderBundle(std::uint64_t seed, std::size_t image_dim, std::size_t token_dim,
                     std::size_t output_dim, std::vector<std::string> extra_words = {});

    [[nodiscard]] bool loaded() const noexcept override { return loaded_; }
    [[nodiscard]] std::size_t image_dim() const override;
    [[nodiscard]] std::size_t token_dim() const override;
    [[nodiscard]] std::size_t output_dim() const override;

    using EncoderBundle::encode_image;
    [[nodiscard]] Vec encode_image(const Vec& image) const override;
    [[nodiscard]] std::vector<Vec> tokenize_and_embed(std::string_view text) const override;
    [[nodiscard]] Vec encode_text_tokens(std::span<const Vec> tokens) const override;
    [[nodiscard]] std::vector<Vec> text_tokens_vjp(std::span<const Vec> tokens,
                                                   const Vec& grad_feature) const override;
    [[nodiscard]] std::string weights_snapshot() const override;

    /// Lowercased word tokens; each punctuation character is its own token.
    [[nodiscard]] static std::vector<std::string> tokenize(std::string_view text);

    /// Adds or replaces a vocabulary entry. Only valid while building a
    /// bundle; the trainer holds bundles by const reference.
    void set_token_embedding(const std::string& word, const Vec& embedding);

    [[nodiscard]] const Mat& visual_map() const;
    [[nodiscard]] const Mat& text_map() const;
    [[nodiscard]] const std::map<std::string, Vec>& vocabulary() const noexcept { return vocab_; }

    [[nodiscard]] nlohmann::json to_json() const;
    static ToyEncoderBundle from_json(const nlohmann::json& j);

private:
    void require_loaded() const;

    bool loaded_ = false;
    Mat visual_;  // output_dim x image_dim
    Mat text_;    // output_dim x token_dim
    std::map<std::string, Vec> vocab_;
};

/// Words every toy vocabulary carries: the prompt template plus "<unk>".
[[nodiscard]] const std::vector<std::string>& toy_base_vocabulary();

}  // namespace cirsynth
