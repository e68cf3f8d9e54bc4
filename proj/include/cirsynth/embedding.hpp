#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cirsynth {

/// Fixed-dimension real vector: finite entries, dim >= 1.
class EmbeddingVector {
public:
    EmbeddingVector() = default;
    explicit EmbeddingVector(std::vector<double> values);

    [[nodiscard]] std::size_t dim() const noexcept { return values_.size(); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] const std::vector<double>& raw() const noexcept { return values_; }
    [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
    [[nodiscard]] double norm() const noexcept;

    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

private:
    std::vector<double> values_;
};

/// An EmbeddingVector whose L2 norm is 1 within 1e-6.
class UnitVector {
public:
    UnitVector() = default;

    /// Checked wrap: throws InvalidArgument if v is not unit norm.
    static UnitVector from_unit(EmbeddingVector v);

    [[nodiscard]] std::size_t dim() const noexcept { return vec_.dim(); }
    [[nodiscard]] std::span<const double> values() const noexcept { return vec_.values(); }
    [[nodiscard]] double operator[](std::size_t i) const { return vec_[i]; }
    [[nodiscard]] const EmbeddingVector& vector() const noexcept { return vec_; }

    friend bool operator==(const UnitVector&, const UnitVector&) = default;

private:
    friend UnitVector l2_normalize(const EmbeddingVector& v);
    explicit UnitVector(EmbeddingVector v) : vec_(std::move(v)) {}
    EmbeddingVector vec_;
};

inline constexpr double kZeroNormEpsilon = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-6;

[[nodiscard]] double dot(std::span<const double> a, std::span<const double> b);

/// Throws ZeroVector if ||v|| < 1e-12.
[[nodiscard]] UnitVector l2_normalize(const EmbeddingVector& v);

/// dot(a,b)/(|a||b|) clamped to [-1, 1]. Throws DimMismatch or ZeroVector.
[[nodiscard]] double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);
[[nodiscard]] double cosine_similarity(const UnitVector& a, const UnitVector& b);

/// 1 - cosine_similarity, in [0, 2].
[[nodiscard]] double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b);
[[nodiscard]] double cosine_distance(const UnitVector& a, const UnitVector& b);

/// Row-major |A| x |B| matrix of cosine similarities.
struct SimilarityMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

[[nodiscard]] SimilarityMatrix similarity_matrix(std::span<const UnitVector> a,
                                                 std::span<const UnitVector> b);

/// Elementwise sum; throws DimMismatch.
[[nodiscard]] EmbeddingVector add(const EmbeddingVector& a, const EmbeddingVector& b);

}  // namespace cirsynth
