#include "cirsynth/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cirsynth/error.hpp"

namespace cirsynth {

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) {
        throw Error(ErrorCode::InvalidArgument, "embedding must have dim >= 1");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw Error(ErrorCode::NonFinite, "non-finite entry at index " + std::to_string(i));
        }
    }
}

double EmbeddingVector::norm() const noexcept {
    return std::sqrt(dot(values_, values_));
}

UnitVector UnitVector::from_unit(EmbeddingVector v) {
    const double n = v.norm();
    if (std::abs(n - 1.0) > kUnitNormTolerance) {
        throw Error(ErrorCode::InvalidArgument, "vector norm " + std::to_string(n) + " is not 1");
    }
    return UnitVector(std::move(v));
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimMismatch,
                    std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

UnitVector l2_normalize(const EmbeddingVector& v) {
    const double n = v.norm();
    if (v.empty() || n < kZeroNormEpsilon) {
        throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
    }
    std::vector<double> out(v.raw());
    for (double& x : out) x /= n;
    return UnitVector(EmbeddingVector(std::move(out)));
}

namespace {
double clamp_unit(double s) { return std::clamp(s, -1.0, 1.0); }
}  // namespace

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::DimMismatch,
                    std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (na < kZeroNormEpsilon || nb < kZeroNormEpsilon) {
        throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
    }
    return clamp_unit(dot(a.values(), b.values()) / (na * nb));
}

double cosine_similarity(const UnitVector& a, const UnitVector& b) {
    return clamp_unit(dot(a.values(), b.values()));
}

double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
    return 1.0 - cosine_similarity(a, b);
}

double cosine_distance(const UnitVector& a, const UnitVector& b) {
    return 1.0 - cosine_similarity(a, b);
}

SimilarityMatrix similarity_matrix(std::span<const UnitVector> a, std::span<const UnitVector> b) {
    SimilarityMatrix m{a.size(), b.size(), std::vector<double>(a.size() * b.size())};
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            m.data[i * m.cols + j] = cosine_similarity(a[i], b[j]);
        }
    }
    return m;
}

EmbeddingVector add(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::DimMismatch,
                    std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
    std::vector<double> out(a.raw());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return EmbeddingVector(std::move(out));
}

}  // namespace cirsynth
