#pragma once

#include <span>

#include "cirsynth/embedding.hpp"
#include "cirsynth/encoders.hpp"

namespace cirsynth {

/// Symmetric InfoNCE over cosine logits / temperature: the mean of the
/// row-wise and column-wise cross-entropies with diagonal targets.
/// Throws BatchMismatch, DimMismatch, or InvalidArgument (empty batch or
/// temperature <= 0).
[[nodiscard]] double contrastive_loss(std::span<const UnitVector> a, std::span<const UnitVector> b,
                                      double temperature);

struct ContrastiveGrad {
    double loss = 0.0;
    Mat grad_a;  // same shape as a; empty unless requested
    Mat grad_b;
};

/// Columns of a and b are unit features, paired by column index.
[[nodiscard]] ContrastiveGrad contrastive_loss_grad(const Mat& a, const Mat& b, double temperature,
                                                    bool want_grad_a, bool want_grad_b);

}  // namespace cirsynth
