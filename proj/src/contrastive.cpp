#include "cirsynth/contrastive.hpp"

#include <cmath>
#include <string>

#include "cirsynth/error.hpp"

namespace cirsynth {

namespace {

void check_batch(Eigen::Index na, Eigen::Index nb, Eigen::Index da, Eigen::Index db, double temperature) {
    if (na != nb) {
        throw Error(ErrorCode::BatchMismatch, std::to_string(na) + " vs " + std::to_string(nb));
    }
    if (na == 0) throw Error(ErrorCode::InvalidArgument, "empty contrastive batch");
    if (da != db) throw Error(ErrorCode::DimMismatch, std::to_string(da) + " vs " + std::to_string(db));
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");
}

}  // namespace

ContrastiveGrad contrastive_loss_grad(const Mat& a, const Mat& b, double temperature, bool want_grad_a,
                                      bool want_grad_b) {
    check_batch(a.cols(), b.cols(), a.rows(), b.rows(), temperature);
    const auto n = a.cols();
    const Mat logits = (a.transpose() * b) / temperature;

    // Row softmax (a_i against every b_j) and column softmax (b_j against every a_i).
    Mat row_p(n, n);
    Mat col_p(n, n);
    double row_loss = 0.0;
    double col_loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        row_p.row(i) = (logits.row(i).array() - lse).exp();
        row_loss += lse - logits(i, i);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const double m = logits.col(j).maxCoeff();
        const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
        col_p.col(j) = (logits.col(j).array() - lse).exp();
        col_loss += lse - logits(j, j);
    }
    const double nd = static_cast<double>(n);

    ContrastiveGrad out;
    out.loss = 0.5 * (row_loss / nd + col_loss / nd);
    if (!want_grad_a && !want_grad_b) return out;

    // d(loss)/d(logits), then through logits = a^T b / temperature.
    Mat g = 0.5 * (row_p + col_p) / nd;
    g.diagonal().array() -= 1.0 / nd;
    g /= temperature;
    if (want_grad_a) out.grad_a = b * g.transpose();
    if (want_grad_b) out.grad_b = a * g;
    return out;
}

double contrastive_loss(std::span<const UnitVector> a, std::span<const UnitVector> b, double temperature) {
    const auto na = static_cast<Eigen::Index>(a.size());
    const auto nb = static_cast<Eigen::Index>(b.size());
    check_batch(na, nb, na ? static_cast<Eigen::Index>(a[0].dim()) : 0,
                nb ? static_cast<Eigen::Index>(b[0].dim()) : 0, temperature);
    const auto d = static_cast<Eigen::Index>(a[0].dim());
    Mat ma(d, na);
    Mat mb(d, nb);
    for (Eigen::Index i = 0; i < na; ++i) {
        if (static_cast<Eigen::Index>(a[i].dim()) != d || static_cast<Eigen::Index>(b[i].dim()) != d) {
            throw Error(ErrorCode::DimMismatch, "ragged contrastive batch");
        }
        ma.col(i) = to_eigen(a[i].vector());
        mb.col(i) = to_eigen(b[i].vector());
    }
    return contrastive_loss_grad(ma, mb, temperature, false, false).loss;
}

}  // namespace cirsynth
