#pragma once

// Finite-difference check of the hybrid loss gradient on a small toy model,
// shared by the trainer unit tests and the acceptance suite.

#include <random>
#include <vector>

#include "cirsynth/trainer.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace testing {

struct GradCheckSetup {
    std::size_t dim = 8;
    std::size_t token_count = 4;
    std::size_t unlabeled = 6;
    std::size_t triplets = 5;
    cirsynth::Activation activation = cirsynth::Activation::ReLU;
    double temperature = 0.5;
    double step = 1e-4;
    std::uint64_t seed = 1;
};

inline oracle::GradientComparison hybrid_gradient_check(const GradCheckSetup& s, double tolerance = 1e-3) {
    using namespace cirsynth;
    std::mt19937_64 rng(s.seed);
    const std::vector<std::string> words{"north", "south", "east"};
    const ToyEncoderBundle enc(s.seed + 100, s.dim, s.dim, s.dim, words);

    MappingNetworkConfig cfg;
    cfg.input_dim = s.dim;
    cfg.token_dim = s.dim;
    cfg.token_count = s.token_count;
    cfg.activation = s.activation;
    const MappingNetwork net(cfg, s.seed + 200);

    Mat unlabeled(static_cast<Eigen::Index>(s.dim), static_cast<Eigen::Index>(s.unlabeled));
    for (Eigen::Index i = 0; i < unlabeled.cols(); ++i) unlabeled.col(i) = random_vec(rng, s.dim);
    std::vector<TrainingTriplet> triplets;
    for (std::size_t i = 0; i < s.triplets; ++i) {
        triplets.push_back({random_vec(rng, s.dim), words[i % words.size()], random_vec(rng, s.dim),
                            TripletStatus::Kept});
    }

    TrainConfig tc;
    tc.temperature = s.temperature;
    const auto analytic = hybrid_loss_and_gradient(unlabeled, triplets, net, enc, tc).gradient;

    auto probe = net;
    const auto f = [&](const std::vector<double>& p) {
        probe.set_parameters(p);
        return hybrid_loss_and_gradient(unlabeled, triplets, probe, enc, tc).losses.l_hybrid;
    };
    const auto numeric = oracle::central_difference(f, net.parameters(), s.step);
    return oracle::compare_gradients(analytic, numeric, tolerance);
}

}  // namespace testing
