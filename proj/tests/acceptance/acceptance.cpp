// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cirsynth/contrastive.hpp"
#include "cirsynth/records.hpp"
#include "cirsynth/semantic_filter.hpp"
#include "cirsynth/toy_world.hpp"
#include "cirsynth/trainer.hpp"
#include "gradcheck.hpp"
#include "metric_fixture.hpp"
#include "oracles.hpp"
#include "pipeline_fixture.hpp"
#include "test_support.hpp"

using namespace cirsynth;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CIRSYNTH_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<double> raw(const EmbeddingVector& v) { return {v.values().begin(), v.values().end()}; }

// 1. Mining on planted clusters through the command line.
Verdict pair_mining() {
    testing::TempDir dir("acc_pairs");
    const std::string d = dir.path().string();
    if (run_cli("fixture clusters --out " + d) != 0) return {false, "fixture command failed"};
    const auto t0 = Clock::now();
    const int rc = run_cli("--embeddings " + d + "/embeddings.jsonl --out-dir " + d + "/out syncir pairs");
    const double elapsed = seconds_since(t0);
    if (rc != 0) return {false, "syncir pairs exited with " + std::to_string(rc)};

    const auto pairs = load_pairs(dir / "out" / "pairs.jsonl");
    const auto images = load_embeddings(dir / "embeddings.jsonl");
    const auto fixture = make_cluster_fixture();
    const MinerParams params;

    std::vector<std::pair<std::string, std::string>> ids;
    std::map<ImageId, std::set<ImageId>> groups;
    for (const auto& p : pairs) {
        ids.emplace_back(p.pair.reference_id, p.pair.target_id);
        auto& g = groups[p.subgroup_seed_id];
        g.insert(p.pair.reference_id);
        g.insert(p.pair.target_id);
    }
    const bool deduped = oracle::quadratic_dedupe(ids).size() == ids.size();

    std::size_t valid = 0;
    std::set<std::size_t> clusters_recovered;
    for (const auto& [seed, members] : groups) {
        bool ok = members.size() == params.subgroup_size && members.count(seed) == 1;
        std::set<std::size_t> cluster_ids;
        for (const auto& a : members) {
            cluster_ids.insert(fixture.cluster_of.at(a));
            const double to_seed = 1.0 - oracle::cosine(raw(images.at(seed)), raw(images.at(a)));
            if (a != seed && !(to_seed < params.max_seed_distance)) ok = false;
            for (const auto& b : members) {
                if (a < b && !(1.0 - oracle::cosine(raw(images.at(a)), raw(images.at(b))) > params.min_member_distance)) {
                    ok = false;
                }
            }
        }
        if (ok && cluster_ids.size() == 1) {
            ++valid;
            clusters_recovered.insert(*cluster_ids.begin());
        }
    }
    const bool pass = pairs.size() == 180 && deduped && groups.size() == 20 && valid == 20 &&
                      clusters_recovered.size() == 20 && elapsed < 5.0;
    return {pass, std::to_string(pairs.size()) + " pairs, " + std::to_string(valid) + "/" +
                      std::to_string(groups.size()) + " subgroups valid, " + std::to_string(clusters_recovered.size()) +
                      " clusters recovered, deduped=" + (deduped ? "yes" : "no") + ", " + fmt(elapsed, 3) + " s"};
}

// 2. Filter decisions against a brute-force recomputation.
Verdict filter_exactness() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<SemanticTriple> semantics;
    std::vector<SyntheticTriplet> triplets;
    for (int i = 0; i < 1000; ++i) {
        // Bias half of the targets toward ref + query so both outcomes occur.
        auto r = testing::gaussian(rng, 16);
        auto q = testing::gaussian(rng, 16);
        auto t = testing::gaussian(rng, 16);
        const double mix = coin(rng);
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = mix * (r[k] + q[k]) + (1.0 - mix) * t[k];
        semantics.push_back({EmbeddingVector(r), EmbeddingVector(q), EmbeddingVector(t)});
        SyntheticTriplet s;
        s.reference_id = "r" + std::to_string(i);
        s.target_id = "t" + std::to_string(i);
        s.reference_caption = "reference " + std::to_string(i);
        s.target_caption = i % 50 == 0 ? s.reference_caption : "target " + std::to_string(i);
        s.query_text = "query " + std::to_string(i);
        triplets.push_back(s);
    }

    std::size_t disagreements = 0;
    bool monotone = true;
    std::map<double, std::size_t> kept_at;
    std::vector<TripletStatus> previous;
    for (double threshold : {0.5, 0.7, 0.9}) {
        std::vector<TripletStatus> current;
        for (std::size_t i = 0; i < triplets.size(); ++i) {
            const auto out = filter_triplet(triplets[i], FilterParams{threshold}, semantics[i]);
            bool expect_keep = false;
            if (triplets[i].reference_caption != triplets[i].target_caption) {
                std::vector<double> sum = raw(semantics[i].reference);
                const auto q = raw(semantics[i].query);
                for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += q[k];
                expect_keep = oracle::cosine(sum, raw(semantics[i].target)) >= threshold;
            }
            if ((out.status == TripletStatus::Kept) != expect_keep) ++disagreements;
            current.push_back(out.status);
        }
        for (std::size_t i = 0; i < previous.size(); ++i) {
            if (current[i] == TripletStatus::Kept && previous[i] != TripletStatus::Kept) monotone = false;
        }
        kept_at[threshold] = static_cast<std::size_t>(std::count(current.begin(), current.end(), TripletStatus::Kept));
        previous = std::move(current);
    }
    const bool pass = disagreements == 0 && monotone && kept_at[0.5] > kept_at[0.9] && kept_at[0.9] > 0;
    return {pass, "1000 triplets, " + std::to_string(disagreements) + " disagreements, kept " +
                      std::to_string(kept_at[0.5]) + "/" + std::to_string(kept_at[0.7]) + "/" +
                      std::to_string(kept_at[0.9]) + " at 0.5/0.7/0.9, monotone=" + (monotone ? "yes" : "no")};
}

// 3. Contrastive loss oracle, batch-of-one, and hybrid decomposition.
Verdict loss_correctness() {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> size(1, 8);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = size(rng);
        std::vector<UnitVector> a, b;
        oracle::Matrix ra, rb;
        for (std::size_t i = 0; i < n; ++i) {
            a.push_back(testing::random_unit(rng, 12));
            b.push_back(testing::random_unit(rng, 12));
            ra.push_back(raw(EmbeddingVector(std::vector<double>(a.back().values().begin(), a.back().values().end()))));
            rb.push_back(std::vector<double>(b.back().values().begin(), b.back().values().end()));
        }
        const double t = 0.01 + 0.99 * (trial % 10) / 9.0;
        worst = std::max(worst, std::abs(contrastive_loss(a, b, t) - oracle::symmetric_info_nce(ra, rb, t)));
    }
    bool single_zero = true;
    for (int i = 0; i < 20; ++i) {
        const std::vector<UnitVector> a{testing::random_unit(rng, 12)}, b{testing::random_unit(rng, 12)};
        single_zero = single_zero && contrastive_loss(a, b, 0.07) == 0.0;
    }

    ToyWorldConfig wc;
    wc.seed = 5;
    const ToyWorld world(wc);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.unlabeled_batch_size = 128;
    tc.triplet_batch_size = 64;
    tc.temperature = 0.01;
    tc.steps = 200;
    Trainer trainer(world.unlabeled(), world.triplets(), world.encoders(),
                    MappingNetwork(world.network_config(4), 7), tc);
    double worst_sum = 0.0;
    std::size_t steps = 0;
    trainer.run([&](const Trainer&, const LossRecord& r) {
        worst_sum = std::max(worst_sum, std::abs(r.losses.l_hybrid - (r.losses.l_zscir + r.losses.l_triplet)));
        ++steps;
    });
    const bool pass = worst <= 1e-6 && single_zero && worst_sum <= 1e-9 && steps == 200;
    return {pass, "max oracle gap " + fmt(worst, 3) + " over 100 batches, batch-of-one zero=" +
                      (single_zero ? "yes" : "no") + ", max hybrid-sum gap " + fmt(worst_sum, 3) + " over " +
                      std::to_string(steps) + " steps"};
}

// 4. Finite-difference gradient check.
Verdict gradient_check() {
    bool pass = true;
    std::string detail;
    for (std::size_t k : {1u, 4u}) {
        testing::GradCheckSetup s;
        s.dim = 8;
        s.token_count = k;
        s.step = 1e-4;
        const auto cmp = testing::hybrid_gradient_check(s, 1e-3);
        pass = pass && cmp.fraction_within() >= 0.95 && cmp.max_error < 1e-2;
        detail += (detail.empty() ? "" : "; ") + std::string("k=") + std::to_string(k) + ": " +
                  std::to_string(cmp.within_tolerance) + "/" + std::to_string(cmp.coordinates) +
                  " within 1e-3, max rel err " + fmt(cmp.max_error, 3);
    }
    return {pass, detail};
}

// 5. Encoders are bit-identical after training.
Verdict frozen_encoders() {
    ToyWorldConfig wc;
    wc.seed = 9;
    const ToyWorld world(wc);
    const std::string before = world.encoders().weights_snapshot();
    TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.steps = 100;
    tc.unlabeled_batch_size = 64;
    tc.triplet_batch_size = 32;
    Trainer trainer(world.unlabeled(), world.triplets(), world.encoders(),
                    MappingNetwork(world.network_config(4), 3), tc);
    trainer.run();
    const std::string after = world.encoders().weights_snapshot();
    const bool moved = !(trainer.network() == MappingNetwork(world.network_config(4), 3));
    return {before == after && moved && trainer.current_step() == 100,
            std::to_string(before.size()) + "-byte snapshot " + (before == after ? "unchanged" : "CHANGED") +
                " after 100 steps, mapping network updated=" + (moved ? "yes" : "no")};
}

// 6. Retrieval metrics on the hand-enumerated fixture.
Verdict metric_oracles() {
    const testing::MetricFixture f;
    const auto r = f.rankings();
    std::size_t mismatches = 0;
    const auto exact = [&](double got, double want) {
        if (got != want) ++mismatches;
    };
    bool rankings_ok = true;
    for (std::size_t i = 0; i < r.size(); ++i) rankings_ok = rankings_ok && r[i] == f.expected_rankings[i];
    exact(recall_at_k(r, f.queries, 1), f.recall_1);
    exact(recall_at_k(r, f.queries, 3), f.recall_3);
    exact(recall_at_k(r, f.queries, 5), f.recall_5);
    exact(recall_at_k(r, f.queries, 9), f.recall_9);
    exact(map_at_k(r, f.queries, 1), f.map_1);
    exact(map_at_k(r, f.queries, 3), f.map_3);
    exact(map_at_k(r, f.queries, 5), f.map_5);
    exact(subset_recall_at_k(f.queries, f.composed, f.gallery, 1), f.subset_recall_1);
    exact(subset_recall_at_k(f.queries, f.composed, f.gallery, 2), f.subset_recall_2);
    exact(subset_recall_at_k(f.queries, f.composed, f.gallery, 3), f.subset_recall_3);
    exact(subset_recall_at_k(f.queries, f.composed, f.gallery, 9), 1.0);
    return {rankings_ok && mismatches == 0,
            std::string("10 images, 5 queries, rankings ") + (rankings_ok ? "match" : "DIFFER") + ", " +
                std::to_string(mismatches) + "/11 metric values differ"};
}

struct ToyRun {
    double untrained = 0.0;
    MetricsReport heldout;
    MetricsReport shifted;
    double seconds = 0.0;
};

ToyRun train_toy(const ToyWorldConfig& wc, double zscir_weight, double triplet_weight) {
    const ToyWorld world(wc);
    const MappingNetwork init(world.network_config(4), 7);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.unlabeled_batch_size = 128;
    tc.triplet_batch_size = 64;
    tc.temperature = 0.01;
    tc.steps = 2000;
    tc.seed = 3;
    tc.zscir_weight = zscir_weight;
    tc.triplet_weight = triplet_weight;
    ToyRun out;
    out.untrained = world.evaluate(init, world.heldout_queries()).recall.at(1);
    const auto t0 = Clock::now();
    Trainer trainer(world.unlabeled(), world.triplets(), world.encoders(), init, tc);
    trainer.run();
    out.seconds = seconds_since(t0);
    out.heldout = world.evaluate(trainer.network(), world.heldout_queries());
    out.shifted = world.evaluate(trainer.network(), world.shifted_queries());
    return out;
}

// 7. End-to-end learning in the toy world.
Verdict toy_learning() {
    ToyWorldConfig wc;
    wc.seed = 1;
    const auto t0 = Clock::now();
    const auto run = train_toy(wc, 1.0, 1.0);
    const double elapsed = seconds_since(t0);
    const double trained = run.heldout.recall.at(1);
    return {trained >= 0.9 && run.untrained <= 0.05 && elapsed < 120.0,
            "held-out R@1 " + fmt(trained, 3) + " trained vs " + fmt(run.untrained, 3) + " untrained, 2000 steps, " +
                fmt(elapsed, 3) + " s"};
}

// 8. Hybrid beats either single loss on shifted queries.
Verdict hybrid_ablation() {
    std::size_t wins = 0;
    std::string detail;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        ToyWorldConfig wc;
        wc.seed = seed;
        wc.triplet_shift = 3.0;
        wc.triplet_spread = 0.5;
        auto hybrid = std::async(std::launch::async, train_toy, wc, 1.0, 1.0);
        auto zs = std::async(std::launch::async, train_toy, wc, 1.0, 0.0);
        auto tr = std::async(std::launch::async, train_toy, wc, 0.0, 1.0);
        const double h = hybrid.get().shifted.average_recall;
        const double z = zs.get().shifted.average_recall;
        const double t = tr.get().shifted.average_recall;
        if (h >= z && h >= t) ++wins;
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " avg hybrid " +
                  fmt(h, 3) + " / unlabeled-only " + fmt(z, 3) + " / triplet-only " + fmt(t, 3);
    }
    return {wins >= 2, std::to_string(wins) + "/3 seeds won (" + detail + ")"};
}

// 9. Two mock pipeline runs produce identical metrics.
Verdict determinism() {
    testing::TempDir dir("acc_det");
    const std::string d = dir.path().string();
    if (run_cli("fixture clusters --out " + d) != 0) return {false, "fixture command failed"};
    const std::string common = "--mock true --seed 11 --embeddings " + d + "/embeddings.jsonl --queries " + d +
                               "/queries.jsonl --steps 200 --lr 0.001 --unlabeled-batch 64 --triplet-batch 32 ";
    const int a = run_cli(common + "--out-dir " + d + "/a run");
    const int b = run_cli(common + "--out-dir " + d + "/b run");
    if (a != 0 || b != 0) return {false, "pipeline runs exited with " + std::to_string(a) + " and " + std::to_string(b)};
    const auto ma = slurp(dir / "a" / "metrics.json");
    const auto mb = slurp(dir / "b" / "metrics.json");
    const auto ha = slurp(dir / "a" / "loss_history.jsonl");
    const auto hb = slurp(dir / "b" / "loss_history.jsonl");
    return {!ma.empty() && ma == mb && ha == hb,
            "metrics.json " + std::to_string(ma.size()) + " bytes, " + (ma == mb ? "identical" : "DIFFERENT") +
                "; loss history " + (ha == hb ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"pair mining on planted clusters", pair_mining},
        {"semantic filter exactness", filter_exactness},
        {"loss correctness", loss_correctness},
        {"gradient check", gradient_check},
        {"frozen encoders", frozen_encoders},
        {"metric oracles", metric_oracles},
        {"toy end-to-end learning", toy_learning},
        {"hybrid beats single losses", hybrid_ablation},
        {"pipeline determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw ") + e.what()};
        }
        if (!v.pass) ++failures;
        std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
                  << "): " << v.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
