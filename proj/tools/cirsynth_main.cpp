// cirsynth: synthetic triplet generation, hybrid training, and retrieval
// evaluation from the command line.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cirsynth/error.hpp"
#include "cirsynth/fixtures.hpp"
#include "cirsynth/pipeline.hpp"
#include "cirsynth/records.hpp"
#include "cirsynth/run_config.hpp"

namespace {

using cirsynth::ExitCode;

// Flags that mirror RunConfig fields, by dotted config key.
struct MirroredFlag {
    const char* flag;
    const char* key;
    const char* help;
};

constexpr MirroredFlag kFlags[] = {
    {"--seed", "seed", "master seed"},
    {"--workers", "workers", "concurrent provider calls / mining shards"},
    {"--embeddings", "paths.embeddings", "image embeddings (JSONL {image_id, embedding})"},
    {"--queries", "paths.queries", "evaluation queries"},
    {"--query-layout", "paths.query_layout", "generic | cirr | circo | fashioniq"},
    {"--gallery", "paths.gallery", "gallery embeddings (default: --embeddings)"},
    {"--encoders", "paths.encoders", "encoder weights JSON (default: derived from the seed)"},
    {"--image-dir", "paths.image_dir", "directory of image files named by id"},
    {"--out-dir", "paths.out_dir", "output directory"},
    {"--cache-dir", "paths.cache_dir", "provider response cache (default: <out-dir>/cache)"},
    {"--mock", "providers.mock", "use offline mock providers (true/false)"},
    {"--semantic-dim", "providers.semantic_dim", "mock text embedding dim"},
    {"--embedder-mode", "providers.embedder_mode", "bag_of_words | whole_text"},
    {"--subgroup-size", "miner.subgroup_size", "images per mined subgroup"},
    {"--max-seed-distance", "miner.max_seed_distance", "max cosine distance to the seed"},
    {"--min-member-distance", "miner.min_member_distance", "min cosine distance between members"},
    {"--pairs-per-subgroup", "miner.pairs_per_subgroup", "pairs drawn per subgroup"},
    {"--threshold", "filter.similarity_threshold", "semantic filter threshold"},
    {"--token-count", "mapping.token_count", "pseudo tokens per image"},
    {"--hidden-dim", "mapping.hidden_dim", "mapping network hidden width (0: input dim)"},
    {"--activation", "mapping.activation", "relu | gelu | tanh"},
    {"--lr", "train.learning_rate", "Adam learning rate"},
    {"--steps", "train.steps", "training steps"},
    {"--unlabeled-batch", "train.unlabeled_batch_size", "unlabeled images per step"},
    {"--triplet-batch", "train.triplet_batch_size", "triplets per step"},
    {"--temperature", "train.temperature", "contrastive temperature"},
    {"--zscir-weight", "train.zscir_weight", "weight of the unlabeled-image loss (0 disables)"},
    {"--triplet-weight", "train.triplet_weight", "weight of the triplet loss (0 disables)"},
    {"--checkpoint-interval", "train.checkpoint_interval", "steps between checkpoints (0: end only)"},
    {"--k-values", "eval.k_values", "comma-separated K list for R@K / mAP@K"},
    {"--subset-k-values", "eval.subset_k_values", "comma-separated K list for Rs@K"},
    {"--token-counts", "ablate.token_counts", "comma-separated token counts for ablate-tokens"},
};

int to_int(ExitCode c) { return static_cast<int>(c); }

int report(const std::vector<cirsynth::StageOutcome>& outcomes) {
    ExitCode code = ExitCode::Ok;
    for (const auto& o : outcomes) {
        nlohmann::json line = o.summary;
        line["stage"] = o.stage;
        line["items"] = o.items;
        line["errors"] = o.errors;
        std::cout << line.dump() << '\n';
        code = std::max(code, o.exit_code());
    }
    return to_int(code);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic composed-retrieval triplets, hybrid training, and evaluation"};
    app.require_subcommand(1);

    std::optional<std::string> config_file;
    std::vector<std::string> sets;
    std::map<std::string, std::string> mirrored;
    app.add_option("--config", config_file, "JSON config file (flags override it)")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override any config key: key.path=value")->take_all();
    for (const auto& f : kFlags) app.add_option(f.flag, mirrored[f.key], f.help);

    auto* syncir = app.add_subcommand("syncir", "label synthesis stages")->fallthrough();
    syncir->require_subcommand(1);
    auto* s_pairs = syncir->add_subcommand("pairs", "mine image pairs from embeddings")->fallthrough();
    auto* s_captions = syncir->add_subcommand("captions", "caption every paired image")->fallthrough();
    auto* s_queries = syncir->add_subcommand("queries", "generate edit instructions")->fallthrough();
    auto* s_filter = syncir->add_subcommand("filter", "semantic consistency filter")->fallthrough();

    bool resume = false;
    auto* train = app.add_subcommand("train", "train the mapping network")->fallthrough();
    train->add_flag("--resume", resume, "continue from <out-dir>/checkpoint.json");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint")->fallthrough();
    auto* ablate = app.add_subcommand("ablate-tokens", "train and evaluate per token count")->fallthrough();
    auto* run = app.add_subcommand("run", "pairs, captions, queries, filter, train, eval")->fallthrough();

    cirsynth::ClusterFixtureConfig fixture_cfg;
    std::string fixture_out = "fixture";
    auto* fixture = app.add_subcommand("fixture", "write generated datasets");
    fixture->require_subcommand(1);
    auto* f_clusters = fixture->add_subcommand("clusters", "planted-cluster embeddings and queries");
    f_clusters->add_option("--out", fixture_out, "output directory");
    f_clusters->add_option("--clusters", fixture_cfg.clusters, "number of clusters");
    f_clusters->add_option("--per-cluster", fixture_cfg.per_cluster, "images per cluster");
    f_clusters->add_option("--dim", fixture_cfg.dim, "embedding dim");
    f_clusters->add_option("--fixture-seed", fixture_cfg.seed, "jitter seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : to_int(ExitCode::Usage);
    }

    try {
        if (f_clusters->parsed()) {
            const auto fx = cirsynth::make_cluster_fixture(fixture_cfg);
            const std::filesystem::path out(fixture_out);
            cirsynth::save_embeddings(out / "embeddings.jsonl", fx.images, "");
            std::vector<nlohmann::json> q;
            for (const auto& r : fx.queries) q.push_back(cirsynth::to_record(r));
            cirsynth::write_jsonl(out / "queries.jsonl", {cirsynth::formats::kQueries, cirsynth::kArtifactVersion, ""},
                                  q);
            std::cout << nlohmann::json{{"images", fx.images.size()}, {"queries", fx.queries.size()}}.dump() << '\n';
            return 0;
        }

        std::vector<std::pair<std::string, std::string>> overrides;
        for (const auto& f : kFlags) {
            if (app.get_option(f.flag)->count() > 0) overrides.emplace_back(f.key, mirrored[f.key]);
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) {
                std::cerr << "--set expects key=value, got '" << s << "'\n";
                return to_int(ExitCode::Usage);
            }
            overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        const auto config = cirsynth::resolve_config(
            config_file ? std::optional<std::filesystem::path>(*config_file) : std::nullopt, overrides);
        cirsynth::Pipeline pipeline(config);

        if (s_pairs->parsed()) return report({pipeline.pairs()});
        if (s_captions->parsed()) return report({pipeline.captions()});
        if (s_queries->parsed()) return report({pipeline.queries()});
        if (s_filter->parsed()) return report({pipeline.filter()});
        if (train->parsed()) return report({pipeline.train(resume)});
        if (eval->parsed()) {
            const auto code = report({pipeline.eval()});
            std::cout << cirsynth::read_json_file(pipeline.artifact(cirsynth::artifacts::kMetricsJson)).dump(2)
                      << '\n';
            return code;
        }
        if (ablate->parsed()) return report({pipeline.ablate_tokens()});
        if (run->parsed()) return report(pipeline.run_all());
        return to_int(ExitCode::Usage);
    } catch (const cirsynth::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return to_int(cirsynth::exit_code_for(e.code()));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return to_int(ExitCode::Fatal);
    }
}
