#pragma once

// Stage runner behind the CLI. Every stage reads and writes files under
// RunConfig::paths, stamps artifacts with the config hash, snapshots the
// resolved config, and appends structured events to
// <out_dir>/logs/<stage>.log.jsonl.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirsynth/encoders.hpp"
#include "cirsynth/error.hpp"
#include "cirsynth/provider.hpp"
#include "cirsynth/run_config.hpp"

namespace cirsynth {

enum class ExitCode : int { Ok = 0, Usage = 1, Partial = 2, Fatal = 3 };

/// InvalidConfig maps to Usage; every other error is Fatal.
[[nodiscard]] ExitCode exit_code_for(ErrorCode code);

struct StageOutcome {
    std::string stage;
    std::size_t items = 0;
    std::size_t errors = 0;
    nlohmann::json summary = nlohmann::json::object();

    [[nodiscard]] ExitCode exit_code() const noexcept { return errors > 0 ? ExitCode::Partial : ExitCode::Ok; }
};

/// One JSON object per line, flushed as written.
class StageLog {
public:
    StageLog(const std::filesystem::path& path, std::string stage);

    void event(nlohmann::json record);
    void item_error(std::size_t index, const std::string& item, const std::string& error);

private:
    std::ofstream out_;
    std::string stage_;
};

namespace artifacts {
inline constexpr const char* kConfig = "config.resolved.json";
inline constexpr const char* kPairs = "pairs.jsonl";
inline constexpr const char* kCaptions = "captions.jsonl";
inline constexpr const char* kTriplets = "triplets.jsonl";
inline constexpr const char* kScored = "triplets_scored.jsonl";
inline constexpr const char* kFiltered = "triplets_filtered.jsonl";
inline constexpr const char* kFilterReport = "filter_report.json";
inline constexpr const char* kCheckpoint = "checkpoint.json";
inline constexpr const char* kLossHistory = "loss_history.jsonl";
inline constexpr const char* kMetricsJson = "metrics.json";
inline constexpr const char* kMetricsText = "metrics.txt";
inline constexpr const char* kAblationJson = "ablation.json";
inline constexpr const char* kAblationText = "ablation.txt";
}  // namespace artifacts

class Pipeline {
public:
    /// A null gateway is built from the config on first use.
    explicit Pipeline(RunConfig config, std::shared_ptr<ProviderGateway> gateway = nullptr);

    StageOutcome pairs();
    StageOutcome captions();
    StageOutcome queries();
    StageOutcome filter();
    /// With `resume`, continues from an existing checkpoint and keeps the
    /// loss history up to its step.
    StageOutcome train(bool resume = false);
    StageOutcome eval();
    StageOutcome ablate_tokens();

    /// pairs, captions, queries, filter, train, eval.
    std::vector<StageOutcome> run_all();

    [[nodiscard]] const RunConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::filesystem::path artifact(const std::string& name) const;
    [[nodiscard]] ProviderGateway& gateway();

    /// Encoders from paths.encoders, or seed-derived toy encoders sized to
    /// the given image dim.
    [[nodiscard]] std::unique_ptr<ToyEncoderBundle> load_encoders(std::size_t image_dim) const;

private:
    void begin_stage();
    [[nodiscard]] StageLog open_log(const std::string& stage) const;

    RunConfig config_;
    std::string hash_;
    std::shared_ptr<ProviderGateway> gateway_;
};

}  // namespace cirsynth
