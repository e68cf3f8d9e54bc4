#include "cirsynth/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "cirsynth/error.hpp"
#include "cirsynth/pair_miner.hpp"
#include "cirsynth/parallel.hpp"
#include "cirsynth/query_synth.hpp"
#include "cirsynth/records.hpp"
#include "cirsynth/retrieval_eval.hpp"
#include "cirsynth/semantic_filter.hpp"
#include "cirsynth/trainer.hpp"

namespace cirsynth {

namespace fs = std::filesystem;
using nlohmann::json;

ExitCode exit_code_for(ErrorCode code) {
    return code == ErrorCode::InvalidConfig ? ExitCode::Usage : ExitCode::Fatal;
}

StageLog::StageLog(const fs::path& path, std::string stage) : stage_(std::move(stage)) {
    fs::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error(ErrorCode::InvalidArgument, "cannot open log " + path.string());
}

void StageLog::event(json record) {
    record["stage"] = stage_;
    out_ << record.dump() << '\n';
    out_.flush();
}

void StageLog::item_error(std::size_t index, const std::string& item, const std::string& error) {
    event({{"event", "item_error"}, {"index", index}, {"item", item}, {"error", error}});
}

Pipeline::Pipeline(RunConfig config, std::shared_ptr<ProviderGateway> gateway)
    : config_(std::move(config)), hash_(config_.hash()), gateway_(std::move(gateway)) {
    config_.validate();
}

fs::path Pipeline::artifact(const std::string& name) const { return config_.paths.out_dir / name; }

ProviderGateway& Pipeline::gateway() {
    if (gateway_) return *gateway_;
    const auto& p = config_.providers;
    auto cache = std::make_shared<ResponseCache>(config_.cache_dir());
    if (p.mock) {
        gateway_ = std::make_shared<ProviderGateway>(
            std::make_shared<MockCaptioner>(), std::make_shared<MockInstructionGenerator>(),
            std::make_shared<MockTextEmbedder>(p.semantic_dim, p.embedder_mode), std::move(cache));
    } else {
        const auto retry = [](const ProviderConfig& c) {
            RetryPolicy r;
            r.max_retries = c.max_retries;
            return r;
        };
        gateway_ = std::make_shared<ProviderGateway>(std::make_shared<HttpCaptioner>(*p.caption, retry(*p.caption)),
                                                     std::make_shared<HttpCompletion>(*p.llm, retry(*p.llm)),
                                                     std::make_shared<HttpEmbedder>(*p.embedding, retry(*p.embedding)),
                                                     std::move(cache));
    }
    return *gateway_;
}

std::unique_ptr<ToyEncoderBundle> Pipeline::load_encoders(std::size_t image_dim) const {
    if (!config_.paths.encoders.empty()) {
        auto enc = std::make_unique<ToyEncoderBundle>(ToyEncoderBundle::from_json(read_json_file(config_.paths.encoders)));
        if (enc->image_dim() != image_dim) {
            throw Error(ErrorCode::DimMismatch, "encoders expect image dim " + std::to_string(enc->image_dim()) +
                                                    ", data has " + std::to_string(image_dim));
        }
        return enc;
    }
    const auto& e = config_.encoders;
    return std::make_unique<ToyEncoderBundle>(config_.stage_seed("encoders"), image_dim,
                                              e.token_dim ? e.token_dim : image_dim,
                                              e.output_dim ? e.output_dim : image_dim);
}

void Pipeline::begin_stage() {
    fs::create_directories(config_.paths.out_dir);
    write_json_file(artifact(artifacts::kConfig), config_.to_json());
}

StageLog Pipeline::open_log(const std::string& stage) const {
    StageLog log(config_.paths.out_dir / "logs" / (stage + ".log.jsonl"), stage);
    log.event({{"event", "start"}, {"config_hash", hash_}});
    return log;
}

namespace {

ArtifactHeader header(const char* format, const std::string& hash) { return {format, kArtifactVersion, hash}; }

json stats_json(const ProviderCallStats& s) {
    return {{"caption_calls", s.caption_calls},
            {"completion_calls", s.completion_calls},
            {"embedding_calls", s.embedding_calls},
            {"cache_hits", s.cache_hits}};
}

json stats_delta(const ProviderCallStats& before, const ProviderCallStats& after) {
    return stats_json({after.caption_calls - before.caption_calls, after.completion_calls - before.completion_calls,
                       after.embedding_calls - before.embedding_calls, after.cache_hits - before.cache_hits});
}

void require_input(const fs::path& p, const char* what) {
    if (p.empty()) throw Error(ErrorCode::InvalidConfig, std::string("no path configured for ") + what);
    if (!fs::exists(p)) throw Error(ErrorCode::MissingInput, "missing input: " + p.string());
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

StageOutcome finish(StageLog& log, StageOutcome outcome) {
    json ev = outcome.summary;
    ev["event"] = "summary";
    ev["items"] = outcome.items;
    ev["errors"] = outcome.errors;
    log.event(std::move(ev));
    return outcome;
}

/// Image embeddings as matrix columns, in id order.
Mat to_matrix(const ImageStore& images) {
    Mat m(images.empty() ? 0 : static_cast<Eigen::Index>(images.begin()->second.dim()),
          static_cast<Eigen::Index>(images.size()));
    Eigen::Index i = 0;
    for (const auto& [id, v] : images) m.col(i++) = to_eigen(v);
    return m;
}

}  // namespace

StageOutcome Pipeline::pairs() {
    begin_stage();
    auto log = open_log("pairs");
    require_input(config_.paths.embeddings, "paths.embeddings");
    const auto images = load_embeddings(config_.paths.embeddings);

    StageOutcome outcome{"pairs"};
    EmbeddingMap unit;
    std::size_t index = 0;
    for (const auto& [id, v] : images) {
        try {
            unit.emplace(id, l2_normalize(v));
        } catch (const Error& e) {
            ++outcome.errors;
            log.item_error(index, id, e.what());
        }
        ++index;
    }

    const auto groups = extract_subgroups(unit, config_.miner, config_.workers);
    std::vector<MinedPair> mined;
    for (const auto& g : groups) {
        if (!validate_subgroup(g, unit, config_.miner)) {
            throw Error(ErrorCode::InvalidSubgroup, "subgroup seeded by " + g.seed_id + " failed validation");
        }
        for (auto& p : extract_pairs(g, config_.miner)) mined.push_back({std::move(p), g.seed_id});
    }
    const auto unique = dedupe_pairs(mined);

    std::vector<json> records;
    for (const auto& p : unique) records.push_back(to_record(p));
    write_jsonl(artifact(artifacts::kPairs), header(formats::kPairs, hash_), records);

    outcome.items = images.size();
    outcome.summary = {{"images", images.size()},
                       {"subgroups", groups.size()},
                       {"pairs", unique.size()},
                       {"duplicates_dropped", mined.size() - unique.size()}};
    return finish(log, std::move(outcome));
}

StageOutcome Pipeline::captions() {
    begin_stage();
    auto log = open_log("captions");
    const auto mined = load_pairs(artifact(artifacts::kPairs));

    std::vector<ImageId> ids;
    std::set<ImageId> seen;
    for (const auto& p : mined) {
        for (const auto* id : {&p.pair.reference_id, &p.pair.target_id}) {
            if (seen.insert(*id).second) ids.push_back(*id);
        }
    }

    auto& gw = gateway();
    const auto before = gw.stats();
    std::vector<std::optional<std::string>> caps(ids.size());
    std::vector<std::string> failures(ids.size());
    parallel_for(ids.size(), config_.workers, [&](std::size_t i) {
        try {
            ImageRef ref{ids[i], {}};
            if (!config_.paths.image_dir.empty()) {
                const auto file = config_.paths.image_dir / ids[i];
                if (!fs::exists(file)) throw Error(ErrorCode::MissingInput, "missing image: " + file.string());
                ref.bytes = read_bytes(file);
            }
            caps[i] = gw.caption_image(ref);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });

    StageOutcome outcome{"captions"};
    outcome.items = ids.size();
    std::map<ImageId, std::string> ok;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (caps[i]) {
            ok.emplace(ids[i], *caps[i]);
        } else {
            ++outcome.errors;
            log.item_error(i, ids[i], failures[i]);
        }
    }
    std::vector<json> records;
    for (const auto& [id, c] : ok) records.push_back(caption_record(id, c));
    write_jsonl(artifact(artifacts::kCaptions), header(formats::kCaptions, hash_), records);

    outcome.summary = {{"images", ids.size()}, {"captioned", ok.size()},
                       {"provider_calls", stats_delta(before, gw.stats())}};
    return finish(log, std::move(outcome));
}

StageOutcome Pipeline::queries() {
    begin_stage();
    auto log = open_log("queries");
    const auto mined = load_pairs(artifact(artifacts::kPairs));
    const auto caps = load_captions(artifact(artifacts::kCaptions));

    std::vector<ImagePair> pairs;
    pairs.reserve(mined.size());
    for (const auto& p : mined) pairs.push_back(p.pair);

    auto& gw = gateway();
    const auto before = gw.stats();
    const auto result = synthesize_batch(pairs, gw, config_.workers, caps);

    StageOutcome outcome{"queries"};
    outcome.items = pairs.size();
    outcome.errors = result.errors.size();
    for (const auto& e : result.errors) log.item_error(e.index, e.item, e.error);

    std::vector<json> records;
    for (const auto& t : result.triplets) records.push_back(to_record(t));
    write_jsonl(artifact(artifacts::kTriplets), header(formats::kTriplets, hash_), records);

    const auto calls = stats_delta(before, gw.stats());
    log.event({{"event", "provider_calls"}, {"calls", calls}});
    outcome.summary = {{"pairs", pairs.size()}, {"triplets", result.triplets.size()}, {"provider_calls", calls}};
    return finish(log, std::move(outcome));
}

StageOutcome Pipeline::filter() {
    begin_stage();
    auto log = open_log("filter");
    const auto triplets = load_triplets(artifact(artifacts::kTriplets));

    auto& gw = gateway();
    const auto before = gw.stats();
    const auto result = filter_dataset(triplets, config_.filter, gw, config_.workers);

    StageOutcome outcome{"filter"};
    outcome.items = triplets.size();
    outcome.errors = result.errors.size();
    for (const auto& e : result.errors) log.item_error(e.index, e.item, e.error);

    std::vector<json> kept;
    std::vector<json> scored;
    for (const auto& t : result.kept) kept.push_back(to_record(t));
    for (const auto& t : result.scored) scored.push_back(to_record(t));
    write_jsonl(artifact(artifacts::kFiltered), header(formats::kTriplets, hash_), kept);
    write_jsonl(artifact(artifacts::kScored), header(formats::kTriplets, hash_), scored);

    json report = result.report.to_json();
    report["similarity_threshold"] = config_.filter.similarity_threshold;
    report["config_hash"] = hash_;
    write_json_file(artifact(artifacts::kFilterReport), report);

    outcome.summary = {{"report", result.report.to_json()}, {"provider_calls", stats_delta(before, gw.stats())}};
    return finish(log, std::move(outcome));
}

namespace {

struct TrainingData {
    ImageStore images;
    Mat unlabeled;
    std::vector<TrainingTriplet> triplets;
};

TrainingData load_training_data(const RunConfig& config, const fs::path& filtered, StageLog& log,
                                StageOutcome& outcome) {
    require_input(config.paths.embeddings, "paths.embeddings");
    TrainingData d;
    d.images = load_embeddings(config.paths.embeddings);
    if (d.images.empty()) throw Error(ErrorCode::InvalidArgument, config.paths.embeddings.string() + " is empty");
    d.unlabeled = to_matrix(d.images);

    if (config.train.triplet_weight > 0.0 || fs::exists(filtered)) {
        const auto triplets = load_triplets(filtered);
        outcome.items = triplets.size();
        for (std::size_t i = 0; i < triplets.size(); ++i) {
            const auto& t = triplets[i];
            const auto r = d.images.find(t.reference_id);
            const auto g = d.images.find(t.target_id);
            if (r == d.images.end() || g == d.images.end()) {
                ++outcome.errors;
                log.item_error(i, t.reference_id + "->" + t.target_id, "image embedding not found");
                continue;
            }
            d.triplets.push_back({to_eigen(r->second), t.query_text, to_eigen(g->second), t.status});
        }
    }
    return d;
}

MappingNetworkConfig network_shape(const RunConfig& config, const EncoderBundle& enc, std::size_t token_count) {
    auto c = config.mapping;
    c.input_dim = enc.image_dim();
    c.token_dim = enc.token_dim();
    c.token_count = token_count;
    return c;
}

void save_history(const fs::path& path, const std::vector<LossRecord>& history, const std::string& hash) {
    std::vector<json> records;
    records.reserve(history.size());
    for (const auto& r : history) records.push_back(to_record(r));
    write_jsonl(path, {formats::kLossHistory, kArtifactVersion, hash}, records);
}

}  // namespace

StageOutcome Pipeline::train(bool resume) {
    begin_stage();
    auto log = open_log("train");
    StageOutcome outcome{"train"};
    auto data = load_training_data(config_, artifact(artifacts::kFiltered), log, outcome);
    const auto enc = load_encoders(static_cast<std::size_t>(data.unlabeled.rows()));

    const auto shape = network_shape(config_, *enc, config_.mapping.token_count);
    Trainer trainer(std::move(data.unlabeled), std::move(data.triplets), *enc,
                    MappingNetwork(shape, config_.stage_seed("mapping")), config_.train);

    std::vector<LossRecord> history;
    const auto ckpt_path = artifact(artifacts::kCheckpoint);
    const auto hist_path = artifact(artifacts::kLossHistory);
    if (resume && fs::exists(ckpt_path)) {
        const auto ckpt = Checkpoint::load(ckpt_path);
        if (ckpt.net.config().to_json() != shape.to_json()) {
            throw Error(ErrorCode::CorruptCheckpoint, ckpt_path.string() + " holds a differently shaped network");
        }
        trainer.resume(ckpt);
        if (fs::exists(hist_path)) {
            for (auto& r : load_loss_history(hist_path)) {
                if (r.step <= ckpt.step) history.push_back(r);
            }
        }
        log.event({{"event", "resumed"}, {"step", ckpt.step}, {"checkpoint_config_hash", ckpt.config_hash}});
    }

    const auto interval = config_.train.checkpoint_interval;
    trainer.run([&](const Trainer& t, const LossRecord& r) {
        history.push_back(r);
        if (interval > 0 && r.step % interval == 0 && r.step < config_.train.steps) {
            t.checkpoint(hash_).save(ckpt_path);
            save_history(hist_path, history, hash_);
            log.event({{"event", "checkpoint"}, {"step", r.step}});
        }
    });
    trainer.checkpoint(hash_).save(ckpt_path);
    save_history(hist_path, history, hash_);

    json summary{{"steps", trainer.current_step()}, {"triplets", outcome.items - outcome.errors}};
    if (!history.empty()) summary["final"] = to_record(history.back());
    outcome.summary = std::move(summary);
    return finish(log, std::move(outcome));
}

namespace {

struct EvalData {
    ImageStore images;  // references and gallery together
    ImageStore gallery_images;
    std::vector<QueryRecord> queries;
};

EvalData load_eval_data(const RunConfig& config, StageLog& log, StageOutcome& outcome) {
    require_input(config.paths.queries, "paths.queries");
    require_input(config.gallery_path(), "paths.gallery");
    EvalData d;
    d.gallery_images = load_embeddings(config.gallery_path());
    d.images = d.gallery_images;
    if (!config.paths.embeddings.empty() && config.paths.embeddings != config.gallery_path() &&
        fs::exists(config.paths.embeddings)) {
        d.images.merge(load_embeddings(config.paths.embeddings));
    }
    const auto all = load_query_dataset(config.paths.queries, config.paths.query_layout);
    outcome.items = all.size();
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (!d.images.contains(all[i].reference_id)) {
            ++outcome.errors;
            log.item_error(i, all[i].reference_id, "reference embedding not found");
            continue;
        }
        d.queries.push_back(all[i]);
    }
    return d;
}

}  // namespace

StageOutcome Pipeline::eval() {
    begin_stage();
    auto log = open_log("eval");
    StageOutcome outcome{"eval"};
    const auto ckpt = Checkpoint::load(artifact(artifacts::kCheckpoint));
    const auto data = load_eval_data(config_, log, outcome);
    const auto enc = load_encoders(ckpt.net.input_dim());
    const auto gallery = build_gallery(data.gallery_images, *enc);

    auto options = config_.eval;
    options.prompt = ckpt.prompt;
    const auto report = evaluate(ckpt.net, *enc, data.queries, data.images, gallery, options);

    json j = report.to_json();
    j["format"] = "cirsynth.metrics";
    j["version"] = kArtifactVersion;
    j["config_hash"] = hash_;
    write_json_file(artifact(artifacts::kMetricsJson), j);
    write_text_file(artifact(artifacts::kMetricsText), report.to_table());

    outcome.summary = report.to_json();
    return finish(log, std::move(outcome));
}

StageOutcome Pipeline::ablate_tokens() {
    begin_stage();
    auto log = open_log("ablate-tokens");
    StageOutcome outcome{"ablate-tokens"};
    auto train_data = load_training_data(config_, artifact(artifacts::kFiltered), log, outcome);
    StageOutcome eval_outcome{"eval"};
    const auto eval_data = load_eval_data(config_, log, eval_outcome);
    outcome.errors += eval_outcome.errors;
    const auto enc = load_encoders(static_cast<std::size_t>(train_data.unlabeled.rows()));
    const auto gallery = build_gallery(eval_data.gallery_images, *enc);

    auto options = config_.eval;
    options.prompt = config_.train.prompt;
    json rows = json::array();
    std::vector<std::pair<std::size_t, MetricsReport>> reports;
    for (std::size_t k : config_.ablate_token_counts) {
        Trainer trainer(train_data.unlabeled, train_data.triplets, *enc,
                        MappingNetwork(network_shape(config_, *enc, k), config_.stage_seed("mapping")),
                        config_.train);
        trainer.run();
        auto report = evaluate(trainer.network(), *enc, eval_data.queries, eval_data.images, gallery, options);
        report.map.clear();
        report.subset_recall.clear();
        json row = report.to_json();
        row["token_count"] = k;
        rows.push_back(row);
        log.event({{"event", "row"}, {"token_count", k}, {"average_recall", report.average_recall}});
        reports.emplace_back(k, std::move(report));
    }

    // Rows share one column layout: the token count, then R@K..., Avg.
    std::vector<std::string> header{"k"};
    for (auto k : std::set<std::size_t>(config_.eval.k_values.begin(), config_.eval.k_values.end())) header.push_back("R@" + std::to_string(k));
    header.emplace_back("Avg");
    std::vector<std::vector<std::string>> cells;
    for (const auto& [k, r] : reports) {
        std::vector<std::string> row{std::to_string(k)};
        const auto pct = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
            return std::string(buf);
        };
        for (const auto& [kk, v] : r.recall) row.push_back(pct(v));
        row.push_back(pct(r.average_recall));
        cells.push_back(std::move(row));
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream table;
    const auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            table << (c ? "  " : "") << std::string(width[c] - row[c].size(), ' ') << row[c];
        }
        table << '\n';
    };
    emit(header);
    for (const auto& row : cells) emit(row);

    write_json_file(artifact(artifacts::kAblationJson),
                    {{"format", "cirsynth.ablation"},
                     {"version", kArtifactVersion},
                     {"config_hash", hash_},
                     {"columns", header},
                     {"rows", rows}});
    write_text_file(artifact(artifacts::kAblationText), table.str());
    outcome.summary = {{"rows", rows.size()}};
    return finish(log, std::move(outcome));
}

std::vector<StageOutcome> Pipeline::run_all() {
    return {pairs(), captions(), queries(), filter(), train(false), eval()};
}

}  // namespace cirsynth
