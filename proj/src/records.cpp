#include "cirsynth/records.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "cirsynth/error.hpp"

namespace cirsynth {

namespace fs = std::filesystem;
using nlohmann::json;

json ArtifactHeader::to_json() const {
    return {{"format", format}, {"version", version}, {"config_hash", config_hash}};
}

std::optional<ArtifactHeader> ArtifactHeader::from_json(const json& j) {
    if (!j.is_object() || !j.contains("format") || !j.contains("version")) return std::nullopt;
    ArtifactHeader h;
    try {
        h.format = j.at("format").get<std::string>();
        h.version = j.at("version").get<int>();
        h.config_hash = j.value("config_hash", std::string{});
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedRecord, std::string("bad header: ") + e.what());
    }
    return h;
}

namespace {

void atomic_write(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + tmp.string());
        out << content;
        if (!out.flush()) throw Error(ErrorCode::InvalidArgument, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::ifstream open_input(const fs::path& path) {
    if (!fs::exists(path)) throw Error(ErrorCode::MissingInput, "missing input: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingInput, "cannot open input: " + path.string());
    return in;
}

template <typename F>
auto field(const json& j, const char* name, F&& get) {
    if (!j.contains(name)) throw Error(ErrorCode::MalformedRecord, std::string("record lacks field '") + name + "'");
    try {
        return get(j.at(name));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedRecord, std::string("field '") + name + "': " + e.what());
    }
}

std::string str_field(const json& j, const char* name) {
    return field(j, name, [](const json& v) { return v.get<std::string>(); });
}

std::string id_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw Error(ErrorCode::MalformedRecord, "image id must be a string or integer");
}

}  // namespace

void write_jsonl(const fs::path& path, const ArtifactHeader& header, const std::vector<json>& records) {
    std::string out = header.to_json().dump();
    out.push_back('\n');
    for (const auto& r : records) {
        out += r.dump();
        out.push_back('\n');
    }
    atomic_write(path, out);
}

JsonlFile read_jsonl(const fs::path& path, const std::string& expected_format, bool header_required) {
    auto in = open_input(path);
    JsonlFile file;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(ErrorCode::MalformedRecord,
                        path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object()) {
            throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(lineno) + ": not an object");
        }
        if (file.records.empty() && !file.header) {
            if (auto h = ArtifactHeader::from_json(j)) {
                if (h->format != expected_format) {
                    throw Error(ErrorCode::VersionMismatch, path.string() + " holds '" + h->format +
                                                                "', expected '" + expected_format + "'");
                }
                if (h->version != kArtifactVersion) {
                    throw Error(ErrorCode::VersionMismatch, path.string() + " has version " +
                                                                std::to_string(h->version) + ", expected " +
                                                                std::to_string(kArtifactVersion));
                }
                file.header = std::move(h);
                continue;
            }
            if (header_required) throw Error(ErrorCode::MalformedRecord, path.string() + " has no header record");
        }
        file.records.push_back(std::move(j));
    }
    if (header_required && !file.header) throw Error(ErrorCode::MalformedRecord, path.string() + " is empty");
    return file;
}

void write_json_file(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

json read_json_file(const fs::path& path) {
    auto in = open_input(path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedRecord, path.string() + ": " + e.what());
    }
}

void write_text_file(const fs::path& path, const std::string& text) { atomic_write(path, text); }

// --- record conversions ---------------------------------------------------

json to_record(const MinedPair& p) {
    return {{"reference_id", p.pair.reference_id},
            {"target_id", p.pair.target_id},
            {"subgroup_seed_id", p.subgroup_seed_id}};
}

MinedPair pair_from_record(const json& j) {
    MinedPair p{{str_field(j, "reference_id"), str_field(j, "target_id")}, j.value("subgroup_seed_id", "")};
    if (p.pair.reference_id == p.pair.target_id) {
        throw Error(ErrorCode::MalformedRecord, "pair with identical ids " + p.pair.reference_id);
    }
    return p;
}

json to_record(const SyntheticTriplet& t) {
    json j{{"reference_id", t.reference_id},
           {"target_id", t.target_id},
           {"reference_caption", t.reference_caption},
           {"target_caption", t.target_caption},
           {"query_text", t.query_text},
           {"status", to_string(t.status)}};
    j["filter_score"] = t.filter_score ? json(*t.filter_score) : json(nullptr);
    return j;
}

SyntheticTriplet triplet_from_record(const json& j) {
    SyntheticTriplet t;
    t.reference_id = str_field(j, "reference_id");
    t.target_id = str_field(j, "target_id");
    t.reference_caption = j.value("reference_caption", "");
    t.target_caption = j.value("target_caption", "");
    t.query_text = str_field(j, "query_text");
    if (j.contains("filter_score") && !j["filter_score"].is_null()) {
        t.filter_score = field(j, "filter_score", [](const json& v) { return v.get<double>(); });
    }
    try {
        t.status = triplet_status_from_string(j.value("status", "unfiltered"));
    } catch (const Error& e) {
        throw Error(ErrorCode::MalformedRecord, e.what());
    }
    return t;
}

json to_record(const QueryRecord& q) {
    json j{{"reference_id", q.reference_id},
           {"query_text", q.query_text},
           {"ground_truth_ids", std::vector<ImageId>(q.ground_truth_ids.begin(), q.ground_truth_ids.end())}};
    if (q.subset_ids) j["subset_ids"] = *q.subset_ids;
    return j;
}

QueryRecord query_from_record(const json& j) {
    QueryRecord q;
    q.reference_id = str_field(j, "reference_id");
    q.query_text = str_field(j, "query_text");
    for (const auto& id : field(j, "ground_truth_ids", [](const json& v) { return v; })) {
        q.ground_truth_ids.insert(id_string(id));
    }
    if (j.contains("subset_ids") && !j["subset_ids"].is_null()) {
        std::vector<ImageId> s;
        for (const auto& id : j["subset_ids"]) s.push_back(id_string(id));
        q.subset_ids = std::move(s);
    }
    q.validate();
    return q;
}

json to_record(const LossRecord& r) {
    return {{"step", r.step},
            {"l_zscir", r.losses.l_zscir},
            {"l_triplet", r.losses.l_triplet},
            {"l_hybrid", r.losses.l_hybrid}};
}

LossRecord loss_from_record(const json& j) {
    const auto num = [&](const char* n) { return field(j, n, [](const json& v) { return v.get<double>(); }); };
    LossRecord r;
    r.step = field(j, "step", [](const json& v) { return v.get<std::uint64_t>(); });
    r.losses = {num("l_zscir"), num("l_triplet"), num("l_hybrid")};
    return r;
}

json embedding_record(const ImageId& id, const EmbeddingVector& v) {
    return {{"image_id", id}, {"embedding", std::vector<double>(v.values().begin(), v.values().end())}};
}

json caption_record(const ImageId& id, const std::string& caption) {
    return {{"image_id", id}, {"caption", caption}};
}

// --- typed loaders ----------------------------------------------------------

ImageStore load_embeddings(const fs::path& path) {
    const auto file = read_jsonl(path, formats::kEmbeddings, false);
    ImageStore out;
    std::size_t dim = 0;
    for (const auto& r : file.records) {
        auto id = field(r, "image_id", [](const json& v) { return id_string(v); });
        auto values = field(r, "embedding", [](const json& v) { return v.get<std::vector<double>>(); });
        if (dim == 0) dim = values.size();
        if (values.size() != dim) throw Error(ErrorCode::DimMismatch, "embedding " + id + " has a different dim");
        EmbeddingVector v = [&] {
            try {
                return EmbeddingVector(std::move(values));
            } catch (const Error& e) {
                throw Error(ErrorCode::MalformedRecord, "embedding " + id + ": " + e.what());
            }
        }();
        if (!out.emplace(id, std::move(v)).second) {
            throw Error(ErrorCode::MalformedRecord, "duplicate image id " + id + " in " + path.string());
        }
    }
    return out;
}

void save_embeddings(const fs::path& path, const ImageStore& images, const std::string& config_hash) {
    std::vector<json> records;
    records.reserve(images.size());
    for (const auto& [id, v] : images) records.push_back(embedding_record(id, v));
    write_jsonl(path, {formats::kEmbeddings, kArtifactVersion, config_hash}, records);
}

std::vector<MinedPair> load_pairs(const fs::path& path) {
    std::vector<MinedPair> out;
    for (const auto& r : read_jsonl(path, formats::kPairs).records) out.push_back(pair_from_record(r));
    return out;
}

std::map<ImageId, std::string> load_captions(const fs::path& path) {
    std::map<ImageId, std::string> out;
    for (const auto& r : read_jsonl(path, formats::kCaptions).records) {
        out[str_field(r, "image_id")] = str_field(r, "caption");
    }
    return out;
}

std::vector<SyntheticTriplet> load_triplets(const fs::path& path) {
    std::vector<SyntheticTriplet> out;
    for (const auto& r : read_jsonl(path, formats::kTriplets).records) out.push_back(triplet_from_record(r));
    return out;
}

std::vector<QueryRecord> load_queries(const fs::path& path) {
    std::vector<QueryRecord> out;
    for (const auto& r : read_jsonl(path, formats::kQueries, false).records) out.push_back(query_from_record(r));
    return out;
}

std::vector<LossRecord> load_loss_history(const fs::path& path) {
    std::vector<LossRecord> out;
    for (const auto& r : read_jsonl(path, formats::kLossHistory).records) out.push_back(loss_from_record(r));
    return out;
}

// --- benchmark annotation adapters ------------------------------------------

namespace {

const json& require_array(const json& doc, const fs::path& path) {
    if (!doc.is_array()) throw Error(ErrorCode::MalformedRecord, path.string() + ": expected a JSON array");
    return doc;
}

}  // namespace

std::vector<QueryRecord> load_cirr(const fs::path& path) {
    const auto doc = read_json_file(path);
    std::vector<QueryRecord> out;
    for (const auto& e : require_array(doc, path)) {
        QueryRecord q;
        q.reference_id = str_field(e, "reference");
        q.query_text = str_field(e, "caption");
        q.ground_truth_ids.insert(str_field(e, "target_hard"));
        if (e.contains("img_set")) {
            std::vector<ImageId> members;
            for (const auto& m : e["img_set"].value("members", json::array())) members.push_back(id_string(m));
            if (!members.empty()) q.subset_ids = std::move(members);
        }
        q.validate();
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<QueryRecord> load_circo(const fs::path& path) {
    const auto doc = read_json_file(path);
    std::vector<QueryRecord> out;
    for (const auto& e : require_array(doc, path)) {
        QueryRecord q;
        q.reference_id = field(e, "reference_img_id", [](const json& v) { return id_string(v); });
        q.query_text = str_field(e, "relative_caption");
        if (e.contains("target_img_id")) q.ground_truth_ids.insert(id_string(e["target_img_id"]));
        for (const auto& g : e.value("gt_img_ids", json::array())) q.ground_truth_ids.insert(id_string(g));
        q.validate();
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<QueryRecord> load_fashioniq(const fs::path& path) {
    const auto doc = read_json_file(path);
    std::vector<QueryRecord> out;
    for (const auto& e : require_array(doc, path)) {
        QueryRecord q;
        q.reference_id = str_field(e, "candidate");
        q.ground_truth_ids.insert(str_field(e, "target"));
        const auto caps = field(e, "captions", [](const json& v) { return v.get<std::vector<std::string>>(); });
        for (std::size_t i = 0; i < caps.size(); ++i) q.query_text += (i ? " and " : "") + caps[i];
        if (q.query_text.empty()) throw Error(ErrorCode::MalformedRecord, "FashionIQ entry without captions");
        q.validate();
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<QueryRecord> load_query_dataset(const fs::path& path, const std::string& layout) {
    if (layout == "generic") return load_queries(path);
    if (layout == "cirr") return load_cirr(path);
    if (layout == "circo") return load_circo(path);
    if (layout == "fashioniq") return load_fashioniq(path);
    throw Error(ErrorCode::InvalidConfig, "unknown query layout '" + layout + "'");
}

}  // namespace cirsynth
