#include "cirsynth/run_config.hpp"

#include <charconv>
#include <sstream>

#include "cirsynth/error.hpp"
#include "cirsynth/hashing.hpp"
#include "cirsynth/records.hpp"

namespace cirsynth {

using nlohmann::json;

namespace {

std::string mode_name(MockTextEmbedder::Mode m) {
    return m == MockTextEmbedder::Mode::BagOfWords ? "bag_of_words" : "whole_text";
}

MockTextEmbedder::Mode mode_from(const std::string& s) {
    if (s == "bag_of_words") return MockTextEmbedder::Mode::BagOfWords;
    if (s == "whole_text") return MockTextEmbedder::Mode::WholeText;
    throw Error(ErrorCode::InvalidConfig, "unknown embedder_mode '" + s + "'");
}

json optional_provider(const std::optional<ProviderConfig>& p) { return p ? p->to_json() : json(nullptr); }

std::optional<ProviderConfig> provider_from(const json& j, const char* name) {
    if (!j.contains(name) || j[name].is_null()) return std::nullopt;
    return ProviderConfig::from_json(j[name]);
}

/// Rejects keys in `given` that the defaults do not have.
void check_keys(const json& given, const json& defaults, const std::string& where) {
    if (!given.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        if (!defaults.contains(key)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + where + key + "'");
        if (value.is_object() && defaults[key].is_object()) check_keys(value, defaults[key], where + key + ".");
    }
}

}  // namespace

void RunConfig::validate() const {
    miner.validate();
    filter.validate();
    auto shape = mapping;
    shape.input_dim = shape.input_dim == 0 ? 1 : shape.input_dim;
    shape.token_dim = shape.token_dim == 0 ? 1 : shape.token_dim;
    shape.validate();
    train.validate();
    if (workers == 0) throw Error(ErrorCode::InvalidConfig, "workers must be >= 1");
    if (providers.semantic_dim == 0) throw Error(ErrorCode::InvalidConfig, "semantic_dim must be >= 1");
    if (!providers.mock && (!providers.caption || !providers.llm || !providers.embedding)) {
        throw Error(ErrorCode::InvalidConfig, "non-mock runs need caption, llm, and embedding providers");
    }
    for (const auto* p : {&providers.caption, &providers.llm, &providers.embedding}) {
        if (*p) (*p)->validate();
    }
    if (eval.k_values.empty()) throw Error(ErrorCode::InvalidConfig, "eval.k_values is empty");
    for (auto k : eval.k_values) {
        if (k == 0) throw Error(ErrorCode::InvalidConfig, "K values must be >= 1");
    }
    for (auto k : eval.subset_k_values) {
        if (k == 0) throw Error(ErrorCode::InvalidConfig, "K values must be >= 1");
    }
    for (auto k : ablate_token_counts) {
        if (k == 0) throw Error(ErrorCode::InvalidConfig, "token counts must be >= 1");
    }
}

json RunConfig::to_json() const {
    json train_json = train.to_json();
    train_json.erase("seed");
    json mapping_json = mapping.to_json();
    mapping_json.erase("input_dim");
    mapping_json.erase("token_dim");
    return {
        {"seed", seed},
        {"workers", workers},
        {"paths",
         {{"embeddings", paths.embeddings.string()},
          {"queries", paths.queries.string()},
          {"query_layout", paths.query_layout},
          {"gallery", paths.gallery.string()},
          {"encoders", paths.encoders.string()},
          {"image_dir", paths.image_dir.string()},
          {"out_dir", paths.out_dir.string()},
          {"cache_dir", paths.cache_dir.string()}}},
        {"miner",
         {{"subgroup_size", miner.subgroup_size},
          {"max_seed_distance", miner.max_seed_distance},
          {"min_member_distance", miner.min_member_distance},
          {"pairs_per_subgroup", miner.pairs_per_subgroup},
          {"distance", "cosine"}}},
        {"filter", {{"similarity_threshold", filter.similarity_threshold}}},
        {"providers",
         {{"mock", providers.mock},
          {"semantic_dim", providers.semantic_dim},
          {"embedder_mode", mode_name(providers.embedder_mode)},
          {"caption", optional_provider(providers.caption)},
          {"llm", optional_provider(providers.llm)},
          {"embedding", optional_provider(providers.embedding)}}},
        {"encoders", {{"token_dim", encoders.token_dim}, {"output_dim", encoders.output_dim}}},
        {"mapping", mapping_json},
        {"train", train_json},
        {"eval",
         {{"k_values", eval.k_values},
          {"subset_k_values", eval.subset_k_values},
          {"exclude_reference", eval.exclude_reference}}},
        {"ablate", {{"token_counts", ablate_token_counts}}},
    };
}

RunConfig RunConfig::from_json(const json& j) {
    const RunConfig defaults;
    const json d = defaults.to_json();
    check_keys(j, d, "");
    json m = d;
    m.merge_patch(j);

    RunConfig c;
    try {
        c.seed = m["seed"].get<std::uint64_t>();
        c.workers = m["workers"].get<std::size_t>();
        const auto& p = m["paths"];
        c.paths.embeddings = p["embeddings"].get<std::string>();
        c.paths.queries = p["queries"].get<std::string>();
        c.paths.query_layout = p["query_layout"].get<std::string>();
        c.paths.gallery = p["gallery"].get<std::string>();
        c.paths.encoders = p["encoders"].get<std::string>();
        c.paths.image_dir = p["image_dir"].get<std::string>();
        c.paths.out_dir = p["out_dir"].get<std::string>();
        c.paths.cache_dir = p["cache_dir"].get<std::string>();

        const auto& mi = m["miner"];
        c.miner.subgroup_size = mi["subgroup_size"].get<std::size_t>();
        c.miner.max_seed_distance = mi["max_seed_distance"].get<double>();
        c.miner.min_member_distance = mi["min_member_distance"].get<double>();
        c.miner.pairs_per_subgroup = mi["pairs_per_subgroup"].get<std::size_t>();
        if (mi["distance"] != "cosine") throw Error(ErrorCode::InvalidConfig, "miner.distance must be 'cosine'");

        c.filter.similarity_threshold = m["filter"]["similarity_threshold"].get<double>();

        const auto& pr = m["providers"];
        c.providers.mock = pr["mock"].get<bool>();
        c.providers.semantic_dim = pr["semantic_dim"].get<std::size_t>();
        c.providers.embedder_mode = mode_from(pr["embedder_mode"].get<std::string>());
        c.providers.caption = provider_from(pr, "caption");
        c.providers.llm = provider_from(pr, "llm");
        c.providers.embedding = provider_from(pr, "embedding");

        c.encoders.token_dim = m["encoders"]["token_dim"].get<std::size_t>();
        c.encoders.output_dim = m["encoders"]["output_dim"].get<std::size_t>();

        json mapping_json = m["mapping"];
        mapping_json["input_dim"] = 1;
        mapping_json["token_dim"] = 1;
        c.mapping = MappingNetworkConfig::from_json(mapping_json);
        c.mapping.input_dim = 0;
        c.mapping.token_dim = 0;

        c.train = TrainConfig::from_json(m["train"]);
        c.train.seed = derive_seed(c.seed, "train");

        const auto& ev = m["eval"];
        c.eval.k_values = ev["k_values"].get<std::vector<std::size_t>>();
        c.eval.subset_k_values = ev["subset_k_values"].get<std::vector<std::size_t>>();
        c.eval.exclude_reference = ev["exclude_reference"].get<bool>();
        c.eval.prompt = c.train.prompt;
        c.ablate_token_counts = m["ablate"]["token_counts"].get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string RunConfig::hash() const {
    json j = to_json();
    j.erase("paths");
    j.erase("workers");
    return sha256_hex(j.dump());
}

std::filesystem::path RunConfig::cache_dir() const {
    return paths.cache_dir.empty() ? paths.out_dir / "cache" : paths.cache_dir;
}

std::filesystem::path RunConfig::gallery_path() const {
    return paths.gallery.empty() ? paths.embeddings : paths.gallery;
}

std::uint64_t RunConfig::stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }

std::string dotted_to_pointer(const std::string& key) {
    std::string out = "/";
    for (char c : key) out.push_back(c == '.' ? '/' : c);
    return out;
}

namespace {

json parse_scalar(const json& like, const std::string& value, const std::string& pointer) {
    const auto fail = [&] {
        return Error(ErrorCode::InvalidConfig, "cannot parse '" + value + "' for " + pointer);
    };
    if (like.is_boolean()) {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        throw fail();
    }
    if (like.is_number_unsigned()) {
        std::uint64_t v = 0;
        const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc{} || p != value.data() + value.size()) throw fail();
        return v;
    }
    if (like.is_number()) {
        try {
            std::size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size()) throw fail();
            return v;
        } catch (const std::logic_error&) {
            throw fail();
        }
    }
    if (like.is_string()) return value;
    if (like.is_null() || like.is_object()) {
        try {
            return json::parse(value);
        } catch (const json::parse_error&) {
            throw fail();
        }
    }
    throw fail();
}

}  // namespace

void apply_override(json& target, const std::string& pointer, const std::string& value) {
    const json::json_pointer ptr(pointer);
    if (!target.contains(ptr)) throw Error(ErrorCode::InvalidConfig, "unknown config key " + pointer);
    auto& slot = target[ptr];
    if (slot.is_array()) {
        json arr = json::array();
        const json like = slot.empty() ? json(0u) : slot.front();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) arr.push_back(parse_scalar(like, item, pointer));
        }
        slot = std::move(arr);
        return;
    }
    slot = parse_scalar(slot, value, pointer);
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    json j = RunConfig{}.to_json();
    if (file) {
        const json f = read_json_file(*file);
        if (!f.is_object()) throw Error(ErrorCode::InvalidConfig, file->string() + " is not a JSON object");
        check_keys(f, j, "");
        j.merge_patch(f);
    }
    for (const auto& [key, value] : overrides) {
        apply_override(j, key.starts_with('/') ? key : dotted_to_pointer(key), value);
    }
    return RunConfig::from_json(j);
}

}  // namespace cirsynth
