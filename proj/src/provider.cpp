#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "cirsynth/provider.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include "cirsynth/error.hpp"
#include "cirsynth/hashing.hpp"

namespace cirsynth {

using nlohmann::json;

std::string ImageRef::content_hash() const {
    return bytes.empty() ? sha256_hex("id:" + id) : sha256_hex("bytes:" + bytes);
}

std::chrono::milliseconds RetryPolicy::delay_for(int attempt) const {
    const int shift = std::clamp(attempt - 1, 0, 20);
    const auto d = base_delay.count() * (std::int64_t{1} << shift);
    return std::chrono::milliseconds(std::min<std::int64_t>(d, max_delay.count()));
}

void RetryPolicy::sleep(std::chrono::milliseconds d) const {
    if (sleeper) {
        sleeper(d);
    } else {
        std::this_thread::sleep_for(d);
    }
}

void ProviderConfig::validate() const {
    if (!(timeout_seconds > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "timeout_seconds must be > 0");
    }
    if (max_retries < 0 || max_retries > 10) {
        throw Error(ErrorCode::InvalidConfig, "max_retries must be within [0, 10]");
    }
    if (endpoint.empty()) {
        throw Error(ErrorCode::InvalidConfig, "endpoint is empty");
    }
}

ProviderConfig ProviderConfig::from_json(const json& j) {
    ProviderConfig c;
    c.endpoint = j.value("endpoint", "");
    c.model_name = j.value("model_name", "");
    c.timeout_seconds = j.value("timeout_seconds", 30.0);
    c.max_retries = j.value("max_retries", 3);
    c.api_key_env_var = j.value("api_key_env_var", "");
    c.request_template = j.value("request_template", json::object());
    c.response_pointer = j.value("response_pointer", "");
    c.validate();
    return c;
}

json ProviderConfig::to_json() const {
    return {{"endpoint", endpoint},
            {"model_name", model_name},
            {"timeout_seconds", timeout_seconds},
            {"max_retries", max_retries},
            {"api_key_env_var", api_key_env_var},
            {"request_template", request_template},
            {"response_pointer", response_pointer}};
}

ProviderConfig chat_completion_preset(std::string endpoint, std::string model) {
    ProviderConfig c;
    c.endpoint = std::move(endpoint);
    c.model_name = std::move(model);
    c.api_key_env_var = "OPENAI_API_KEY";
    c.request_template = {{"model", "{{model}}"},
                          {"messages", json::array({{{"role", "user"}, {"content", "{{input}}"}}})}};
    c.response_pointer = "/choices/0/message/content";
    return c;
}

ProviderConfig embedding_preset(std::string endpoint, std::string model) {
    ProviderConfig c;
    c.endpoint = std::move(endpoint);
    c.model_name = std::move(model);
    c.api_key_env_var = "OPENAI_API_KEY";
    c.request_template = {{"model", "{{model}}"}, {"input", "{{input}}"}};
    c.response_pointer = "/data/0/embedding";
    return c;
}

ProviderConfig caption_preset(std::string endpoint, std::string model) {
    ProviderConfig c;
    c.endpoint = std::move(endpoint);
    c.model_name = std::move(model);
    c.request_template = {{"model", "{{model}}"}, {"image", "{{input}}"}};
    c.response_pointer = "/caption";
    return c;
}

// --- mocks ----------------------------------------------------------------

namespace {

constexpr std::array kAdjectives{"red", "small", "wooden", "white", "striped", "old", "bright", "dark"};
constexpr std::array kNouns{"dog", "cat", "bicycle", "train", "boat", "chair", "horse", "kite"};
constexpr std::array kPreps{"on", "near", "under"};
constexpr std::array kPlaces{"grass", "beach", "street", "table", "snow", "field"};

std::vector<std::string> words_of(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<double> gaussian_vector(std::uint64_t seed, std::size_t dim) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dim);
    for (double& x : v) x = normal(rng);
    return v;
}

std::string after_label(const std::string& prompt, std::string_view label) {
    const auto pos = prompt.find(label);
    if (pos == std::string::npos) return {};
    const auto start = pos + label.size();
    const auto end = prompt.find('\n', start);
    return prompt.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace

std::string MockCaptioner::caption(const ImageRef& image) {
    std::uint64_t h = hash64(image.content_hash());
    const auto pick = [&h](const auto& table) {
        const auto& w = table[h % table.size()];
        h /= table.size();
        return std::string(w);
    };
    const auto adj = pick(kAdjectives);
    const auto noun = pick(kNouns);
    const auto prep = pick(kPreps);
    const auto place = pick(kPlaces);
    return "a " + adj + " " + noun + " " + prep + " the " + place;
}

std::string MockInstructionGenerator::complete(const std::string& prompt) {
    const auto source = after_label(prompt, "Source sentence: ");
    const auto target = after_label(prompt, "Target sentence: ");
    if (source.empty() || target.empty()) {
        return "change the picture";
    }
    return "change " + source + " to " + target;
}

MockTextEmbedder::MockTextEmbedder(std::size_t dim, Mode mode) : dim_(dim), mode_(mode) {
    if (dim_ == 0) throw Error(ErrorCode::InvalidConfig, "mock embedding dim must be >= 1");
}

std::string MockTextEmbedder::model_id() const {
    return std::string(mode_ == Mode::WholeText ? "mock-embed-text-" : "mock-embed-bow-") +
           std::to_string(dim_);
}

EmbeddingVector MockTextEmbedder::embed(const std::string& text) {
    const auto words = words_of(text);
    if (mode_ == Mode::WholeText || words.empty()) {
        return l2_normalize(EmbeddingVector(gaussian_vector(hash64("text:" + text), dim_))).vector();
    }
    std::vector<double> sum(dim_, 0.0);
    for (const auto& w : words) {
        const auto v = gaussian_vector(hash64("word:" + w), dim_);
        for (std::size_t i = 0; i < dim_; ++i) sum[i] += v[i];
    }
    return l2_normalize(EmbeddingVector(std::move(sum))).vector();
}

// --- HTTP -----------------------------------------------------------------

namespace {

void substitute(json& node, const std::string& input, const std::string& model) {
    if (node.is_string()) {
        auto s = node.get<std::string>();
        for (const auto& [needle, value] : {std::pair{std::string("{{model}}"), model},
                                            std::pair{std::string("{{input}}"), input}}) {
            for (auto pos = s.find(needle); pos != std::string::npos;
                 pos = s.find(needle, pos + value.size())) {
                s.replace(pos, needle.size(), value);
            }
        }
        node = s;
    } else if (node.is_structured()) {
        for (auto& child : node) substitute(child, input, model);
    }
}

std::string base64(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

}  // namespace

HttpJsonClient::HttpJsonClient(ProviderConfig config, RetryPolicy retry)
    : config_(std::move(config)), retry_(std::move(retry)) {
    config_.validate();
    retry_.max_retries = config_.max_retries;
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.endpoint, m, kUrl)) {
        throw Error(ErrorCode::InvalidConfig, "bad endpoint URL: " + config_.endpoint);
    }
    scheme_host_port_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/";
}

json HttpJsonClient::request(const std::string& input) {
    json body = config_.request_template.is_null() ? json::object() : config_.request_template;
    substitute(body, input, config_.model_name);
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!config_.api_key_env_var.empty()) {
        if (const char* key = std::getenv(config_.api_key_env_var.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }

    const auto secs = static_cast<time_t>(config_.timeout_seconds);
    const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);

    ErrorCode last_code = ErrorCode::ProviderTimeout;
    std::string last_message;
    const int max_attempts = retry_.max_retries + 1;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        attempts_.fetch_add(1);
        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);

        auto res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            last_code = ErrorCode::ProviderTimeout;
            last_message = "transport error: " + httplib::to_string(res.error());
        } else if (res->status == 429 || res->status >= 500) {
            last_code = ErrorCode::ProviderTimeout;
            last_message = "HTTP " + std::to_string(res->status);
        } else if (res->status >= 400) {
            // Client errors will not improve on retry.
            throw Error(ErrorCode::ProviderMalformedResponse,
                        "HTTP " + std::to_string(res->status) + ": " + res->body);
        } else {
            const json parsed = json::parse(res->body, nullptr, /*allow_exceptions=*/false);
            if (!parsed.is_discarded()) {
                const json::json_pointer ptr(config_.response_pointer);
                if (parsed.contains(ptr)) return parsed.at(ptr);
            }
            last_code = ErrorCode::ProviderMalformedResponse;
            last_message = "response lacks " + config_.response_pointer;
        }
        if (attempt < max_attempts) retry_.sleep(retry_.delay_for(attempt));
    }
    throw Error(last_code, last_message + " after " + std::to_string(max_attempts) + " attempts");
}

std::string HttpCaptioner::caption(const ImageRef& image) {
    const auto v = client_.request(image.bytes.empty() ? image.id : base64(image.bytes));
    if (!v.is_string()) throw Error(ErrorCode::ProviderMalformedResponse, "caption is not a string");
    return v.get<std::string>();
}

std::string HttpCompletion::complete(const std::string& prompt) {
    const auto v = client_.request(prompt);
    if (!v.is_string()) throw Error(ErrorCode::ProviderMalformedResponse, "completion is not a string");
    return v.get<std::string>();
}

EmbeddingVector HttpEmbedder::embed(const std::string& text) {
    const auto v = client_.request(text);
    if (!v.is_array() || v.empty()) {
        throw Error(ErrorCode::ProviderMalformedResponse, "embedding is not a non-empty array");
    }
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& x : v) {
        if (!x.is_number()) throw Error(ErrorCode::ProviderMalformedResponse, "non-numeric embedding");
        out.push_back(x.get<double>());
    }
    try {
        return EmbeddingVector(std::move(out));
    } catch (const Error& e) {
        throw Error(ErrorCode::ProviderMalformedResponse, e.what());
    }
}

// --- cache ----------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::string ResponseCache::make_key(std::string_view kind, std::string_view model,
                                    std::string_view payload) {
    std::string buf;
    buf.reserve(kind.size() + model.size() + payload.size() + 2);
    buf.append(kind).push_back('\n');
    buf.append(model).push_back('\n');
    buf.append(payload);
    return sha256_hex(buf);
}

std::optional<CacheValue> ResponseCache::get(const std::string& key) {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
    if (dir_.empty()) return std::nullopt;

    std::ifstream in(dir_ / (key + ".json"));
    if (!in) return std::nullopt;
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || j.value("key", "") != key || !j.contains("value")) {
        return std::nullopt;  // torn or foreign file: treat as a miss
    }
    CacheValue value;
    if (j["value"].is_string()) {
        value = j["value"].get<std::string>();
    } else {
        value = j["value"].get<std::vector<double>>();
    }
    memory_.emplace(key, value);
    return value;
}

void ResponseCache::put(const std::string& key, const CacheValue& value) {
    std::lock_guard lock(mutex_);
    memory_[key] = value;
    if (dir_.empty()) return;

    json j;
    j["key"] = key;
    std::visit([&j](const auto& v) { j["value"] = v; }, value);
    j["created_at"] = std::chrono::duration_cast<std::chrono::seconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
    const auto final_path = dir_ / (key + ".json");
    const auto tmp_path = dir_ / (key + ".json.tmp");
    {
        std::ofstream out(tmp_path, std::ios::trunc);
        out << j.dump();
    }
    std::filesystem::rename(tmp_path, final_path);
}

// --- gateway --------------------------------------------------------------

std::string clean_instruction(std::string_view raw) {
    std::string collapsed;
    collapsed.reserve(raw.size());
    bool in_break = false;
    for (char c : raw) {
        if (c == '\n' || c == '\r') {
            in_break = true;
            continue;
        }
        if (in_break) {
            if (!collapsed.empty()) collapsed.push_back(' ');
            in_break = false;
        }
        collapsed.push_back(c);
    }
    const auto is_strip = [](char c) {
        return std::isspace(static_cast<unsigned char>(c)) || c == '"' || c == '\'' || c == '`';
    };
    std::size_t b = 0;
    std::size_t e = collapsed.size();
    while (b < e && is_strip(collapsed[b])) ++b;
    while (e > b && is_strip(collapsed[e - 1])) --e;
    std::string out;
    for (std::size_t i = b; i < e; ++i) {
        if (collapsed[i] == ' ' && !out.empty() && out.back() == ' ') continue;
        out.push_back(collapsed[i]);
    }
    return out;
}

ProviderGateway::ProviderGateway(std::shared_ptr<CaptionBackend> captioner,
                                 std::shared_ptr<CompletionBackend> llm,
                                 std::shared_ptr<EmbeddingBackend> embedder,
                                 std::shared_ptr<ResponseCache> cache)
    : captioner_(std::move(captioner)),
      llm_(std::move(llm)),
      embedder_(std::move(embedder)),
      cache_(cache ? std::move(cache) : std::make_shared<ResponseCache>()) {}

ProviderGateway ProviderGateway::mock(std::size_t semantic_dim, MockTextEmbedder::Mode mode,
                                      std::filesystem::path cache_dir) {
    return ProviderGateway(std::make_shared<MockCaptioner>(),
                           std::make_shared<MockInstructionGenerator>(),
                           std::make_shared<MockTextEmbedder>(semantic_dim, mode),
                           std::make_shared<ResponseCache>(std::move(cache_dir)));
}

std::string ProviderGateway::caption_image(const ImageRef& image) {
    if (!captioner_) throw Error(ErrorCode::InvalidConfig, "no caption provider configured");
    const auto key = ResponseCache::make_key("caption", captioner_->model_id(), image.content_hash());
    if (auto hit = cache_->get(key); hit && std::holds_alternative<std::string>(*hit)) {
        cache_hits_.fetch_add(1);
        return std::get<std::string>(*hit);
    }
    caption_calls_.fetch_add(1);
    std::string caption = clean_instruction(captioner_->caption(image));
    if (caption.empty()) {
        throw Error(ErrorCode::ProviderMalformedResponse, "empty caption for " + image.id);
    }
    cache_->put(key, caption);
    return caption;
}

std::string ProviderGateway::generate_instruction(const std::string& prompt) {
    if (prompt.empty()) throw Error(ErrorCode::InvalidArgument, "empty prompt");
    if (!llm_) throw Error(ErrorCode::InvalidConfig, "no completion provider configured");
    const auto key = ResponseCache::make_key("instruction", llm_->model_id(), prompt);
    if (auto hit = cache_->get(key); hit && std::holds_alternative<std::string>(*hit)) {
        cache_hits_.fetch_add(1);
        return std::get<std::string>(*hit);
    }
    completion_calls_.fetch_add(1);
    std::string instruction = clean_instruction(llm_->complete(prompt));
    if (instruction.empty()) throw Error(ErrorCode::EmptyCompletion, "provider returned a blank completion");
    cache_->put(key, instruction);
    return instruction;
}

EmbeddingVector ProviderGateway::embed_text(const std::string& text) {
    if (text.empty()) throw Error(ErrorCode::InvalidArgument, "cannot embed empty text");
    if (!embedder_) throw Error(ErrorCode::InvalidConfig, "no embedding provider configured");
    const auto key = ResponseCache::make_key("embedding", embedder_->model_id(), text);
    if (auto hit = cache_->get(key); hit && std::holds_alternative<std::vector<double>>(*hit)) {
        cache_hits_.fetch_add(1);
        return EmbeddingVector(std::get<std::vector<double>>(*hit));
    }
    embedding_calls_.fetch_add(1);
    EmbeddingVector v = embedder_->embed(text);
    cache_->put(key, v.raw());
    return v;
}

ProviderCallStats ProviderGateway::stats() const noexcept {
    return {caption_calls_.load(), completion_calls_.load(), embedding_calls_.load(), cache_hits_.load()};
}

}  // namespace cirsynth
