#pragma once

// External model access: captioning, instruction generation, and text
// embedding behind one gateway with a persistent content-addressed cache.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cirsynth/embedding.hpp"

namespace cirsynth {

/// Opaque image handle: an id, optionally with the encoded image bytes.
/// The content hash uses the bytes when present, the id otherwise.
struct ImageRef {
    std::string id;
    std::string bytes;

    [[nodiscard]] std::string content_hash() const;
};

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_delay{200};
    std::chrono::milliseconds max_delay{5000};
    /// Injected for tests; defaults to std::this_thread::sleep_for.
    std::function<void(std::chrono::milliseconds)> sleeper;

    /// Exponential backoff capped at max_delay. attempt is 1-based.
    [[nodiscard]] std::chrono::milliseconds delay_for(int attempt) const;
    void sleep(std::chrono::milliseconds d) const;
};

struct ProviderConfig {
    std::string endpoint;        // http(s)://host[:port]/path
    std::string model_name;
    double timeout_seconds = 30.0;
    int max_retries = 3;
    std::string api_key_env_var;  // empty: no Authorization header
    /// JSON body with "{{input}}" / "{{model}}" string placeholders.
    nlohmann::json request_template;
    /// JSON pointer to the answer inside the response body.
    std::string response_pointer;

    void validate() const;

    static ProviderConfig from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Preset request/response shapes for common OpenAI-style endpoints.
ProviderConfig chat_completion_preset(std::string endpoint, std::string model);
ProviderConfig embedding_preset(std::string endpoint, std::string model);
ProviderConfig caption_preset(std::string endpoint, std::string model);

// --- backends -------------------------------------------------------------

class CaptionBackend {
public:
    virtual ~CaptionBackend() = default;
    virtual std::string caption(const ImageRef& image) = 0;
    [[nodiscard]] virtual std::string model_id() const = 0;
};

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual std::string complete(const std::string& prompt) = 0;
    [[nodiscard]] virtual std::string model_id() const = 0;
};

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual EmbeddingVector embed(const std::string& text) = 0;
    [[nodiscard]] virtual std::string model_id() const = 0;
};

/// Caption drawn from a small phrase grammar indexed by the content hash.
class MockCaptioner final : public CaptionBackend {
public:
    std::string caption(const ImageRef& image) override;
    [[nodiscard]] std::string model_id() const override { return "mock-captioner-v1"; }
};

/// Extracts the two captions from an instruction prompt and answers
/// "change <source> to <target>".
class MockInstructionGenerator final : public CompletionBackend {
public:
    std::string complete(const std::string& prompt) override;
    [[nodiscard]] std::string model_id() const override { return "mock-llm-v1"; }
};

class MockTextEmbedder final : public EmbeddingBackend {
public:
    enum class Mode {
        WholeText,   // one pseudo-random unit vector seeded by the text hash
        BagOfWords,  // normalized sum of per-word pseudo-random vectors
    };

    explicit MockTextEmbedder(std::size_t dim = 64, Mode mode = Mode::BagOfWords);

    EmbeddingVector embed(const std::string& text) override;
    [[nodiscard]] std::string model_id() const override;

private:
    std::size_t dim_;
    Mode mode_;
};

/// POSTs a JSON body built from ProviderConfig::request_template and pulls
/// the answer out with response_pointer. Retries on transport errors, 5xx,
/// 429, and malformed bodies.
class HttpJsonClient {
public:
    HttpJsonClient(ProviderConfig config, RetryPolicy retry);

    /// Returns the JSON value at response_pointer. Throws ProviderTimeout
    /// or ProviderMalformedResponse once attempts are exhausted.
    nlohmann::json request(const std::string& input);

    [[nodiscard]] const ProviderConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::uint64_t attempts() const noexcept { return attempts_.load(); }

private:
    ProviderConfig config_;
    RetryPolicy retry_;
    std::string scheme_host_port_;
    std::string path_;
    std::atomic<std::uint64_t> attempts_{0};
};

class HttpCaptioner final : public CaptionBackend {
public:
    HttpCaptioner(ProviderConfig config, RetryPolicy retry) : client_(std::move(config), std::move(retry)) {}
    std::string caption(const ImageRef& image) override;
    [[nodiscard]] std::string model_id() const override { return client_.config().model_name; }
    [[nodiscard]] const HttpJsonClient& client() const noexcept { return client_; }

private:
    HttpJsonClient client_;
};

class HttpCompletion final : public CompletionBackend {
public:
    HttpCompletion(ProviderConfig config, RetryPolicy retry) : client_(std::move(config), std::move(retry)) {}
    std::string complete(const std::string& prompt) override;
    [[nodiscard]] std::string model_id() const override { return client_.config().model_name; }
    [[nodiscard]] const HttpJsonClient& client() const noexcept { return client_; }

private:
    HttpJsonClient client_;
};

class HttpEmbedder final : public EmbeddingBackend {
public:
    HttpEmbedder(ProviderConfig config, RetryPolicy retry) : client_(std::move(config), std::move(retry)) {}
    EmbeddingVector embed(const std::string& text) override;
    [[nodiscard]] std::string model_id() const override { return client_.config().model_name; }
    [[nodiscard]] const HttpJsonClient& client() const noexcept { return client_; }

private:
    HttpJsonClient client_;
};

// --- cache ----------------------------------------------------------------

using CacheValue = std::variant<std::string, std::vector<double>>;

struct CacheEntry {
    std::string key;
    CacheValue value;
    std::int64_t created_at = 0;  // unix seconds; informational only
};

/// Key-value store of hash-named JSON files. An empty directory path keeps
/// entries in memory only. Writes are serialized and atomic (tmp + rename).
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir = {});

    /// Content key for a request: sha256 over kind, model, and payload.
    [[nodiscard]] static std::string make_key(std::string_view kind, std::string_view model,
                                              std::string_view payload);

    [[nodiscard]] std::optional<CacheValue> get(const std::string& key);
    void put(const std::string& key, const CacheValue& value);

    [[nodiscard]] const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
    std::mutex mutex_;
    std::unordered_map<std::string, CacheValue> memory_;
};

// --- gateway --------------------------------------------------------------

/// Counts of calls that actually reached a backend (cache misses).
struct ProviderCallStats {
    std::uint64_t caption_calls = 0;
    std::uint64_t completion_calls = 0;
    std::uint64_t embedding_calls = 0;
    std::uint64_t cache_hits = 0;

    [[nodiscard]] std::uint64_t total_calls() const noexcept {
        return caption_calls + completion_calls + embedding_calls;
    }
};

class ProviderGateway {
public:
    ProviderGateway(std::shared_ptr<CaptionBackend> captioner,
                    std::shared_ptr<CompletionBackend> llm,
                    std::shared_ptr<EmbeddingBackend> embedder,
                    std::shared_ptr<ResponseCache> cache);

    /// All-mock gateway with an in-memory cache unless a dir is given.
    static ProviderGateway mock(std::size_t semantic_dim = 64,
                                MockTextEmbedder::Mode mode = MockTextEmbedder::Mode::BagOfWords,
                                std::filesystem::path cache_dir = {});

    /// Non-empty caption; cached by image content hash.
    std::string caption_image(const ImageRef& image);

    /// Single-line instruction; throws EmptyCompletion on a blank answer.
    std::string generate_instruction(const std::string& prompt);

    /// Throws InvalidArgument on empty text.
    EmbeddingVector embed_text(const std::string& text);

    [[nodiscard]] ProviderCallStats stats() const noexcept;

private:
    std::shared_ptr<CaptionBackend> captioner_;
    std::shared_ptr<CompletionBackend> llm_;
    std::shared_ptr<EmbeddingBackend> embedder_;
    std::shared_ptr<ResponseCache> cache_;
    std::atomic<std::uint64_t> caption_calls_{0};
    std::atomic<std::uint64_t> completion_calls_{0};
    std::atomic<std::uint64_t> embedding_calls_{0};
    std::atomic<std::uint64_t> cache_hits_{0};
};

/// Trims whitespace and surrounding quotes; collapses newline runs to one
/// space.
[[nodiscard]] std::string clean_instruction(std::string_view raw);

}  // namespace cirsynth
