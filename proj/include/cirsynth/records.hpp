#pragma once

// Line-structured artifact files: one JSON object per line, the first line
// a header naming the format, its version, and the producing config hash.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirsynth/embedding.hpp"
#include "cirsynth/pair_miner.hpp"
#include "cirsynth/retrieval_eval.hpp"
#include "cirsynth/trainer.hpp"
#include "cirsynth/triplet.hpp"

namespace cirsynth {

inline constexpr int kArtifactVersion = 1;

namespace formats {
inline constexpr const char* kEmbeddings = "cirsynth.embeddings";
inline constexpr const char* kPairs = "cirsynth.pairs";
inline constexpr const char* kCaptions = "cirsynth.captions";
inline constexpr const char* kTriplets = "cirsynth.triplets";
inline constexpr const char* kQueries = "cirsynth.queries";
inline constexpr const char* kLossHistory = "cirsynth.loss_history";
}  // namespace formats

struct ArtifactHeader {
    std::string format;
    int version = kArtifactVersion;
    std::string config_hash;

    [[nodiscard]] nlohmann::json to_json() const;
    /// Nullopt when the object is not a header record.
    static std::optional<ArtifactHeader> from_json(const nlohmann::json& j);
};

struct JsonlFile {
    std::optional<ArtifactHeader> header;
    std::vector<nlohmann::json> records;
};

/// Header line plus one compact JSON object per line. Written to a
/// temporary sibling and renamed into place.
void write_jsonl(const std::filesystem::path& path, const ArtifactHeader& header,
                 const std::vector<nlohmann::json>& records);

/// Throws MissingInput (naming the path), MalformedRecord (with the line
/// number), or VersionMismatch when the header's format or version
/// differs from what is expected. A missing header is accepted only when
/// `header_required` is false.
[[nodiscard]] JsonlFile read_jsonl(const std::filesystem::path& path, const std::string& expected_format,
                                   bool header_required = true);

/// Writes a JSON document atomically (tmp + rename), pretty-printed.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
/// Throws MissingInput or MalformedRecord.
[[nodiscard]] nlohmann::json read_json_file(const std::filesystem::path& path);
/// Atomic plain-text write.
void write_text_file(const std::filesystem::path& path, const std::string& text);

// --- record conversions ---------------------------------------------------

[[nodiscard]] nlohmann::json to_record(const MinedPair& p);
[[nodiscard]] MinedPair pair_from_record(const nlohmann::json& j);

[[nodiscard]] nlohmann::json to_record(const SyntheticTriplet& t);
[[nodiscard]] SyntheticTriplet triplet_from_record(const nlohmann::json& j);

[[nodiscard]] nlohmann::json to_record(const QueryRecord& q);
[[nodiscard]] QueryRecord query_from_record(const nlohmann::json& j);

[[nodiscard]] nlohmann::json to_record(const LossRecord& r);
[[nodiscard]] LossRecord loss_from_record(const nlohmann::json& j);

[[nodiscard]] nlohmann::json embedding_record(const ImageId& id, const EmbeddingVector& v);
[[nodiscard]] nlohmann::json caption_record(const ImageId& id, const std::string& caption);

// --- typed loaders ----------------------------------------------------------

/// {image_id, embedding} lines; the header is optional so raw exports can
/// be fed in directly. Duplicate ids are rejected.
[[nodiscard]] ImageStore load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const ImageStore& images, const std::string& config_hash);

[[nodiscard]] std::vector<MinedPair> load_pairs(const std::filesystem::path& path);
[[nodiscard]] std::map<ImageId, std::string> load_captions(const std::filesystem::path& path);
[[nodiscard]] std::vector<SyntheticTriplet> load_triplets(const std::filesystem::path& path);
/// Generic query records; header optional. Every record is validated.
[[nodiscard]] std::vector<QueryRecord> load_queries(const std::filesystem::path& path);
[[nodiscard]] std::vector<LossRecord> load_loss_history(const std::filesystem::path& path);

// --- benchmark annotation adapters ------------------------------------------

/// CIRR captions file: a JSON array of {reference, target_hard, caption,
/// img_set: {members}}. The subgroup becomes subset_ids.
[[nodiscard]] std::vector<QueryRecord> load_cirr(const std::filesystem::path& path);

/// CIRCO annotations: a JSON array of {reference_img_id, relative_caption,
/// gt_img_ids} (target_img_id is folded into the ground truth). Numeric
/// ids are rendered in decimal.
[[nodiscard]] std::vector<QueryRecord> load_circo(const std::filesystem::path& path);

/// FashionIQ captions: a JSON array of {candidate, target, captions}; the
/// two relative captions are joined with " and ".
[[nodiscard]] std::vector<QueryRecord> load_fashioniq(const std::filesystem::path& path);

/// Dispatch on "generic" | "cirr" | "circo" | "fashioniq". Throws
/// InvalidConfig for other names.
[[nodiscard]] std::vector<QueryRecord> load_query_dataset(const std::filesystem::path& path,
                                                          const std::string& layout);

}  // namespace cirsynth
