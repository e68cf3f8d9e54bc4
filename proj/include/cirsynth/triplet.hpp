#pragma once

#include <optional>
#include <string>

namespace cirsynth {

using ImageId = std::string;

enum class TripletStatus { Unfiltered, Kept, DroppedSameCaption, DroppedLowSimilarity };

[[nodiscard]] std::string to_string(TripletStatus s);
[[nodiscard]] TripletStatus triplet_status_from_string(const std::string& s);

struct ImagePair {
    ImageId reference_id;
    ImageId target_id;

    friend bool operator==(const ImagePair&, const ImagePair&) = default;
    friend auto operator<=>(const ImagePair&, const ImagePair&) = default;
};

/// (reference image, query text, target image) plus captions and the
/// filter verdict.
struct SyntheticTriplet {
    ImageId reference_id;
    ImageId target_id;
    std::string reference_caption;
    std::string target_caption;
    std::string query_text;
    std::optional<double> filter_score;
    TripletStatus status = TripletStatus::Unfiltered;

    friend bool operator==(const SyntheticTriplet&, const SyntheticTriplet&) = default;
};

}  // namespace cirsynth
