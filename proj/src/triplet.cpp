#include "cirsynth/triplet.hpp"

#include "cirsynth/error.hpp"

namespace cirsynth {

std::string to_string(TripletStatus s) {
    switch (s) {
        case TripletStatus::Unfiltered: return "unfiltered";
        case TripletStatus::Kept: return "kept";
        case TripletStatus::DroppedSameCaption: return "dropped_same_caption";
        case TripletStatus::DroppedLowSimilarity: return "dropped_low_similarity";
    }
    return "unfiltered";
}

TripletStatus triplet_status_from_string(const std::string& s) {
    if (s == "unfiltered") return TripletStatus::Unfiltered;
    if (s == "kept") return TripletStatus::Kept;
    if (s == "dropped_same_caption") return TripletStatus::DroppedSameCaption;
    if (s == "dropped_low_similarity") return TripletStatus::DroppedLowSimilarity;
    throw Error(ErrorCode::MalformedRecord, "unknown triplet status '" + s + "'");
}

}  // namespace cirsynth
