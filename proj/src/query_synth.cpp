#include "cirsynth/query_synth.hpp"

#include "cirsynth/error.hpp"
#include "cirsynth/parallel.hpp"

namespace cirsynth {

std::string build_prompt(const std::string& reference_caption, const std::string& target_caption) {
    if (reference_caption.empty() || target_caption.empty()) {
        throw Error(ErrorCode::EmptyCaption, "prompt needs both captions");
    }
    std::string prompt;
    prompt.reserve(reference_caption.size() + target_caption.size() + 400);
    prompt += "Source sentence: ";
    prompt += reference_caption;
    prompt += "\nTarget sentence: ";
    prompt += target_caption;
    prompt +=
        "\nIf source sentence describes a source picture and target sentence describes a target picture, the "
        "source picture and an instruction are used to find the target picture. The instruction should indicate "
        "the difference between source and target. It should be as short as possible. Show the instruction.";
    return prompt;
}

SyntheticTriplet synthesize_triplet(const ImagePair& pair, const std::string& reference_caption,
                                    const std::string& target_caption, ProviderGateway& gateway) {
    if (pair.reference_id == pair.target_id) {
        throw Error(ErrorCode::InvalidArgument, "pair references the same image twice: " + pair.reference_id);
    }
    SyntheticTriplet t;
    t.reference_id = pair.reference_id;
    t.target_id = pair.target_id;
    t.reference_caption = reference_caption;
    t.target_caption = target_caption;
    t.query_text = gateway.generate_instruction(build_prompt(reference_caption, target_caption));
    return t;
}

SyntheticTriplet synthesize_triplet(const ImagePair& pair, ProviderGateway& gateway) {
    const auto ref = gateway.caption_image({pair.reference_id, {}});
    const auto tgt = gateway.caption_image({pair.target_id, {}});
    return synthesize_triplet(pair, ref, tgt, gateway);
}

SynthesisResult synthesize_batch(std::span<const ImagePair> pairs, ProviderGateway& gateway, std::size_t workers,
                                 const std::map<ImageId, std::string>& known_captions) {
    std::vector<std::optional<SyntheticTriplet>> slots(pairs.size());
    std::vector<std::optional<std::string>> failures(pairs.size());
    const auto caption_of = [&](const ImageId& id) {
        if (auto it = known_captions.find(id); it != known_captions.end()) return it->second;
        return gateway.caption_image({id, {}});
    };
    parallel_for(pairs.size(), workers, [&](std::size_t i) {
        try {
            const auto ref = caption_of(pairs[i].reference_id);
            const auto tgt = caption_of(pairs[i].target_id);
            slots[i] = synthesize_triplet(pairs[i], ref, tgt, gateway);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    SynthesisResult result;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (slots[i]) {
            result.triplets.push_back(std::move(*slots[i]));
        } else {
            result.errors.push_back({i, pairs[i].reference_id + "->" + pairs[i].target_id,
                                     failures[i].value_or("unknown error")});
        }
    }
    return result;
}

}  // namespace cirsynth
