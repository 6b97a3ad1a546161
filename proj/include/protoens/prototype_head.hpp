#pragma once

// Parameter-free metric-learning head: masked average pooling of support
// features into one prototype per class (plus background), then per-pixel
// softmax over negative scaled cosine distances to those prototypes.

#include <cstdint>
#include <span>
#include <vector>

#include "protoens/tensor.hpp"

namespace protoens {

inline constexpr double kDefaultAlpha = 1.0;
// Distance multiplier used by the original PANet release.
inline constexpr double kPanetAlpha = 20.0;

/// One support image: features already resized to the mask's grid.
struct Shot {
    FeatureVolume features;
    DenseMask mask;
};

/// The K shots that describe one class of the episode.
struct ClassSupport {
    std::uint8_t class_id;
    std::vector<Shot> shots;
};

struct Prototype {
    std::uint8_t class_id;
    std::vector<float> vector;
};

/// One prototype per episode class plus exactly one background prototype,
/// ordered background first, then ascending class id. Index i of a
/// predicted ProbMap refers to labels()[i].
class PrototypeSet {
public:
    explicit PrototypeSet(std::vector<Prototype> prototypes);

    std::span<const Prototype> prototypes() const noexcept { return prototypes_; }
    const std::vector<std::uint8_t>& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return prototypes_.size(); }
    std::size_t dim() const noexcept { return prototypes_.front().vector.size(); }

private:
    std::vector<Prototype> prototypes_;
    std::vector<std::uint8_t> labels_;
};

/// K-shot masked average pool for `class_id`: the mean over shots of each
/// shot's spatial mean at pixels labelled `class_id`. Shots that do not
/// contain the class are skipped; throws EmptyClass if none contains it.
Prototype masked_average_pool(std::span<const Shot> shots, std::uint8_t class_id);

/// Background prototype: the mean over all L*K support images of the
/// per-image mean at pixels whose label is neither an episode class nor
/// ignore. Throws EmptyClass if any support image has no background pixel.
Prototype background_prototype(std::span<const ClassSupport> supports);

/// Foreground prototypes for every ClassSupport plus the background one.
PrototypeSet build_prototypes(std::span<const ClassSupport> supports);

/// Pre-softmax scores -alpha * cosine_distance(query pixel, prototype).
ScoreMap predict_score_map(const FeatureVolume& query, const PrototypeSet& protos,
                           double alpha = kDefaultAlpha);

ProbMap predict_probability_map(const FeatureVolume& query, const PrototypeSet& protos,
                                double alpha = kDefaultAlpha);

/// argmax of the probability map, translated to prototype labels.
DenseMask predict_mask(const FeatureVolume& query, const PrototypeSet& protos,
                       double alpha = kDefaultAlpha);

/// Maps argmax indices to the prototype set's labels.
DenseMask indices_to_labels(const DenseMask& indices, const PrototypeSet& protos);

}  // namespace protoens
