#pragma once

// Brute-force reference implementations. Each one is written as plain
// per-pixel, per-class scalar loops with no shared helpers from the
// vectorized path, so that agreement between the two is meaningful.

#include <cstdint>
#include <span>
#include <vector>

#include "protoens/ensemble.hpp"
#include "protoens/prototype_head.hpp"
#include "protoens/tensor.hpp"

namespace protoens::oracle {

/// Per-pixel cosine-softmax over prototypes, same contract as
/// predict_probability_map.
ProbMap oracle_predict(const FeatureVolume& query, const PrototypeSet& protos, double alpha);

/// |P ∩ G| / |P ∪ G| over non-ignore pixels, 0 when the union is empty.
double oracle_iou(const DenseMask& pred, const DenseMask& gt, std::uint8_t c);

/// Pixel-by-pixel accumulation of the K-shot masked mean.
std::vector<double> oracle_masked_average_pool(std::span<const Shot> shots,
                                               std::uint8_t class_id);

std::vector<double> oracle_background_prototype(std::span<const ClassSupport> supports);

PrototypeSet oracle_prototypes(std::span<const ClassSupport> supports);

/// Independent Voting from scratch: oracle prototypes and scores per branch,
/// then the weighted mix in the requested mode.
ProbMap oracle_vote(std::span<const BackboneBranch> branches, std::span<const double> weights,
                    VoteMode mode, double alpha);

/// Feature Volume Fusion from scratch: per-pixel concatenation loops, then
/// oracle prototypes and oracle_predict.
ProbMap oracle_fuse_predict(std::span<const BackboneBranch> branches, double alpha);

}  // namespace protoens::oracle
