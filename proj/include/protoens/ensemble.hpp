#pragma once

// Backbone ensembling on top of the prototype head.
//
// Independent Voting runs the head once per backbone and mixes the results.
// Two mixing modes exist because the method has two readings: a weighted sum
// of per-backbone softmax outputs (kPosteriorMean, the default) and a
// weighted sum of pre-softmax scores followed by a single softmax
// (kLogitSum). Both decode to the same mask for a single branch.
//
// Feature Volume Fusion concatenates every backbone's features along the
// channel axis and runs the head once on the merged volumes.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protoens/prototype_head.hpp"
#include "protoens/tensor.hpp"

namespace protoens {

/// Query and support features of one backbone for one episode. All
/// volumes are on their mask's grid.
struct BackboneBranch {
    std::string backbone_id;
    FeatureVolume query;
    std::vector<ClassSupport> supports;
};

enum class VoteMode { kPosteriorMean, kLogitSum };
enum class Strategy { kSingle, kVoting, kFusion };

std::string_view to_string(VoteMode mode);
std::string_view to_string(Strategy strategy);
std::optional<VoteMode> parse_vote_mode(std::string_view text);
std::optional<Strategy> parse_strategy(std::string_view text);

struct VotingConfig {
    /// One non-negative weight per branch summing to 1. Empty means uniform.
    std::vector<double> weights;
    VoteMode mode = VoteMode::kPosteriorMean;

    static VotingConfig uniform(std::size_t branches, VoteMode mode = VoteMode::kPosteriorMean);

    /// Weights to use for `branches` branches; throws InvalidConfig when the
    /// configured weights do not fit.
    std::vector<double> resolved_weights(std::size_t branches) const;
};

struct FuseOptions {
    // Unit-normalize each branch's feature vectors per pixel before
    // concatenation. Off by default: plain concatenation.
    bool l2_normalize = false;
};

/// Prototype-head output for one branch.
struct BranchPrediction {
    PrototypeSet prototypes;
    ScoreMap scores;
    ProbMap probs;
};

BranchPrediction predict_branch(const BackboneBranch& branch, double alpha = kDefaultAlpha);

/// Weighted sum of per-branch distributions.
ProbMap mix_probability_maps(std::span<const ProbMap> maps, std::span<const double> weights);

/// Weighted sum of per-branch scores, then one softmax.
ProbMap mix_score_maps(std::span<const ScoreMap> maps, std::span<const double> weights);

ProbMap vote(std::span<const BackboneBranch> branches, const VotingConfig& cfg,
             double alpha = kDefaultAlpha);

BackboneBranch fuse(std::span<const BackboneBranch> branches, const FuseOptions& options = {});

struct EnsemblePrediction {
    ProbMap probs;
    /// Decoded mask in the episode's label space (index j of probs is
    /// labels[j]).
    DenseMask mask;
    std::vector<std::uint8_t> labels;
};

EnsemblePrediction predict_ensemble(std::span<const BackboneBranch> branches, Strategy strategy,
                                    const VotingConfig& cfg = {}, double alpha = kDefaultAlpha,
                                    const FuseOptions& fuse_options = {});

/// Per-pixel L2 normalization; zero vectors stay zero.
FeatureVolume l2_normalize_pixels(const FeatureVolume& volume);

}  // namespace protoens
