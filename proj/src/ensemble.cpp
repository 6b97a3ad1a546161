#include "protoens/ensemble.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "protoens/error.hpp"

namespace protoens {

std::string_view to_string(VoteMode mode) {
    switch (mode) {
        case VoteMode::kPosteriorMean: return "posterior-mean";
        case VoteMode::kLogitSum: return "logit-sum";
    }
    return "unknown";
}

std::string_view to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::kSingle: return "single";
        case Strategy::kVoting: return "voting";
        case Strategy::kFusion: return "fusion";
    }
    return "unknown";
}

std::optional<VoteMode> parse_vote_mode(std::string_view text) {
    if (text == "posterior-mean") return VoteMode::kPosteriorMean;
    if (text == "logit-sum") return VoteMode::kLogitSum;
    return std::nullopt;
}

std::optional<Strategy> parse_strategy(std::string_view text) {
    if (text == "single") return Strategy::kSingle;
    if (text == "voting") return Strategy::kVoting;
    if (text == "fusion") return Strategy::kFusion;
    return std::nullopt;
}

VotingConfig VotingConfig::uniform(std::size_t branches, VoteMode mode) {
    return {std::vector<double>(branches, 1.0 / static_cast<double>(branches)), mode};
}

std::vector<double> VotingConfig::resolved_weights(std::size_t branches) const {
    if (branches == 0) {
        throw InvalidConfig("voting needs at least one branch");
    }
    if (weights.empty()) {
        return std::vector<double>(branches, 1.0 / static_cast<double>(branches));
    }
    if (weights.size() != branches) {
        throw InvalidConfig("got " + std::to_string(weights.size()) + " voting weights for " +
                            std::to_string(branches) + " branches");
    }
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw InvalidConfig("voting weights must be finite and non-negative");
        }
    }
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9) {
        throw InvalidConfig("voting weights must sum to 1, got " + std::to_string(sum));
    }
    return weights;
}

BranchPrediction predict_branch(const BackboneBranch& branch, double alpha) {
    PrototypeSet protos = build_prototypes(branch.supports);
    ScoreMap scores = predict_score_map(branch.query, protos, alpha);
    ProbMap probs = softmax_map(scores);
    return {std::move(protos), std::move(scores), std::move(probs)};
}

namespace {

template <typename Map>
std::vector<double> weighted_sum(std::span<const Map> maps, std::span<const double> weights) {
    if (maps.empty()) {
        throw InvalidConfig("nothing to combine");
    }
    if (weights.size() != maps.size()) {
        throw InvalidConfig("got " + std::to_string(weights.size()) + " weights for " +
                            std::to_string(maps.size()) + " maps");
    }
    for (std::size_t b = 1; b < maps.size(); ++b) {
        if (!maps[b].same_shape(maps[0])) {
            throw ShapeMismatch("branch " + std::to_string(b) + " map is " +
                                std::to_string(maps[b].height()) + "x" +
                                std::to_string(maps[b].width()) + "x" +
                                std::to_string(maps[b].classes()) + ", expected " +
                                std::to_string(maps[0].height()) + "x" +
                                std::to_string(maps[0].width()) + "x" +
                                std::to_string(maps[0].classes()));
        }
    }
    std::vector<double> acc(maps[0].values().size(), 0.0);
    for (std::size_t b = 0; b < maps.size(); ++b) {
        const auto values = maps[b].values();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[b] * values[i];
    }
    return acc;
}

}  // namespace

ProbMap mix_probability_maps(std::span<const ProbMap> maps, std::span<const double> weights) {
    const auto acc = weighted_sum(maps, weights);
    return ProbMap(maps[0].height(), maps[0].width(), maps[0].classes(),
                   std::vector<float>(acc.begin(), acc.end()));
}

ProbMap mix_score_maps(std::span<const ScoreMap> maps, std::span<const double> weights) {
    const auto acc = weighted_sum(maps, weights);
    return softmax_map(ScoreMap(maps[0].height(), maps[0].width(), maps[0].classes(),
                                std::vector<float>(acc.begin(), acc.end())));
}

namespace {

std::vector<BranchPrediction> predict_all(std::span<const BackboneBranch> branches,
                                          double alpha) {
    std::vector<BranchPrediction> out;
    out.reserve(branches.size());
    for (const auto& b : branches) out.push_back(predict_branch(b, alpha));
    for (std::size_t b = 1; b < out.size(); ++b) {
        if (out[b].prototypes.labels() != out[0].prototypes.labels()) {
            throw EpisodeInconsistency("branch " + std::to_string(b) + " (" +
                                       branches[b].backbone_id +
                                       ") describes a different class set than branch 0");
        }
    }
    return out;
}

ProbMap combine(const std::vector<BranchPrediction>& preds, const VotingConfig& cfg) {
    const auto weights = cfg.resolved_weights(preds.size());
    if (cfg.mode == VoteMode::kPosteriorMean) {
        std::vector<ProbMap> maps;
        maps.reserve(preds.size());
        for (const auto& p : preds) maps.push_back(p.probs);
        return mix_probability_maps(maps, weights);
    }
    std::vector<ScoreMap> maps;
    maps.reserve(preds.size());
    for (const auto& p : preds) maps.push_back(p.scores);
    return mix_score_maps(maps, weights);
}

}  // namespace

ProbMap vote(std::span<const BackboneBranch> branches, const VotingConfig& cfg, double alpha) {
    cfg.resolved_weights(branches.size());
    return combine(predict_all(branches, alpha), cfg);
}

FeatureVolume l2_normalize_pixels(const FeatureVolume& volume) {
    std::vector<float> out(volume.data().begin(), volume.data().end());
    const std::size_t channels = volume.channels();
    for (std::size_t i = 0; i < volume.pixel_count(); ++i) {
        double n2 = 0.0;
        for (float v : volume.pixel(i)) n2 += static_cast<double>(v) * v;
        const double norm = std::sqrt(n2);
        if (norm < kMinVectorNorm) continue;
        for (std::size_t c = 0; c < channels; ++c) {
            out[i * channels + c] = static_cast<float>(out[i * channels + c] / norm);
        }
    }
    return FeatureVolume(volume.height(), volume.width(), channels, std::move(out));
}

BackboneBranch fuse(std::span<const BackboneBranch> branches, const FuseOptions& options) {
    if (branches.empty()) {
        throw InvalidConfig("fusion needs at least one branch");
    }
    const BackboneBranch& first = branches.front();
    for (std::size_t b = 1; b < branches.size(); ++b) {
        const auto& other = branches[b].supports;
        if (other.size() != first.supports.size()) {
            throw EpisodeInconsistency("branch " + std::to_string(b) + " has " +
                                       std::to_string(other.size()) + " support classes, expected " +
                                       std::to_string(first.supports.size()));
        }
        for (std::size_t s = 0; s < other.size(); ++s) {
            const auto& mine = first.supports[s];
            if (other[s].class_id != mine.class_id || other[s].shots.size() != mine.shots.size()) {
                throw EpisodeInconsistency("branch " + std::to_string(b) +
                                           " support set differs for class slot " +
                                           std::to_string(s));
            }
            for (std::size_t k = 0; k < mine.shots.size(); ++k) {
                if (!(other[s].shots[k].mask == mine.shots[k].mask)) {
                    throw EpisodeInconsistency("branch " + std::to_string(b) + " mask of shot " +
                                               std::to_string(k) + " for class " +
                                               std::to_string(mine.class_id) +
                                               " differs from branch 0");
                }
            }
        }
    }

    auto prepare = [&](const FeatureVolume& v) {
        return options.l2_normalize ? l2_normalize_pixels(v) : v;
    };
    auto concat_of = [&](auto&& select) {
        std::vector<FeatureVolume> parts;
        parts.reserve(branches.size());
        for (const auto& b : branches) parts.push_back(prepare(select(b)));
        return channel_concat(parts);
    };

    BackboneBranch fused{
        .backbone_id = {},
        .query = concat_of([](const BackboneBranch& b) -> const FeatureVolume& { return b.query; }),
        .supports = {},
    };
    for (std::size_t b = 0; b < branches.size(); ++b) {
        if (b > 0) fused.backbone_id += "+";
        fused.backbone_id += branches[b].backbone_id;
    }
    for (std::size_t s = 0; s < first.supports.size(); ++s) {
        ClassSupport merged{first.supports[s].class_id, {}};
        for (std::size_t k = 0; k < first.supports[s].shots.size(); ++k) {
            merged.shots.push_back(Shot{
                concat_of([&](const BackboneBranch& b) -> const FeatureVolume& {
                    return b.supports[s].shots[k].features;
                }),
                first.supports[s].shots[k].mask,
            });
        }
        fused.supports.push_back(std::move(merged));
    }
    return fused;
}

EnsemblePrediction predict_ensemble(std::span<const BackboneBranch> branches, Strategy strategy,
                                    const VotingConfig& cfg, double alpha,
                                    const FuseOptions& fuse_options) {
    if (branches.empty()) {
        throw InvalidConfig("no backbone branches to predict with");
    }
    auto finish = [](ProbMap probs, const PrototypeSet& protos) {
        DenseMask mask = indices_to_labels(argmax_decode(probs), protos);
        return EnsemblePrediction{std::move(probs), std::move(mask), protos.labels()};
    };

    switch (strategy) {
        case Strategy::kSingle: {
            if (branches.size() != 1) {
                throw InvalidConfig("strategy 'single' takes exactly one backbone, got " +
                                    std::to_string(branches.size()));
            }
            auto pred = predict_branch(branches.front(), alpha);
            return finish(std::move(pred.probs), pred.prototypes);
        }
        case Strategy::kVoting: {
            cfg.resolved_weights(branches.size());
            auto preds = predict_all(branches, alpha);
            return finish(combine(preds, cfg), preds.front().prototypes);
        }
        case Strategy::kFusion: {
            auto pred = predict_branch(fuse(branches, fuse_options), alpha);
            return finish(std::move(pred.probs), pred.prototypes);
        }
    }
    throw InvalidConfig("unknown strategy");
}

}  // namespace protoens
