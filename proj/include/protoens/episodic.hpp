#pragma once

// Fold partitions, episode sampling and fold-level evaluation runs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protoens/ensemble.hpp"
#include "protoens/error.hpp"
#include "protoens/manifest.hpp"
#include "protoens/metrics.hpp"
#include "protoens/random.hpp"

namespace protoens {

inline constexpr std::size_t kFoldCount = 4;

struct FoldSpec {
    std::size_t fold_index = 0;
    std::vector<std::uint8_t> train_classes;
    std::vector<std::uint8_t> test_classes;
};

/// Four folds over class ids 1..class_count; fold i tests the i-th quarter
/// in ascending id order. Throws InvalidArgument unless class_count is a
/// positive multiple of four.
std::vector<FoldSpec> build_folds(int class_count);

struct RunConfig {
    std::size_t n_episodes = 1000;
    std::uint64_t seed = 0;
    std::size_t n_way = 1;
    std::size_t k_shot = 1;
    // Independent seeded runs per fold; their mIoUs are averaged.
    std::size_t repeats = 1;
    // Backbones to use, in order. Empty means every manifest backbone.
    std::vector<std::string> backbones;
    Strategy strategy = Strategy::kVoting;
    VotingConfig voting;
    FuseOptions fusion;
    double alpha = kDefaultAlpha;
    bool include_background = false;
    // Worker threads; 0 reads PROTOENS_THREADS, then falls back to the
    // hardware concurrency. Never affects results.
    std::size_t threads = 0;
    // Directory for predicted query masks, one PNG per episode.
    std::optional<std::filesystem::path> dump_masks;
};

/// Which images make up one episode. Support images of class_set[i] are
/// support_images[i]; the query is annotated with class_set[0].
struct EpisodePlan {
    std::vector<std::uint8_t> class_set;
    std::vector<std::vector<std::size_t>> support_images;
    std::size_t query_image = 0;
};

/// A loaded episode in local label space: class_set[i] is label i + 1,
/// every other non-ignore pixel is background.
struct Episode {
    EpisodePlan plan;
    std::vector<BackboneBranch> branches;
    DenseMask query_gt;

    /// Local labels back to manifest class ids.
    DenseMask to_global(const DenseMask& local) const;
};

using ClassIndex = std::map<std::uint8_t, std::vector<std::size_t>>;

/// Throws DatasetTooSmall naming the first test class with fewer than
/// k_shot + 1 images.
void check_fold_coverage(const ClassIndex& index, const FoldSpec& fold, const RunConfig& cfg);

EpisodePlan plan_episode(const ClassIndex& index, const FoldSpec& fold, const RunConfig& cfg,
                         Rng& rng);

/// Loads features for `backbones`, resized to each image's mask grid.
Episode load_episode(const Manifest& manifest, const EpisodePlan& plan,
                     const std::vector<std::string>& backbones);

Episode sample_episode(const Manifest& manifest, const FoldSpec& fold, const RunConfig& cfg,
                       Rng& rng);

struct FoldReport {
    std::size_t fold_index = 0;
    // Reported classes (fold test classes, plus 0 with include_background).
    std::vector<std::uint8_t> classes;
    std::vector<double> per_class_iou;
    double miou = 0.0;
    std::vector<double> repeat_miou;
    std::size_t episodes = 0;
    std::uint64_t seed = 0;
    ConfusionCounts counts;
    RunConfig config;
    std::vector<std::string> backbones;
};

/// Thrown when one episode of a run fails; wraps the original message.
class EpisodeFailure : public Error {
public:
    EpisodeFailure(std::size_t index, const std::string& what)
        : Error("episode " + std::to_string(index) + ": " + what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Backbones the run will use; throws InvalidConfig for unknown ids or a
/// strategy/backbone-count combination that cannot work.
std::vector<std::string> resolve_backbones(const Manifest& manifest, const RunConfig& cfg);

/// Seed for repeat `repeat` of fold `fold_index`.
std::uint64_t episode_stream_seed(std::uint64_t seed, std::size_t fold_index, std::size_t repeat);

std::size_t resolve_threads(std::size_t requested);

/// Confusion counts accumulate across all episodes of a repeat and IoU is
/// taken once at the end.
FoldReport run_evaluation(const Manifest& manifest, const FoldSpec& fold, const RunConfig& cfg);

}  // namespace protoens
