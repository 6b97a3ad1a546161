#include "protoens/episodic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "protoens/io.hpp"

namespace protoens {

std::vector<FoldSpec> build_folds(int class_count) {
    if (class_count <= 0 || class_count % static_cast<int>(kFoldCount) != 0) {
        throw InvalidArgument("build_folds: class count " + std::to_string(class_count) +
                              " is not a positive multiple of 4");
    }
    if (class_count > 254) {
        throw InvalidArgument("build_folds: at most 254 classes fit an 8-bit mask");
    }
    const int per_fold = class_count / static_cast<int>(kFoldCount);
    std::vector<FoldSpec> folds(kFoldCount);
    for (std::size_t i = 0; i < kFoldCount; ++i) {
        folds[i].fold_index = i;
        const int lo = static_cast<int>(i) * per_fold + 1;
        const int hi = lo + per_fold;
        for (int c = 1; c <= class_count; ++c) {
            auto& dst = (c >= lo && c < hi) ? folds[i].test_classes : folds[i].train_classes;
            dst.push_back(static_cast<std::uint8_t>(c));
        }
    }
    return folds;
}

DenseMask Episode::to_global(const DenseMask& local) const {
    std::vector<std::uint8_t> out(local.pixel_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto l = local.at(i);
        if (l == kIgnoreLabel || l == kBackgroundLabel) {
            out[i] = l;
        } else if (l <= plan.class_set.size()) {
            out[i] = plan.class_set[l - 1];
        } else {
            throw InvalidArgument("local label " + std::to_string(l) + " outside a " +
                                  std::to_string(plan.class_set.size()) + "-way episode");
        }
    }
    return DenseMask(local.height(), local.width(), std::move(out));
}

void check_fold_coverage(const ClassIndex& index, const FoldSpec& fold, const RunConfig& cfg) {
    for (auto c : fold.test_classes) {
        const auto it = index.find(c);
        const std::size_t have = it == index.end() ? 0 : it->second.size();
        if (have < cfg.k_shot + 1) {
            throw DatasetTooSmall("class " + std::to_string(c) + " has " + std::to_string(have) +
                                      " annotated images; a " + std::to_string(cfg.k_shot) +
                                      "-shot episode needs at least " +
                                      std::to_string(cfg.k_shot + 1),
                                  c);
        }
    }
}

namespace {

// Moves `count` uniformly chosen elements of `pool` to its front.
template <typename T>
void partial_shuffle(std::vector<T>& pool, std::size_t count, Rng& rng) {
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + uniform_index(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
}

}  // namespace

EpisodePlan plan_episode(const ClassIndex& index, const FoldSpec& fold, const RunConfig& cfg,
                         Rng& rng) {
    if (cfg.n_way == 0 || cfg.n_way > fold.test_classes.size()) {
        throw InvalidConfig("n_way must be in [1, " + std::to_string(fold.test_classes.size()) +
                            "] for fold " + std::to_string(fold.fold_index));
    }
    if (cfg.k_shot == 0) {
        throw InvalidConfig("k_shot must be at least 1");
    }

    EpisodePlan plan;
    std::vector<std::uint8_t> classes = fold.test_classes;
    partial_shuffle(classes, cfg.n_way, rng);
    plan.class_set.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(cfg.n_way));

    auto images_of = [&](std::uint8_t c) -> const std::vector<std::size_t>& {
        static const std::vector<std::size_t> none;
        const auto it = index.find(c);
        return it == index.end() ? none : it->second;
    };

    const auto& query_pool = images_of(plan.class_set.front());
    if (query_pool.size() < cfg.k_shot + 1) {
        throw DatasetTooSmall("class " + std::to_string(plan.class_set.front()) + " has only " +
                                  std::to_string(query_pool.size()) + " annotated images",
                              plan.class_set.front());
    }
    plan.query_image = query_pool[uniform_index(rng, query_pool.size())];

    for (auto c : plan.class_set) {
        std::vector<std::size_t> pool;
        for (auto i : images_of(c)) {
            if (i != plan.query_image) pool.push_back(i);
        }
        if (pool.size() < cfg.k_shot) {
            throw DatasetTooSmall("class " + std::to_string(c) + " has only " +
                                      std::to_string(pool.size()) +
                                      " images besides the query",
                                  c);
        }
        partial_shuffle(pool, cfg.k_shot, rng);
        pool.resize(cfg.k_shot);
        plan.support_images.push_back(std::move(pool));
    }
    return plan;
}

namespace {

DenseMask relabel(const DenseMask& mask, const std::vector<std::uint8_t>& keep_global,
                  const std::vector<std::uint8_t>& as_local) {
    std::vector<std::uint8_t> out(mask.pixel_count(), kBackgroundLabel);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto l = mask.at(i);
        if (l == kIgnoreLabel) {
            out[i] = kIgnoreLabel;
            continue;
        }
        for (std::size_t j = 0; j < keep_global.size(); ++j) {
            if (l == keep_global[j]) {
                out[i] = as_local[j];
                break;
            }
        }
    }
    return DenseMask(mask.height(), mask.width(), std::move(out));
}

FeatureVolume load_aligned(const Manifest& manifest, std::size_t image, const std::string& backbone,
                           const DenseMask& mask) {
    const auto v = read_fvol(manifest.resolve(manifest.images[image].features.at(backbone)));
    return bilinear_resize(v, mask.height(), mask.width());
}

}  // namespace

Episode load_episode(const Manifest& manifest, const EpisodePlan& plan,
                     const std::vector<std::string>& backbones) {
    std::vector<std::uint8_t> local(plan.class_set.size());
    for (std::size_t i = 0; i < local.size(); ++i) local[i] = static_cast<std::uint8_t>(i + 1);

    const DenseMask query_raw = read_mask(manifest.resolve(manifest.images[plan.query_image].mask));
    Episode ep{plan, {}, relabel(query_raw, plan.class_set, local)};

    // Support masks per class slot, relabelled to that slot's class only.
    std::vector<std::vector<DenseMask>> support_masks(plan.class_set.size());
    for (std::size_t s = 0; s < plan.class_set.size(); ++s) {
        for (auto img : plan.support_images[s]) {
            const DenseMask raw = read_mask(manifest.resolve(manifest.images[img].mask));
            support_masks[s].push_back(relabel(raw, {plan.class_set[s]}, {local[s]}));
        }
    }

    for (const auto& b : backbones) {
        BackboneBranch branch{b, load_aligned(manifest, plan.query_image, b, ep.query_gt), {}};
        for (std::size_t s = 0; s < plan.class_set.size(); ++s) {
            ClassSupport cs{local[s], {}};
            for (std::size_t k = 0; k < plan.support_images[s].size(); ++k) {
                const auto& mask = support_masks[s][k];
                cs.shots.push_back(
                    Shot{load_aligned(manifest, plan.support_images[s][k], b, mask), mask});
            }
            branch.supports.push_back(std::move(cs));
        }
        ep.branches.push_back(std::move(branch));
    }
    return ep;
}

Episode sample_episode(const Manifest& manifest, const FoldSpec& fold, const RunConfig& cfg,
                       Rng& rng) {
    const auto index = images_by_class(manifest);
    check_fold_coverage(index, fold, cfg);
    return load_episode(manifest, plan_episode(index, fold, cfg, rng),
                        resolve_backbones(manifest, cfg));
}

std::vector<std::string> resolve_backbones(const Manifest& manifest, const RunConfig& cfg) {
    std::vector<std::string> out = cfg.backbones.empty() ? manifest.backbones : cfg.backbones;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!manifest.has_backbone(out[i])) {
            throw InvalidConfig("backbone \"" + out[i] + "\" is not in the manifest");
        }
        if (std::find(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(i), out[i]) !=
            out.begin() + static_cast<std::ptrdiff_t>(i)) {
            throw InvalidConfig("backbone \"" + out[i] + "\" listed twice");
        }
    }
    if (cfg.strategy == Strategy::kSingle && out.size() != 1) {
        throw InvalidConfig("strategy 'single' takes exactly one backbone, got " +
                            std::to_string(out.size()));
    }
    return out;
}

std::uint64_t episode_stream_seed(std::uint64_t seed, std::size_t fold_index, std::size_t repeat) {
    return derive_seed(seed, fold_index, repeat);
}

std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("PROTOENS_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

FoldReport run_evaluation(const Manifest& manifest, const FoldSpec& fold, const RunConfig& cfg) {
    if (cfg.n_episodes == 0) throw InvalidConfig("n_episodes must be at least 1");
    if (cfg.repeats == 0) throw InvalidConfig("repeats must be at least 1");
    if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha)) {
        throw InvalidConfig("alpha must be a positive finite number");
    }
    const auto backbones = resolve_backbones(manifest, cfg);
    if (cfg.strategy == Strategy::kVoting) cfg.voting.resolved_weights(backbones.size());
    if (cfg.n_way == 0 || cfg.n_way > fold.test_classes.size()) {
        throw InvalidConfig("n_way must be in [1, " + std::to_string(fold.test_classes.size()) + "]");
    }
    if (cfg.k_shot == 0) throw InvalidConfig("k_shot must be at least 1");

    const auto index = images_by_class(manifest);
    check_fold_coverage(index, fold, cfg);
    if (cfg.dump_masks) std::filesystem::create_directories(*cfg.dump_masks);

    FoldReport report;
    report.fold_index = fold.fold_index;
    report.episodes = cfg.n_episodes;
    report.seed = cfg.seed;
    report.config = cfg;
    report.backbones = backbones;
    if (cfg.include_background) report.classes.push_back(kBackgroundLabel);
    report.classes.insert(report.classes.end(), fold.test_classes.begin(), fold.test_classes.end());
    report.per_class_iou.assign(report.classes.size(), 0.0);

    const std::size_t workers = std::min(resolve_threads(cfg.threads), cfg.n_episodes);

    for (std::size_t r = 0; r < cfg.repeats; ++r) {
        Rng rng(episode_stream_seed(cfg.seed, fold.fold_index, r));
        std::vector<EpisodePlan> plans;
        plans.reserve(cfg.n_episodes);
        for (std::size_t e = 0; e < cfg.n_episodes; ++e) {
            plans.push_back(plan_episode(index, fold, cfg, rng));
        }

        std::vector<ConfusionCounts> partial(workers);
        std::atomic<std::size_t> next{0};
        std::atomic<std::size_t> first_failure{cfg.n_episodes};
        std::mutex failure_mutex;
        std::map<std::size_t, std::string> failures;

        auto work = [&](std::size_t w) {
            for (;;) {
                const std::size_t e = next.fetch_add(1);
                if (e >= plans.size() || e > first_failure.load()) return;
                try {
                    const Episode ep = load_episode(manifest, plans[e], backbones);
                    const auto pred = predict_ensemble(ep.branches, cfg.strategy, cfg.voting,
                                                       cfg.alpha, cfg.fusion);
                    const DenseMask pred_global = ep.to_global(pred.mask);
                    std::vector<std::uint8_t> tracked = ep.plan.class_set;
                    if (cfg.include_background) tracked.push_back(kBackgroundLabel);
                    accumulate(partial[w], pred_global, ep.to_global(ep.query_gt), tracked);
                    if (cfg.dump_masks) {
                        char name[64];
                        if (r == 0) {
                            std::snprintf(name, sizeof name, "fold%zu_ep%05zu.png", fold.fold_index, e);
                        } else {
                            std::snprintf(name, sizeof name, "fold%zu_rep%zu_ep%05zu.png",
                                          fold.fold_index, r, e);
                        }
                        write_mask(pred_global, *cfg.dump_masks / name);
                    }
                } catch (const std::exception& ex) {
                    std::lock_guard lock(failure_mutex);
                    failures.emplace(e, ex.what());
                    std::size_t cur = first_failure.load();
                    while (e < cur && !first_failure.compare_exchange_weak(cur, e)) {
                    }
                }
            }
        };

        if (workers <= 1) {
            work(0);
        } else {
            std::vector<std::jthread> pool;
            pool.reserve(workers);
            for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        }
        if (!failures.empty()) {
            const auto& [idx, msg] = *failures.begin();
            throw EpisodeFailure(idx, msg);
        }

        ConfusionCounts counts;
        for (const auto& p : partial) counts.merge(p);
        report.counts.merge(counts);

        std::vector<double> ious;
        for (auto c : report.classes) ious.push_back(iou(counts, c));
        for (std::size_t i = 0; i < ious.size(); ++i) report.per_class_iou[i] += ious[i];
        report.repeat_miou.push_back(miou(ious));
    }

    for (double& v : report.per_class_iou) v /= static_cast<double>(cfg.repeats);
    report.miou = miou(report.repeat_miou);
    return report;
}

}  // namespace protoens
