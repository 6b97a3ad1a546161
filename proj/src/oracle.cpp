#include "protoens/oracle.hpp"

#include <cmath>
#include <set>

#include "protoens/error.hpp"

namespace protoens::oracle {

namespace {

double oracle_distance(std::span<const float> q, std::span<const float> p) {
    double qq = 0.0;
    double pp = 0.0;
    double qp = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) {
        qq += static_cast<double>(q[c]) * static_cast<double>(q[c]);
        pp += static_cast<double>(p[c]) * static_cast<double>(p[c]);
        qp += static_cast<double>(q[c]) * static_cast<double>(p[c]);
    }
    const double nq = std::sqrt(qq);
    const double np = std::sqrt(pp);
    if (nq < 1e-12 || np < 1e-12) return 1.0;
    double sim = qp / (nq * np);
    if (sim > 1.0) sim = 1.0;
    if (sim < -1.0) sim = -1.0;
    return 1.0 - sim;
}

// Raw per-pixel scores -alpha * d, row-major (pixel, class), in double.
std::vector<double> oracle_scores(const FeatureVolume& query, const PrototypeSet& protos,
                                  double alpha) {
    const auto& ps = protos.prototypes();
    if (query.channels() != ps.front().vector.size()) {
        throw ShapeMismatch("oracle: query/prototype channel mismatch");
    }
    std::vector<double> scores;
    for (std::size_t y = 0; y < query.height(); ++y) {
        for (std::size_t x = 0; x < query.width(); ++x) {
            for (std::size_t j = 0; j < ps.size(); ++j) {
                scores.push_back(-alpha * oracle_distance(query.pixel(y, x), ps[j].vector));
            }
        }
    }
    return scores;
}

std::vector<float> oracle_softmax_rows(const std::vector<double>& scores, std::size_t classes) {
    std::vector<float> out(scores.size());
    for (std::size_t base = 0; base < scores.size(); base += classes) {
        double m = scores[base];
        for (std::size_t j = 1; j < classes; ++j) {
            if (scores[base + j] > m) m = scores[base + j];
        }
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(scores[base + j] - m);
        for (std::size_t j = 0; j < classes; ++j) {
            out[base + j] = static_cast<float>(std::exp(scores[base + j] - m) / z);
        }
    }
    return out;
}

}  // namespace

ProbMap oracle_predict(const FeatureVolume& query, const PrototypeSet& protos, double alpha) {
    if (!(alpha > 0.0)) throw InvalidArgument("oracle: alpha must be positive");
    const auto scores = oracle_scores(query, protos, alpha);
    return ProbMap(query.height(), query.width(), protos.size(),
                   oracle_softmax_rows(scores, protos.size()));
}

double oracle_iou(const DenseMask& pred, const DenseMask& gt, std::uint8_t c) {
    if (!pred.same_shape(gt)) throw ShapeMismatch("oracle_iou: shape mismatch");
    std::set<std::size_t> predicted;
    std::set<std::size_t> truth;
    for (std::size_t y = 0; y < gt.height(); ++y) {
        for (std::size_t x = 0; x < gt.width(); ++x) {
            const std::size_t i = y * gt.width() + x;
            if (gt.at(y, x) == kIgnoreLabel) continue;
            if (pred.at(y, x) == c) predicted.insert(i);
            if (gt.at(y, x) == c) truth.insert(i);
        }
    }
    std::set<std::size_t> both;
    std::set<std::size_t> either = truth;
    for (auto i : predicted) {
        if (truth.contains(i)) both.insert(i);
        either.insert(i);
    }
    if (either.empty()) return 0.0;
    return static_cast<double>(both.size()) / static_cast<double>(either.size());
}

std::vector<double> oracle_masked_average_pool(std::span<const Shot> shots,
                                               std::uint8_t class_id) {
    const std::size_t channels = shots.front().features.channels();
    std::vector<double> total(channels, 0.0);
    int shots_used = 0;
    for (const Shot& shot : shots) {
        std::vector<double> sum(channels, 0.0);
        long n = 0;
        for (std::size_t y = 0; y < shot.mask.height(); ++y) {
            for (std::size_t x = 0; x < shot.mask.width(); ++x) {
                if (shot.mask.at(y, x) != class_id) continue;
                for (std::size_t c = 0; c < channels; ++c) sum[c] += shot.features.at(y, x, c);
                ++n;
            }
        }
        if (n == 0) continue;
        for (std::size_t c = 0; c < channels; ++c) total[c] += sum[c] / static_cast<double>(n);
        ++shots_used;
    }
    if (shots_used == 0) throw EmptyClass("oracle: class absent from every shot");
    for (double& t : total) t /= shots_used;
    return total;
}

std::vector<double> oracle_background_prototype(std::span<const ClassSupport> supports) {
    std::set<std::uint8_t> classes;
    for (const auto& s : supports) classes.insert(s.class_id);
    const std::size_t channels = supports.front().shots.front().features.channels();
    std::vector<double> total(channels, 0.0);
    int images = 0;
    for (const auto& s : supports) {
        for (const Shot& shot : s.shots) {
            std::vector<double> sum(channels, 0.0);
            long n = 0;
            for (std::size_t y = 0; y < shot.mask.height(); ++y) {
                for (std::size_t x = 0; x < shot.mask.width(); ++x) {
                    const auto l = shot.mask.at(y, x);
                    if (l == kIgnoreLabel || classes.contains(l)) continue;
                    for (std::size_t c = 0; c < channels; ++c) sum[c] += shot.features.at(y, x, c);
                    ++n;
                }
            }
            if (n == 0) throw EmptyClass("oracle: support image without background");
            for (std::size_t c = 0; c < channels; ++c) total[c] += sum[c] / static_cast<double>(n);
            ++images;
        }
    }
    for (double& t : total) t /= images;
    return total;
}

PrototypeSet oracle_prototypes(std::span<const ClassSupport> supports) {
    std::vector<Prototype> out;
    const auto bg = oracle_background_prototype(supports);
    out.push_back({kBackgroundLabel, std::vector<float>(bg.begin(), bg.end())});
    for (const auto& s : supports) {
        const auto p = oracle_masked_average_pool(s.shots, s.class_id);
        out.push_back({s.class_id, std::vector<float>(p.begin(), p.end())});
    }
    return PrototypeSet(std::move(out));
}

ProbMap oracle_vote(std::span<const BackboneBranch> branches, std::span<const double> weights,
                    VoteMode mode, double alpha) {
    if (branches.size() != weights.size()) throw InvalidConfig("oracle: weight count");
    std::vector<double> mixed;
    std::size_t classes = 0;
    for (std::size_t b = 0; b < branches.size(); ++b) {
        const PrototypeSet protos = oracle_prototypes(branches[b].supports);
        classes = protos.size();
        const auto scores = oracle_scores(branches[b].query, protos, alpha);
        if (mixed.empty()) mixed.assign(scores.size(), 0.0);
        if (mode == VoteMode::kPosteriorMean) {
            const auto probs = oracle_softmax_rows(scores, classes);
            for (std::size_t i = 0; i < probs.size(); ++i) mixed[i] += weights[b] * probs[i];
        } else {
            for (std::size_t i = 0; i < scores.size(); ++i) {
                mixed[i] += weights[b] * static_cast<float>(scores[i]);
            }
        }
    }
    const auto& q = branches.front().query;
    if (mode == VoteMode::kPosteriorMean) {
        return ProbMap(q.height(), q.width(), classes, std::vector<float>(mixed.begin(), mixed.end()));
    }
    return ProbMap(q.height(), q.width(), classes, oracle_softmax_rows(mixed, classes));
}

namespace {

FeatureVolume oracle_concat(std::span<const BackboneBranch> branches,
                            const FeatureVolume& (*select)(const BackboneBranch&, std::size_t,
                                                           std::size_t),
                            std::size_t s, std::size_t k) {
    const FeatureVolume& first = select(branches[0], s, k);
    std::size_t channels = 0;
    for (const auto& b : branches) channels += select(b, s, k).channels();
    std::vector<float> data;
    for (std::size_t y = 0; y < first.height(); ++y) {
        for (std::size_t x = 0; x < first.width(); ++x) {
            for (const auto& b : branches) {
                const FeatureVolume& v = select(b, s, k);
                for (std::size_t c = 0; c < v.channels(); ++c) data.push_back(v.at(y, x, c));
            }
        }
    }
    return FeatureVolume(first.height(), first.width(), channels, std::move(data));
}

}  // namespace

ProbMap oracle_fuse_predict(std::span<const BackboneBranch> branches, double alpha) {
    const FeatureVolume query = oracle_concat(
        branches,
        [](const BackboneBranch& b, std::size_t, std::size_t) -> const FeatureVolume& {
            return b.query;
        },
        0, 0);
    std::vector<ClassSupport> supports;
    for (std::size_t s = 0; s < branches[0].supports.size(); ++s) {
        ClassSupport cs{branches[0].supports[s].class_id, {}};
        for (std::size_t k = 0; k < branches[0].supports[s].shots.size(); ++k) {
            cs.shots.push_back(Shot{
                oracle_concat(
                    branches,
                    [](const BackboneBranch& b, std::size_t si, std::size_t ki)
                        -> const FeatureVolume& { return b.supports[si].shots[ki].features; },
                    s, k),
                branches[0].supports[s].shots[k].mask});
        }
        supports.push_back(std::move(cs));
    }
    return oracle_predict(query, oracle_prototypes(supports), alpha);
}

}  // namespace protoens::oracle
