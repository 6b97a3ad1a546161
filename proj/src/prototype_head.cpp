#include "protoens/prototype_head.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "protoens/error.hpp"

namespace protoens {

namespace {

void check_aligned(const Shot& shot, std::size_t index) {
    if (shot.features.height() != shot.mask.height() ||
        shot.features.width() != shot.mask.width()) {
        throw ShapeMismatch("support shot " + std::to_string(index) + ": features are " +
                            std::to_string(shot.features.height()) + "x" +
                            std::to_string(shot.features.width()) + " but mask is " +
                            std::to_string(shot.mask.height()) + "x" +
                            std::to_string(shot.mask.width()) +
                            "; resize features to the mask grid first");
    }
}

// Spatial mean of feature vectors at pixels selected by `keep`; returns the
// selected pixel count through `count`.
template <typename Keep>
std::vector<double> masked_mean(const Shot& shot, Keep keep, std::size_t& count) {
    const std::size_t channels = shot.features.channels();
    std::vector<double> sum(channels, 0.0);
    count = 0;
    for (std::size_t i = 0; i < shot.mask.pixel_count(); ++i) {
        if (!keep(shot.mask.at(i))) continue;
        const auto px = shot.features.pixel(i);
        for (std::size_t c = 0; c < channels; ++c) sum[c] += px[c];
        ++count;
    }
    if (count > 0) {
        for (double& s : sum) s /= static_cast<double>(count);
    }
    return sum;
}

std::vector<float> to_float(const std::vector<double>& v) {
    return {v.begin(), v.end()};
}

}  // namespace

PrototypeSet::PrototypeSet(std::vector<Prototype> prototypes)
    : prototypes_(std::move(prototypes)) {
    if (prototypes_.empty()) {
        throw InvalidArgument("prototype set is empty");
    }
    std::sort(prototypes_.begin(), prototypes_.end(),
              [](const Prototype& a, const Prototype& b) { return a.class_id < b.class_id; });
    if (prototypes_.front().class_id != kBackgroundLabel) {
        throw InvalidArgument("prototype set has no background prototype");
    }
    const std::size_t dim = prototypes_.front().vector.size();
    if (dim == 0) {
        throw InvalidArgument("prototype vectors must be non-empty");
    }
    for (std::size_t i = 0; i < prototypes_.size(); ++i) {
        const auto& p = prototypes_[i];
        if (i > 0 && p.class_id == prototypes_[i - 1].class_id) {
            throw InvalidArgument("duplicate prototype for class " + std::to_string(p.class_id));
        }
        if (p.class_id == kIgnoreLabel) {
            throw InvalidArgument("the ignore label cannot have a prototype");
        }
        if (p.vector.size() != dim) {
            throw ShapeMismatch("prototype for class " + std::to_string(p.class_id) +
                                " has length " + std::to_string(p.vector.size()) +
                                ", expected " + std::to_string(dim));
        }
        if (!std::all_of(p.vector.begin(), p.vector.end(),
                         [](float v) { return std::isfinite(v); })) {
            throw InvalidArgument("prototype for class " + std::to_string(p.class_id) +
                                  " has a non-finite value");
        }
        labels_.push_back(p.class_id);
    }
}

Prototype masked_average_pool(std::span<const Shot> shots, std::uint8_t class_id) {
    if (shots.empty()) {
        throw EmptyClass("masked_average_pool: no support shots for class " +
                         std::to_string(class_id));
    }
    const std::size_t channels = shots.front().features.channels();
    std::vector<double> acc(channels, 0.0);
    std::size_t contributing = 0;
    for (std::size_t k = 0; k < shots.size(); ++k) {
        check_aligned(shots[k], k);
        if (shots[k].features.channels() != channels) {
            throw ShapeMismatch("support shot " + std::to_string(k) + " has " +
                                std::to_string(shots[k].features.channels()) +
                                " channels, expected " + std::to_string(channels));
        }
        std::size_t count = 0;
        const auto mean = masked_mean(
            shots[k], [class_id](std::uint8_t l) { return l == class_id; }, count);
        if (count == 0) continue;
        for (std::size_t c = 0; c < channels; ++c) acc[c] += mean[c];
        ++contributing;
    }
    if (contributing == 0) {
        throw EmptyClass("class " + std::to_string(class_id) +
                         " is absent from every support mask");
    }
    for (double& a : acc) a /= static_cast<double>(contributing);
    return {class_id, to_float(acc)};
}

Prototype background_prototype(std::span<const ClassSupport> supports) {
    std::set<std::uint8_t> episode_classes;
    for (const auto& s : supports) episode_classes.insert(s.class_id);

    auto is_background = [&](std::uint8_t l) {
        return l != kIgnoreLabel && !episode_classes.contains(l);
    };

    std::vector<double> acc;
    std::size_t terms = 0;
    for (const auto& s : supports) {
        for (std::size_t k = 0; k < s.shots.size(); ++k) {
            const Shot& shot = s.shots[k];
            check_aligned(shot, k);
            if (acc.empty()) acc.assign(shot.features.channels(), 0.0);
            if (shot.features.channels() != acc.size()) {
                throw ShapeMismatch("support shot " + std::to_string(k) + " of class " +
                                    std::to_string(s.class_id) + " has " +
                                    std::to_string(shot.features.channels()) +
                                    " channels, expected " + std::to_string(acc.size()));
            }
            std::size_t count = 0;
            const auto mean = masked_mean(shot, is_background, count);
            if (count == 0) {
                throw EmptyClass("support shot " + std::to_string(k) + " of class " +
                                 std::to_string(s.class_id) + " has no background pixel");
            }
            for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += mean[c];
            ++terms;
        }
    }
    if (terms == 0) {
        throw EmptyClass("background_prototype: no support images");
    }
    for (double& a : acc) a /= static_cast<double>(terms);
    return {kBackgroundLabel, to_float(acc)};
}

PrototypeSet build_prototypes(std::span<const ClassSupport> supports) {
    std::vector<Prototype> protos;
    protos.reserve(supports.size() + 1);
    protos.push_back(background_prototype(supports));
    for (const auto& s : supports) {
        if (s.class_id == kBackgroundLabel || s.class_id == kIgnoreLabel) {
            throw InvalidArgument("episode class id " + std::to_string(s.class_id) +
                                  " is reserved");
        }
        protos.push_back(masked_average_pool(s.shots, s.class_id));
    }
    return PrototypeSet(std::move(protos));
}

ScoreMap predict_score_map(const FeatureVolume& query, const PrototypeSet& protos,
                           double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw InvalidArgument("alpha must be a positive finite number");
    }
    if (query.channels() != protos.dim()) {
        throw ShapeMismatch("query has " + std::to_string(query.channels()) +
                            " channels but prototypes have length " +
                            std::to_string(protos.dim()));
    }
    const std::size_t channels = query.channels();
    const std::size_t classes = protos.size();

    // Unit prototypes, row-major (class, channel); degenerate ones flagged.
    std::vector<double> unit(classes * channels, 0.0);
    std::vector<bool> degenerate(classes, false);
    for (std::size_t j = 0; j < classes; ++j) {
        const auto& v = protos.prototypes()[j].vector;
        double n2 = 0.0;
        for (float x : v) n2 += static_cast<double>(x) * x;
        const double norm = std::sqrt(n2);
        degenerate[j] = norm < kMinVectorNorm;
        if (degenerate[j]) continue;
        for (std::size_t c = 0; c < channels; ++c) unit[j * channels + c] = v[c] / norm;
    }

    std::vector<float> scores(query.pixel_count() * classes);
    std::vector<double> dots(classes);
    for (std::size_t i = 0; i < query.pixel_count(); ++i) {
        const auto px = query.pixel(i);
        double n2 = 0.0;
        std::fill(dots.begin(), dots.end(), 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
            const double q = px[c];
            n2 += q * q;
            for (std::size_t j = 0; j < classes; ++j) dots[j] += q * unit[j * channels + c];
        }
        const double norm = std::sqrt(n2);
        float* out = scores.data() + i * classes;
        for (std::size_t j = 0; j < classes; ++j) {
            double distance = 1.0;
            if (norm >= kMinVectorNorm && !degenerate[j]) {
                distance = 1.0 - std::clamp(dots[j] / norm, -1.0, 1.0);
            }
            out[j] = static_cast<float>(-alpha * distance);
        }
    }
    return ScoreMap(query.height(), query.width(), classes, std::move(scores));
}

ProbMap predict_probability_map(const FeatureVolume& query, const PrototypeSet& protos,
                                double alpha) {
    return softmax_map(predict_score_map(query, protos, alpha));
}

DenseMask indices_to_labels(const DenseMask& indices, const PrototypeSet& protos) {
    const auto& labels = protos.labels();
    std::vector<std::uint8_t> out(indices.pixel_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto idx = indices.at(i);
        if (idx >= labels.size()) {
            throw InvalidArgument("class index " + std::to_string(idx) +
                                  " outside the prototype set");
        }
        out[i] = labels[idx];
    }
    return DenseMask(indices.height(), indices.width(), std::move(out));
}

DenseMask predict_mask(const FeatureVolume& query, const PrototypeSet& protos, double alpha) {
    return indices_to_labels(argmax_decode(predict_probability_map(query, protos, alpha)),
                             protos);
}

}  // namespace protoens
