#include "protoens/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "protoens/error.hpp"

namespace protoens {

ConfusionCounts& ConfusionCounts::merge(const ConfusionCounts& other) noexcept {
    for (std::size_t c = 0; c < counts_.size(); ++c) {
        counts_[c].tp += other.counts_[c].tp;
        counts_[c].fp += other.counts_[c].fp;
        counts_[c].fn += other.counts_[c].fn;
    }
    return *this;
}

void accumulate(ConfusionCounts& counts, const DenseMask& pred, const DenseMask& gt,
                std::span<const std::uint8_t> class_set) {
    if (!pred.same_shape(gt)) {
        throw ShapeMismatch("prediction is " + std::to_string(pred.height()) + "x" +
                            std::to_string(pred.width()) + " but ground truth is " +
                            std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
    }
    std::array<bool, 256> tracked{};
    for (auto c : class_set) {
        if (c != kIgnoreLabel) tracked[c] = true;
    }
    for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        const std::uint8_t g = gt.at(i);
        if (g == kIgnoreLabel) continue;
        const std::uint8_t p = pred.at(i);
        if (p == g) {
            if (tracked[g]) ++counts[g].tp;
            continue;
        }
        if (tracked[p]) ++counts[p].fp;
        if (tracked[g]) ++counts[g].fn;
    }
}

double iou(const ConfusionCounts& counts, std::uint8_t c) {
    const auto& k = counts[c];
    const std::uint64_t denom = k.tp + k.fp + k.fn;
    if (denom == 0) return 0.0;
    return static_cast<double>(k.tp) / static_cast<double>(denom);
}

double miou(std::span<const double> per_class_iou) {
    if (per_class_iou.empty()) {
        throw InvalidArgument("miou: empty class list");
    }
    return std::accumulate(per_class_iou.begin(), per_class_iou.end(), 0.0) /
           static_cast<double>(per_class_iou.size());
}

double relative_improvement(double candidate, double baseline) {
    if (!(baseline > 0.0)) {
        throw InvalidArgument("relative_improvement: baseline must be positive");
    }
    const double pct = 100.0 * (candidate - baseline) / baseline;
    return std::round(pct * 100.0) / 100.0;
}

std::string format_relative_improvement(double percentage) {
    char buf[32];
    // + 0.0 folds a rounded -0.00 into +0.00.
    std::snprintf(buf, sizeof buf, "%+.2f%%", percentage + 0.0);
    return buf;
}

}  // namespace protoens
