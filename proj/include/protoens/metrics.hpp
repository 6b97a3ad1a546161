#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protoens/tensor.hpp"

namespace protoens {

struct ClassCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Per-class pixel confusion counts. True negatives are not tracked since
/// IoU never uses them.
class ConfusionCounts {
public:
    const ClassCounts& operator[](std::uint8_t c) const noexcept { return counts_[c]; }
    ClassCounts& operator[](std::uint8_t c) noexcept { return counts_[c]; }

    /// Adds `other` into this; order of merges never changes the totals.
    ConfusionCounts& merge(const ConfusionCounts& other) noexcept;

    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;

private:
    std::array<ClassCounts, 256> counts_{};
};

/// Updates tp/fp/fn for every class in `class_set` from one prediction.
/// Pixels whose ground truth is the ignore label contribute nothing.
/// Background participates only if 0 is in `class_set`.
void accumulate(ConfusionCounts& counts, const DenseMask& pred, const DenseMask& gt,
                std::span<const std::uint8_t> class_set);

/// tp / (tp + fp + fn), and 0 when the denominator is 0.
double iou(const ConfusionCounts& counts, std::uint8_t c);

/// Arithmetic mean. Throws InvalidArgument on an empty list. Also used for
/// the cross-fold mean.
double miou(std::span<const double> per_class_iou);

/// 100 * (candidate - baseline) / baseline, rounded half away from zero to
/// two decimals. Throws InvalidArgument for a non-positive baseline.
double relative_improvement(double candidate, double baseline);

/// "+7.37%" style rendering of relative_improvement.
std::string format_relative_improvement(double percentage);

}  // namespace protoens
