#pragma once

// Dense tensor primitives shared by the prototype head, the ensembles and
// the evaluation harness. Storage is always float32, row-major
// (row, column, channel); reductions accumulate in double.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace protoens {

inline constexpr std::uint8_t kBackgroundLabel = 0;
inline constexpr std::uint8_t kIgnoreLabel = 255;

// Degenerate-norm threshold used by cosine_distance.
inline constexpr double kMinVectorNorm = 1e-12;

/// H x W x C embedding grid produced by one backbone for one image.
class FeatureVolume {
public:
    /// Throws InvalidArgument on zero dimensions, a length mismatch, or a
    /// non-finite value.
    FeatureVolume(std::size_t height, std::size_t width, std::size_t channels,
                  std::vector<float> data);

    static FeatureVolume filled(std::size_t height, std::size_t width, std::size_t channels,
                                float value);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t pixel_count() const noexcept { return height_ * width_; }

    std::span<const float> data() const noexcept { return data_; }

    /// Feature vector at (row, col).
    std::span<const float> pixel(std::size_t row, std::size_t col) const noexcept {
        return {data_.data() + (row * width_ + col) * channels_, channels_};
    }
    std::span<const float> pixel(std::size_t index) const noexcept {
        return {data_.data() + index * channels_, channels_};
    }

    float at(std::size_t row, std::size_t col, std::size_t channel) const noexcept {
        return data_[(row * width_ + col) * channels_ + channel];
    }

    friend bool operator==(const FeatureVolume&, const FeatureVolume&) = default;

private:
    std::size_t height_;
    std::size_t width_;
    std::size_t channels_;
    std::vector<float> data_;
};

/// H x W grid of 8-bit labels. 0 is background and 255 is ignore.
class DenseMask {
public:
    DenseMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> labels);

    static DenseMask filled(std::size_t height, std::size_t width, std::uint8_t label);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t pixel_count() const noexcept { return height_ * width_; }

    std::span<const std::uint8_t> labels() const noexcept { return labels_; }
    std::uint8_t at(std::size_t row, std::size_t col) const noexcept {
        return labels_[row * width_ + col];
    }
    std::uint8_t at(std::size_t index) const noexcept { return labels_[index]; }

    bool same_shape(const DenseMask& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    friend bool operator==(const DenseMask&, const DenseMask&) = default;

private:
    std::size_t height_;
    std::size_t width_;
    std::vector<std::uint8_t> labels_;
};

/// Per-pixel class grid, row-major (row, column, class). Class 0 is background.
/// ProbMap carries normalized distributions; ScoreMap carries the
/// pre-softmax scores the probabilities were computed from.
class ClassGrid {
public:
    ClassGrid(std::size_t height, std::size_t width, std::size_t classes,
              std::vector<float> values);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t classes() const noexcept { return classes_; }
    std::size_t pixel_count() const noexcept { return height_ * width_; }

    std::span<const float> values() const noexcept { return values_; }
    std::span<const float> pixel(std::size_t index) const noexcept {
        return {values_.data() + index * classes_, classes_};
    }
    std::span<const float> pixel(std::size_t row, std::size_t col) const noexcept {
        return pixel(row * width_ + col);
    }

    bool same_shape(const ClassGrid& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_ && classes_ == other.classes_;
    }

    friend bool operator==(const ClassGrid&, const ClassGrid&) = default;

private:
    std::size_t height_;
    std::size_t width_;
    std::size_t classes_;
    std::vector<float> values_;
};

class ProbMap : public ClassGrid {
public:
    using ClassGrid::ClassGrid;

    /// Largest |sum - 1| over pixels, or the largest distance outside
    /// [0, 1] of any single probability, whichever is bigger.
    double normalization_error() const noexcept;
};

class ScoreMap : public ClassGrid {
public:
    using ClassGrid::ClassGrid;
};

/// Corner-aligned bilinear resize, applied channel-wise.
FeatureVolume bilinear_resize(const FeatureVolume& volume, std::size_t out_height,
                              std::size_t out_width);

/// Concatenates along the channel axis, blocks in input order.
FeatureVolume channel_concat(std::span<const FeatureVolume> volumes);
FeatureVolume channel_concat(
    const std::vector<std::reference_wrapper<const FeatureVolume>>& volumes);

/// 1 - cos(a, b), in [0, 2]. Vectors with norm below kMinVectorNorm are
/// treated as orthogonal to everything (distance 1).
double cosine_distance(std::span<const float> a, std::span<const float> b);

/// Max-subtracted softmax.
std::vector<double> softmax_scores(std::span<const double> scores);

/// Per-pixel softmax of a score map.
ProbMap softmax_map(const ScoreMap& scores);

/// Per-pixel argmax; ties resolve to the lowest class index.
DenseMask argmax_decode(const ProbMap& probs);

}  // namespace protoens
