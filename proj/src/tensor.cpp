#include "protoens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "protoens/error.hpp"

namespace protoens {

namespace {

std::string dims_string(std::size_t h, std::size_t w, std::size_t c) {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

}  // namespace

FeatureVolume::FeatureVolume(std::size_t height, std::size_t width, std::size_t channels,
                             std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (height_ == 0 || width_ == 0 || channels_ == 0) {
        throw InvalidArgument("feature volume dimensions must be positive, got " +
                              dims_string(height_, width_, channels_));
    }
    if (data_.size() != height_ * width_ * channels_) {
        throw InvalidArgument("feature volume " + dims_string(height_, width_, channels_) +
                              " expects " + std::to_string(height_ * width_ * channels_) +
                              " values, got " + std::to_string(data_.size()));
    }
    const auto bad = std::find_if(data_.begin(), data_.end(),
                                  [](float v) { return !std::isfinite(v); });
    if (bad != data_.end()) {
        throw InvalidArgument("feature volume contains a non-finite value at flat index " +
                              std::to_string(bad - data_.begin()));
    }
}

FeatureVolume FeatureVolume::filled(std::size_t height, std::size_t width,
                                    std::size_t channels, float value) {
    return FeatureVolume(height, width, channels,
                         std::vector<float>(height * width * channels, value));
}

DenseMask::DenseMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
    if (height_ == 0 || width_ == 0) {
        throw InvalidArgument("mask dimensions must be positive");
    }
    if (labels_.size() != height_ * width_) {
        throw InvalidArgument("mask " + std::to_string(height_) + "x" + std::to_string(width_) +
                              " expects " + std::to_string(height_ * width_) +
                              " labels, got " + std::to_string(labels_.size()));
    }
}

DenseMask DenseMask::filled(std::size_t height, std::size_t width, std::uint8_t label) {
    return DenseMask(height, width, std::vector<std::uint8_t>(height * width, label));
}

ClassGrid::ClassGrid(std::size_t height, std::size_t width, std::size_t classes,
                     std::vector<float> values)
    : height_(height), width_(width), classes_(classes), values_(std::move(values)) {
    if (height_ == 0 || width_ == 0 || classes_ == 0) {
        throw InvalidArgument("class grid dimensions must be positive, got " +
                              dims_string(height_, width_, classes_));
    }
    if (values_.size() != height_ * width_ * classes_) {
        throw InvalidArgument("class grid " + dims_string(height_, width_, classes_) +
                              " expects " + std::to_string(height_ * width_ * classes_) +
                              " values, got " + std::to_string(values_.size()));
    }
}

double ProbMap::normalization_error() const noexcept {
    double worst = 0.0;
    for (std::size_t i = 0; i < pixel_count(); ++i) {
        double sum = 0.0;
        for (float p : pixel(i)) {
            sum += p;
            if (p < 0.0f) worst = std::max(worst, -static_cast<double>(p));
            if (p > 1.0f) worst = std::max(worst, static_cast<double>(p) - 1.0);
            if (!std::isfinite(p)) return INFINITY;
        }
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return worst;
}

FeatureVolume bilinear_resize(const FeatureVolume& volume, std::size_t out_height,
                              std::size_t out_width) {
    if (out_height == 0 || out_width == 0) {
        throw InvalidArgument("bilinear_resize: output dimensions must be positive, got " +
                              std::to_string(out_height) + "x" + std::to_string(out_width));
    }
    if (out_height == volume.height() && out_width == volume.width()) {
        return volume;
    }

    const std::size_t in_h = volume.height();
    const std::size_t in_w = volume.width();
    const std::size_t channels = volume.channels();

    // Corner-aligned: output index i samples source coordinate i*(in-1)/(out-1).
    auto source_coord = [](std::size_t i, std::size_t in, std::size_t out) {
        if (out == 1) return 0.0;
        return static_cast<double>(i) * static_cast<double>(in - 1) /
               static_cast<double>(out - 1);
    };

    std::vector<float> out(out_height * out_width * channels);
    for (std::size_t y = 0; y < out_height; ++y) {
        const double sy = source_coord(y, in_h, out_height);
        const auto y0 = static_cast<std::size_t>(std::floor(sy));
        const std::size_t y1 = std::min(y0 + 1, in_h - 1);
        const double ty = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_width; ++x) {
            const double sx = source_coord(x, in_w, out_width);
            const auto x0 = static_cast<std::size_t>(std::floor(sx));
            const std::size_t x1 = std::min(x0 + 1, in_w - 1);
            const double tx = sx - static_cast<double>(x0);

            const auto p00 = volume.pixel(y0, x0);
            const auto p01 = volume.pixel(y0, x1);
            const auto p10 = volume.pixel(y1, x0);
            const auto p11 = volume.pixel(y1, x1);
            float* dst = out.data() + (y * out_width + x) * channels;
            for (std::size_t c = 0; c < channels; ++c) {
                const double top = p00[c] * (1.0 - tx) + p01[c] * tx;
                const double bottom = p10[c] * (1.0 - tx) + p11[c] * tx;
                dst[c] = static_cast<float>(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    return FeatureVolume(out_height, out_width, channels, std::move(out));
}

namespace {

template <typename Get>
FeatureVolume concat_impl(std::size_t count, Get get) {
    if (count == 0) {
        throw InvalidArgument("channel_concat: empty volume list");
    }
    const FeatureVolume& first = get(0);
    std::size_t total_channels = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const FeatureVolume& v = get(i);
        if (v.height() != first.height() || v.width() != first.width()) {
            throw ShapeMismatch("channel_concat: volume " + std::to_string(i) + " is " +
                                std::to_string(v.height()) + "x" + std::to_string(v.width()) +
                                ", expected " + std::to_string(first.height()) + "x" +
                                std::to_string(first.width()));
        }
        total_channels += v.channels();
    }

    std::vector<float> out;
    out.reserve(first.pixel_count() * total_channels);
    for (std::size_t p = 0; p < first.pixel_count(); ++p) {
        for (std::size_t i = 0; i < count; ++i) {
            const auto px = get(i).pixel(p);
            out.insert(out.end(), px.begin(), px.end());
        }
    }
    return FeatureVolume(first.height(), first.width(), total_channels, std::move(out));
}

}  // namespace

FeatureVolume channel_concat(std::span<const FeatureVolume> volumes) {
    return concat_impl(volumes.size(),
                       [&](std::size_t i) -> const FeatureVolume& { return volumes[i]; });
}

FeatureVolume channel_concat(
    const std::vector<std::reference_wrapper<const FeatureVolume>>& volumes) {
    return concat_impl(volumes.size(),
                       [&](std::size_t i) -> const FeatureVolume& { return volumes[i].get(); });
}

double cosine_distance(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ShapeMismatch("cosine_distance: length " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
    }
    double dot = 0.0;
    double norm_a2 = 0.0;
    double norm_b2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        norm_a2 += static_cast<double>(a[i]) * a[i];
        norm_b2 += static_cast<double>(b[i]) * b[i];
    }
    if (std::sqrt(norm_a2) < kMinVectorNorm || std::sqrt(norm_b2) < kMinVectorNorm) {
        return 1.0;
    }
    const double similarity = std::clamp(dot / std::sqrt(norm_a2 * norm_b2), -1.0, 1.0);
    return 1.0 - similarity;
}

std::vector<double> softmax_scores(std::span<const double> scores) {
    std::vector<double> probs(scores.size());
    if (scores.empty()) return probs;
    const double max_score = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        probs[i] = std::exp(scores[i] - max_score);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;
    return probs;
}

ProbMap softmax_map(const ScoreMap& scores) {
    const std::size_t classes = scores.classes();
    std::vector<float> out(scores.values().size());
    std::vector<double> buffer(classes);
    for (std::size_t i = 0; i < scores.pixel_count(); ++i) {
        const auto px = scores.pixel(i);
        std::copy(px.begin(), px.end(), buffer.begin());
        const auto probs = softmax_scores(buffer);
        std::copy(probs.begin(), probs.end(), out.begin() + static_cast<std::ptrdiff_t>(i * classes));
    }
    return ProbMap(scores.height(), scores.width(), classes, std::move(out));
}

DenseMask argmax_decode(const ProbMap& probs) {
    if (probs.classes() > 255) {
        throw InvalidArgument("argmax_decode: at most 255 classes fit an 8-bit mask");
    }
    std::vector<std::uint8_t> labels(probs.pixel_count());
    for (std::size_t i = 0; i < probs.pixel_count(); ++i) {
        const auto px = probs.pixel(i);
        // max_element returns the first maximum, which is the lowest index.
        labels[i] = static_cast<std::uint8_t>(std::max_element(px.begin(), px.end()) - px.begin());
    }
    return DenseMask(probs.height(), probs.width(), std::move(labels));
}

}  // namespace protoens
