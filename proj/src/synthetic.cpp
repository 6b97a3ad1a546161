#include "protoens/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "protoens/error.hpp"
#include "protoens/io.hpp"
#include "protoens/random.hpp"
#include "protoens/tensor.hpp"

namespace protoens {

using nlohmann::json;

void SyntheticSpec::validate() const {
    if (class_count < 1 || class_count > 254) {
        throw InvalidArgument("synthetic class_count must be in [1, 254]");
    }
    if (height < 4 || width < 4) {
        throw InvalidArgument("synthetic grid must be at least 4x4");
    }
    if (channels == 0) throw InvalidArgument("synthetic channels must be positive");
    if (!(class_center_separation > 0.0) || !std::isfinite(class_center_separation)) {
        throw InvalidArgument("class_center_separation must be positive");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw InvalidArgument("noise_sigma must be non-negative");
    }
    if (corruption_map.empty()) {
        throw InvalidArgument("corruption_map needs one entry per synthetic backbone");
    }
    for (const auto& entry : corruption_map) {
        for (auto c : entry) {
            if (c < 1 || c > class_count) {
                throw InvalidArgument("corruption_map names class " + std::to_string(c) +
                                      " outside [1, " + std::to_string(class_count) + "]");
            }
        }
    }
    if (images_per_class < 2) {
        throw InvalidArgument("images_per_class must be at least 2");
    }
}

std::string synthetic_backbone_id(std::size_t b) { return "synth" + std::to_string(b); }

std::vector<std::vector<std::uint8_t>> parse_corruption_map(const std::string& text) {
    std::vector<std::vector<std::uint8_t>> out;
    std::stringstream entries(text);
    std::string entry;
    while (std::getline(entries, entry, ';')) {
        std::vector<std::uint8_t> classes;
        std::stringstream items(entry);
        std::string item;
        while (std::getline(items, item, ',')) {
            if (item.find_first_not_of(" \t") == std::string::npos) continue;
            std::size_t used = 0;
            int v = 0;
            try {
                v = std::stoi(item, &used);
            } catch (const std::exception&) {
                throw InvalidArgument("corruption map entry \"" + item + "\" is not a class id");
            }
            if (item.find_first_not_of(" \t", used) != std::string::npos || v < 1 || v > 254) {
                throw InvalidArgument("corruption map entry \"" + item + "\" is not a class id");
            }
            classes.push_back(static_cast<std::uint8_t>(v));
        }
        out.push_back(std::move(classes));
    }
    if (!text.empty() && text.back() == ';') out.emplace_back();
    return out;
}

SyntheticSpec synthetic_spec_from_json(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw InvalidConfig(std::string("synthetic spec: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw InvalidConfig("synthetic spec must be a JSON object");
    SyntheticSpec spec;
    try {
        if (doc.contains("class_count")) spec.class_count = doc["class_count"].get<int>();
        if (doc.contains("height")) spec.height = doc["height"].get<std::size_t>();
        if (doc.contains("width")) spec.width = doc["width"].get<std::size_t>();
        if (doc.contains("channels")) spec.channels = doc["channels"].get<std::size_t>();
        if (doc.contains("class_center_separation")) {
            spec.class_center_separation = doc["class_center_separation"].get<double>();
        }
        if (doc.contains("noise_sigma")) spec.noise_sigma = doc["noise_sigma"].get<double>();
        if (doc.contains("images_per_class")) {
            spec.images_per_class = doc["images_per_class"].get<std::size_t>();
        }
        if (doc.contains("ignore_border")) spec.ignore_border = doc["ignore_border"].get<bool>();
        if (doc.contains("corruption_map")) {
            spec.corruption_map.clear();
            for (const auto& entry : doc["corruption_map"]) {
                std::vector<std::uint8_t> classes;
                for (const auto& c : entry) classes.push_back(c.get<std::uint8_t>());
                spec.corruption_map.push_back(std::move(classes));
            }
        }
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("synthetic spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

std::string synthetic_spec_to_json(const SyntheticSpec& spec) {
    json doc;
    doc["class_count"] = spec.class_count;
    doc["height"] = spec.height;
    doc["width"] = spec.width;
    doc["channels"] = spec.channels;
    doc["class_center_separation"] = spec.class_center_separation;
    doc["noise_sigma"] = spec.noise_sigma;
    doc["images_per_class"] = spec.images_per_class;
    doc["ignore_border"] = spec.ignore_border;
    json cm = json::array();
    for (const auto& entry : spec.corruption_map) {
        json e = json::array();
        for (auto c : entry) e.push_back(static_cast<int>(c));
        cm.push_back(std::move(e));
    }
    doc["corruption_map"] = std::move(cm);
    return doc.dump(2) + "\n";
}

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& x : v) {
            x = standard_normal(rng);
            n2 += x * x;
        }
    } while (n2 < 1e-12);
    const double norm = std::sqrt(n2);
    for (double& x : v) x /= norm;
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

std::vector<std::vector<double>> synthetic_class_centers(const SyntheticSpec& spec,
                                                         std::uint64_t seed, std::size_t backbone) {
    const std::size_t count = static_cast<std::size_t>(spec.class_count) + 1;
    Rng rng(derive_seed(seed, 0xC3, backbone));
    std::vector<std::vector<double>> centers;
    centers.reserve(count);

    if (spec.channels >= count) {
        // Gram-Schmidt on random directions.
        while (centers.size() < count) {
            auto v = random_unit(rng, spec.channels);
            for (const auto& u : centers) {
                const double d = dot(v, u);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * u[i];
            }
            const double norm = std::sqrt(dot(v, v));
            if (norm < 1e-6) continue;
            for (double& x : v) x /= norm;
            centers.push_back(std::move(v));
        }
        return centers;
    }

    constexpr double kMaxAbsCos = 0.5;
    constexpr int kMaxAttempts = 100000;
    int attempts = 0;
    while (centers.size() < count) {
        if (++attempts > kMaxAttempts) {
            throw InvalidArgument("cannot place " + std::to_string(count) + " class centers in " +
                                  std::to_string(spec.channels) +
                                  " channels with the minimum pairwise angle");
        }
        auto v = random_unit(rng, spec.channels);
        const bool ok = std::all_of(centers.begin(), centers.end(), [&](const auto& u) {
            return std::abs(dot(v, u)) <= kMaxAbsCos;
        });
        if (ok) centers.push_back(std::move(v));
    }
    return centers;
}

namespace {

DenseMask blob_mask(const SyntheticSpec& spec, std::uint8_t cls, Rng& rng) {
    const std::size_t h = spec.height;
    const std::size_t w = spec.width;
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform_open(rng); };
    const double cy = uniform(h / 4.0, 3.0 * h / 4.0);
    const double cx = uniform(w / 4.0, 3.0 * w / 4.0);
    const double ry = uniform(std::max(1.0, h / 6.0), std::max(1.5, h / 3.0));
    const double rx = uniform(std::max(1.0, w / 6.0), std::max(1.5, w / 3.0));

    auto inside = [&](long y, long x) {
        if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return false;
        const double dy = (static_cast<double>(y) - cy) / ry;
        const double dx = (static_cast<double>(x) - cx) / rx;
        return dy * dy + dx * dx <= 1.0;
    };

    std::vector<std::uint8_t> labels(h * w, kBackgroundLabel);
    std::size_t foreground = 0;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const auto yy = static_cast<long>(y);
            const auto xx = static_cast<long>(x);
            if (inside(yy, xx)) {
                labels[y * w + x] = cls;
                ++foreground;
            } else if (spec.ignore_border && (inside(yy - 1, xx) || inside(yy + 1, xx) ||
                                              inside(yy, xx - 1) || inside(yy, xx + 1))) {
                labels[y * w + x] = kIgnoreLabel;
            }
        }
    }
    if (foreground == 0) {
        labels[static_cast<std::size_t>(cy) * w + static_cast<std::size_t>(cx)] = cls;
    }
    return DenseMask(h, w, std::move(labels));
}

}  // namespace

Manifest gen_synthetic_manifest(const SyntheticSpec& spec, std::uint64_t seed,
                                const std::filesystem::path& dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(dir / "masks");

    Manifest m;
    m.root = dir;
    m.class_count = spec.class_count;
    for (std::size_t b = 0; b < spec.backbone_count(); ++b) {
        m.backbones.push_back(synthetic_backbone_id(b));
        m.channels[m.backbones.back()] = spec.channels;
        fs::create_directories(dir / "features" / m.backbones.back());
    }

    std::vector<std::vector<std::vector<double>>> centers;
    std::vector<std::set<std::uint8_t>> corrupted;
    for (std::size_t b = 0; b < spec.backbone_count(); ++b) {
        centers.push_back(synthetic_class_centers(spec, seed, b));
        corrupted.emplace_back(spec.corruption_map[b].begin(), spec.corruption_map[b].end());
    }

    const double noise_scale = 1.0 / std::sqrt(static_cast<double>(spec.channels));
    std::size_t image = 0;
    for (int c = 1; c <= spec.class_count; ++c) {
        const auto cls = static_cast<std::uint8_t>(c);
        for (std::size_t j = 0; j < spec.images_per_class; ++j, ++image) {
            char id[32];
            std::snprintf(id, sizeof id, "img_%04zu", image);

            Rng mask_rng(derive_seed(seed, 0xB1, image));
            const DenseMask mask = blob_mask(spec, cls, mask_rng);
            const fs::path mask_rel = fs::path("masks") / (std::string(id) + ".png");
            write_mask(mask, dir / mask_rel);

            ManifestImage entry{id, mask_rel, {}, {cls}};
            for (std::size_t b = 0; b < spec.backbone_count(); ++b) {
                Rng feat_rng(derive_seed(seed, 0xF0 + b, image));
                std::vector<float> data(mask.pixel_count() * spec.channels);
                for (std::size_t p = 0; p < mask.pixel_count(); ++p) {
                    std::uint8_t label = mask.at(p);
                    if (label == kIgnoreLabel) label = cls;
                    float* dst = data.data() + p * spec.channels;
                    if (corrupted[b].contains(label)) {
                        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
                            dst[ch] = static_cast<float>(noise_scale * standard_normal(feat_rng));
                        }
                        continue;
                    }
                    const auto& center = centers[b][label];
                    for (std::size_t ch = 0; ch < spec.channels; ++ch) {
                        double v = spec.class_center_separation * center[ch];
                        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * standard_normal(feat_rng);
                        dst[ch] = static_cast<float>(v);
                    }
                }
                const fs::path rel =
                    fs::path("features") / m.backbones[b] / (std::string(id) + ".fvl");
                write_fvol(FeatureVolume(spec.height, spec.width, spec.channels, std::move(data)),
                           dir / rel);
                entry.features[m.backbones[b]] = rel;
            }
            m.images.push_back(std::move(entry));
        }
    }
    write_manifest(m, dir / "manifest.json");
    return m;
}

}  // namespace protoens
