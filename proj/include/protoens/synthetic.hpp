#pragma once

// Seeded synthetic datasets that stand in for real backbones at desk scale.
//
// Every image holds one elliptical foreground blob of a single class. Each
// synthetic backbone embeds a pixel of class l as
//     separation * center_b[l] + N(0, sigma^2) per channel,
// with its own set of class centers (background included). Classes in a
// backbone's corruption set are replaced by isotropic noise of unit expected
// norm, so that backbone cannot tell them apart from anything else.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protoens/manifest.hpp"

namespace protoens {

struct SyntheticSpec {
    int class_count = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 16;
    double class_center_separation = 1.0;
    double noise_sigma = 0.5;
    // One entry per synthetic backbone: the classes it cannot see.
    std::vector<std::vector<std::uint8_t>> corruption_map = {{1, 4, 7}, {2, 5, 8}, {3, 6}};
    std::size_t images_per_class = 6;
    // Label a one-pixel ring around each blob as ignore.
    bool ignore_border = true;

    std::size_t backbone_count() const noexcept { return corruption_map.size(); }

    /// Throws InvalidArgument on out-of-range parameters.
    void validate() const;
};

std::string synthetic_backbone_id(std::size_t b);

/// Reads the spec from a JSON object; absent keys keep their defaults.
SyntheticSpec synthetic_spec_from_json(const std::string& json_text);
std::string synthetic_spec_to_json(const SyntheticSpec& spec);

/// Parses "1,4,7;2,5,8;3,6" (one ';'-separated entry per backbone; an
/// entry may be empty).
std::vector<std::vector<std::uint8_t>> parse_corruption_map(const std::string& text);

/// Class centers of one backbone: class_count + 1 unit vectors (index 0 is
/// background). Mutually orthogonal when channels > class_count, otherwise
/// random with pairwise |cos| <= 0.5.
std::vector<std::vector<double>> synthetic_class_centers(const SyntheticSpec& spec,
                                                         std::uint64_t seed, std::size_t backbone);

/// Writes masks/, features/<backbone>/ and manifest.json under `dir`.
/// Output bytes depend only on (spec, seed).
Manifest gen_synthetic_manifest(const SyntheticSpec& spec, std::uint64_t seed,
                                const std::filesystem::path& dir);

}  // namespace protoens
