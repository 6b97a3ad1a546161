#pragma once

// Dataset manifest: a JSON document naming every image, its mask, one FVL1
// file per backbone and the foreground classes it contains.
//
//   {
//     "format": "protoens-manifest/1",
//     "class_count": 20,
//     "backbones": ["vgg16", "resnet50"],
//     "channels": {"vgg16": 512, "resnet50": 2048},      (optional)
//     "images": [
//       {"id": "2007_000032",
//        "mask": "masks/2007_000032.png",
//        "features": {"vgg16": "features/vgg16/2007_000032.fvl", ...},
//        "classes": [1, 15]}
//     ]
//   }
//
// Relative paths resolve against the manifest's directory. Class ids run
// from 1 to class_count; 0 is background and 255 is ignore.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace protoens {

inline constexpr const char* kManifestFormat = "protoens-manifest/1";

struct ManifestImage {
    std::string id;
    std::filesystem::path mask;
    std::map<std::string, std::filesystem::path> features;
    std::vector<std::uint8_t> classes;
};

struct Manifest {
    std::filesystem::path root;
    int class_count = 0;
    std::vector<std::string> backbones;
    std::map<std::string, std::size_t> channels;
    std::vector<ManifestImage> images;

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() ? p : root / p;
    }
    bool has_backbone(const std::string& id) const;
};

/// Parses the document and checks its structure. Referenced files are not
/// opened; see validate_manifest.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& root);

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Opens and parses every referenced file for the given backbones (all of
/// them when empty) and returns one message per problem. An empty result
/// guarantees evaluation will not hit a file-level error.
std::vector<std::string> validate_manifest(const Manifest& manifest,
                                           const std::vector<std::string>& backbones = {});

/// Image indices per class id, ascending.
std::map<std::uint8_t, std::vector<std::size_t>> images_by_class(const Manifest& manifest);

}  // namespace protoens
