#include "protoens/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "protoens/error.hpp"
#include "protoens/io.hpp"

namespace protoens {

using nlohmann::json;

bool Manifest::has_backbone(const std::string& id) const {
    return std::find(backbones.begin(), backbones.end(), id) != backbones.end();
}

namespace {

[[noreturn]] void bad(const std::string& what) {
    throw ManifestError("manifest: " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) bad(where + " is missing \"" + key + "\"");
    return obj.at(key);
}

}  // namespace

Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& root) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        bad(std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) bad("top level must be an object");
    if (doc.contains("format") && doc["format"] != kManifestFormat) {
        bad("unsupported format " + doc["format"].dump());
    }

    Manifest m;
    m.root = root;
    const json& cc = require(doc, "class_count", "document");
    if (!cc.is_number_integer() || cc.get<int>() < 1 || cc.get<int>() > 254) {
        bad("class_count must be an integer in [1, 254]");
    }
    m.class_count = cc.get<int>();

    const json& bb = require(doc, "backbones", "document");
    if (!bb.is_array() || bb.empty()) bad("backbones must be a non-empty array");
    for (const auto& b : bb) {
        if (!b.is_string()) bad("backbone ids must be strings");
        if (m.has_backbone(b.get<std::string>())) bad("duplicate backbone " + b.dump());
        m.backbones.push_back(b.get<std::string>());
    }

    if (doc.contains("channels")) {
        const json& ch = doc["channels"];
        if (!ch.is_object()) bad("channels must be an object");
        for (const auto& [k, v] : ch.items()) {
            if (!m.has_backbone(k)) bad("channels names unknown backbone \"" + k + "\"");
            if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) {
                bad("channels of \"" + k + "\" must be a positive integer");
            }
            m.channels[k] = v.get<std::size_t>();
        }
    }

    const json& imgs = require(doc, "images", "document");
    if (!imgs.is_array()) bad("images must be an array");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        const json& img = imgs[i];
        const std::string where = "image " + std::to_string(i);
        ManifestImage mi;
        const json& id = require(img, "id", where);
        if (!id.is_string()) bad(where + " id must be a string");
        mi.id = id.get<std::string>();
        if (!ids.insert(mi.id).second) bad("duplicate image id \"" + mi.id + "\"");

        const json& mask = require(img, "mask", where);
        if (!mask.is_string()) bad(where + " mask must be a path string");
        mi.mask = mask.get<std::string>();

        const json& feats = require(img, "features", where);
        if (!feats.is_object()) bad(where + " features must be an object");
        for (const auto& [k, v] : feats.items()) {
            if (!m.has_backbone(k)) bad(where + " names unknown backbone \"" + k + "\"");
            if (!v.is_string()) bad(where + " feature path for \"" + k + "\" must be a string");
            mi.features[k] = v.get<std::string>();
        }
        for (const auto& b : m.backbones) {
            if (!mi.features.contains(b)) bad(where + " (" + mi.id + ") lacks backbone \"" + b + "\"");
        }

        const json& classes = require(img, "classes", where);
        if (!classes.is_array()) bad(where + " classes must be an array");
        for (const auto& c : classes) {
            if (!c.is_number_integer() || c.get<int>() < 1 || c.get<int>() > m.class_count) {
                bad(where + " (" + mi.id + ") has class " + c.dump() + " outside [1, " +
                    std::to_string(m.class_count) + "]");
            }
            mi.classes.push_back(static_cast<std::uint8_t>(c.get<int>()));
        }
        std::sort(mi.classes.begin(), mi.classes.end());
        mi.classes.erase(std::unique(mi.classes.begin(), mi.classes.end()), mi.classes.end());
        m.images.push_back(std::move(mi));
    }
    return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_manifest(ss.str(), path.parent_path());
    } catch (const ManifestError& e) {
        throw ManifestError(path.string() + ": " + e.what());
    }
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    json doc;
    doc["format"] = kManifestFormat;
    doc["class_count"] = manifest.class_count;
    doc["backbones"] = manifest.backbones;
    if (!manifest.channels.empty()) {
        doc["channels"] = manifest.channels;
    }
    json images = json::array();
    for (const auto& img : manifest.images) {
        json features = json::object();
        for (const auto& [b, p] : img.features) features[b] = p.generic_string();
        json classes = json::array();
        for (auto c : img.classes) classes.push_back(static_cast<int>(c));
        images.push_back({{"id", img.id},
                          {"mask", img.mask.generic_string()},
                          {"features", features},
                          {"classes", classes}});
    }
    doc["images"] = std::move(images);
    const std::string text = doc.dump(2) + "\n";
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::vector<std::string> validate_manifest(const Manifest& manifest,
                                           const std::vector<std::string>& backbones) {
    std::vector<std::string> problems;
    const auto& selected = backbones.empty() ? manifest.backbones : backbones;
    std::map<std::string, std::size_t> channels = manifest.channels;

    for (const auto& b : selected) {
        if (!manifest.has_backbone(b)) problems.push_back("unknown backbone \"" + b + "\"");
    }
    if (!problems.empty()) return problems;

    for (const auto& img : manifest.images) {
        const auto mask_path = manifest.resolve(img.mask);
        std::optional<DenseMask> mask;
        try {
            mask = read_mask(mask_path);
        } catch (const Error& e) {
            problems.push_back(img.id + ": " + e.what());
        }
        if (mask) {
            std::set<std::uint8_t> present;
            for (auto l : mask->labels()) {
                if (l != kIgnoreLabel && l != kBackgroundLabel) present.insert(l);
            }
            if (!present.empty() && *present.rbegin() > manifest.class_count) {
                problems.push_back(img.id + ": mask label " + std::to_string(*present.rbegin()) +
                                   " exceeds class_count " + std::to_string(manifest.class_count));
            }
            for (auto c : img.classes) {
                if (!present.contains(c)) {
                    problems.push_back(img.id + ": listed class " + std::to_string(c) +
                                       " has no pixel in " + mask_path.string());
                }
            }
            // A support image of class c needs at least one pixel that is
            // neither c nor ignore to pool a background prototype from.
            for (auto c : img.classes) {
                const auto labels = mask->labels();
                const bool has_background = std::any_of(labels.begin(), labels.end(), [c](auto l) {
                    return l != kIgnoreLabel && l != c;
                });
                if (!has_background) {
                    problems.push_back(img.id + ": mask has no background pixel for class " +
                                       std::to_string(c));
                }
            }
        }
        for (const auto& b : selected) {
            const auto fpath = manifest.resolve(img.features.at(b));
            try {
                const FeatureVolume v = read_fvol(fpath);
                auto [it, inserted] = channels.emplace(b, v.channels());
                if (!inserted && it->second != v.channels()) {
                    problems.push_back(img.id + ": backbone \"" + b + "\" has " +
                                       std::to_string(v.channels()) + " channels, expected " +
                                       std::to_string(it->second));
                }
            } catch (const Error& e) {
                problems.push_back(img.id + ": " + e.what());
            }
        }
    }
    return problems;
}

std::map<std::uint8_t, std::vector<std::size_t>> images_by_class(const Manifest& manifest) {
    std::map<std::uint8_t, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < manifest.images.size(); ++i) {
        for (auto c : manifest.images[i].classes) out[c].push_back(i);
    }
    return out;
}

}  // namespace protoens
