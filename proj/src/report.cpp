#include "protoens/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "protoens/io.hpp"

namespace protoens {

using nlohmann::ordered_json;

double EvaluationReport::summary_miou() const {
    if (folds.empty()) {
        throw InvalidArgument("report has no folds");
    }
    if (folds.size() == 1) return folds.front().miou;
    std::vector<double> values;
    for (const auto& f : folds) values.push_back(f.miou);
    return miou(values);
}

std::string describe_run(const RunConfig& cfg, const std::vector<std::string>& backbones) {
    std::string joined;
    for (std::size_t i = 0; i < backbones.size(); ++i) {
        if (i > 0) joined += " + ";
        joined += backbones[i];
    }
    switch (cfg.strategy) {
        case Strategy::kSingle: return joined;
        case Strategy::kVoting:
            return "voting[" + std::string(to_string(cfg.voting.mode)) + "] " + joined;
        case Strategy::kFusion:
            return std::string(cfg.fusion.l2_normalize ? "fusion[l2]" : "fusion") + " " + joined;
    }
    return joined;
}

namespace {

ordered_json config_json(const RunConfig& cfg, const std::vector<std::string>& backbones) {
    ordered_json c;
    c["strategy"] = std::string(to_string(cfg.strategy));
    c["backbones"] = backbones;
    if (cfg.strategy == Strategy::kVoting) {
        c["vote_mode"] = std::string(to_string(cfg.voting.mode));
        c["weights"] = cfg.voting.resolved_weights(backbones.size());
    }
    if (cfg.strategy == Strategy::kFusion) {
        c["fusion_l2_normalize"] = cfg.fusion.l2_normalize;
    }
    c["alpha"] = cfg.alpha;
    c["n_way"] = cfg.n_way;
    c["k_shot"] = cfg.k_shot;
    c["episodes"] = cfg.n_episodes;
    c["repeats"] = cfg.repeats;
    c["seed"] = cfg.seed;
    c["include_background"] = cfg.include_background;
    return c;
}

ordered_json fold_json(const FoldReport& f) {
    ordered_json j;
    j["fold"] = f.fold_index;
    j["miou"] = f.miou;
    j["episodes"] = f.episodes;
    j["seed"] = f.seed;
    ordered_json classes = ordered_json::array();
    for (std::size_t i = 0; i < f.classes.size(); ++i) {
        const auto c = f.classes[i];
        classes.push_back({{"class", static_cast<int>(c)},
                           {"iou", f.per_class_iou[i]},
                           {"tp", f.counts[c].tp},
                           {"fp", f.counts[c].fp},
                           {"fn", f.counts[c].fn}});
    }
    j["classes"] = std::move(classes);
    if (f.repeat_miou.size() > 1) j["repeat_miou"] = f.repeat_miou;
    j["config"] = config_json(f.config, f.backbones);
    return j;
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

std::string report_to_json(const EvaluationReport& report) {
    ordered_json doc;
    doc["format"] = kReportFormat;
    ordered_json folds = ordered_json::array();
    for (const auto& f : report.folds) folds.push_back(fold_json(f));
    doc["folds"] = std::move(folds);
    if (report.folds.size() > 1) doc["mean_miou"] = report.summary_miou();
    if (report.baseline) {
        doc["baseline"] = {
            {"miou", report.baseline->baseline_miou},
            {"candidate_miou", report.baseline->candidate_miou},
            {"relative_improvement_pct", report.baseline->relative_improvement_pct},
            {"relative_improvement",
             format_relative_improvement(report.baseline->relative_improvement_pct)},
        };
    }
    return doc.dump(2) + "\n";
}

std::string report_to_table(const EvaluationReport& report) {
    if (report.folds.empty()) return {};
    const auto& first = report.folds.front();
    const std::string header = describe_run(first.config, first.backbones);
    const bool with_baseline = report.baseline.has_value();

    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-8s | %s\n", "", header.c_str());
    out << line;
    out << std::string(11 + header.size(), '-') << "\n";
    for (const auto& f : report.folds) {
        std::snprintf(line, sizeof line, "Fold %-3zu | %s\n", f.fold_index, fixed4(f.miou).c_str());
        out << line;
    }
    if (report.folds.size() > 1 || with_baseline) {
        std::string cell = fixed4(report.summary_miou());
        if (with_baseline) {
            cell += " (" + format_relative_improvement(report.baseline->relative_improvement_pct) +
                    " vs " + fixed4(report.baseline->baseline_miou) + ")";
        }
        const char* label = report.folds.size() > 1 ? "Mean" : "Summary";
        std::snprintf(line, sizeof line, "%-8s | %s\n", label, cell.c_str());
        out << line;
    }
    return out.str();
}

void write_report(const EvaluationReport& report, const std::filesystem::path& path) {
    const std::string text = report_to_json(report);
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

double read_report_summary_miou(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open baseline report " + path.string());
    ordered_json doc;
    try {
        doc = ordered_json::parse(in);
    } catch (const ordered_json::parse_error& e) {
        throw InvalidConfig("baseline report " + path.string() + " is not valid JSON: " + e.what());
    }
    if (doc.contains("mean_miou") && doc["mean_miou"].is_number()) {
        return doc["mean_miou"].get<double>();
    }
    if (doc.contains("folds") && doc["folds"].is_array() && doc["folds"].size() == 1 &&
        doc["folds"][0].contains("miou") && doc["folds"][0]["miou"].is_number()) {
        return doc["folds"][0]["miou"].get<double>();
    }
    throw InvalidConfig("baseline report " + path.string() + " has no summary mIoU");
}

void attach_baseline(EvaluationReport& report, const std::filesystem::path& path) {
    BaselineComparison cmp;
    cmp.baseline_miou = read_report_summary_miou(path);
    cmp.candidate_miou = report.summary_miou();
    cmp.relative_improvement_pct = relative_improvement(cmp.candidate_miou, cmp.baseline_miou);
    report.baseline = cmp;
}

}  // namespace protoens
