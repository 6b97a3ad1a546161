#pragma once

// Evaluation reports: a fixed-schema JSON document ("protoens-report/1")
// and a plain-text table with one row per fold plus a mean row.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protoens/episodic.hpp"

namespace protoens {

inline constexpr const char* kReportFormat = "protoens-report/1";

struct BaselineComparison {
    double baseline_miou = 0.0;
    double candidate_miou = 0.0;
    double relative_improvement_pct = 0.0;
};

struct EvaluationReport {
    std::vector<FoldReport> folds;
    std::optional<BaselineComparison> baseline;

    /// Cross-fold mean when there are several folds, else the single fold's mIoU.
    double summary_miou() const;
};

std::string describe_run(const RunConfig& cfg, const std::vector<std::string>& backbones);

/// Serialized JSON text; identical reports give identical bytes.
std::string report_to_json(const EvaluationReport& report);

std::string report_to_table(const EvaluationReport& report);

void write_report(const EvaluationReport& report, const std::filesystem::path& path);

/// Summary mIoU of a report written by write_report: "mean_miou" when
/// present, else the miou of its only fold.
double read_report_summary_miou(const std::filesystem::path& path);

/// Fills report.baseline from a report previously written to `path`.
void attach_baseline(EvaluationReport& report, const std::filesystem::path& path);

}  // namespace protoens
