// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "orbiter360/eval/metrics.hpp"

namespace orbiter360::eval {

/// Writes the report as JSON plus a sibling .csv of per-view rows (same
/// path with the extension swapped). Key order and float formatting are
/// deterministic, so identical reports produce identical bytes.
void writeMetricReport(const MetricReport& report, const std::filesystem::path& jsonPath);

/// Aggregates of one evaluated run, as read back from its report file.
struct RunSummary {
    std::string name;
    std::string region;
    SplitAggregate overall, frontal, back;
};

/// Reads the aggregates back from a report JSON. `name` defaults to the
/// name of the directory holding the report. Missing file -> IoError naming
/// the path; malformed content -> DataError.
RunSummary loadRunSummary(const std::filesystem::path& jsonPath, std::string name = "");

/// Comparison of evaluated runs: one row per run, frontal/back columns for
/// psnr, ssim, lpips_proxy and fid_proxy, every value printed as %.4f.
std::string formatComparisonCsv(const std::vector<RunSummary>& runs);
std::string formatComparisonTable(const std::vector<RunSummary>& runs);

} // namespace orbiter360::eval
