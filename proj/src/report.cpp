// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/eval/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "orbiter360/core/error.hpp"
#include "orbiter360/core/image.hpp"

namespace orbiter360::eval {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

ordered_json splitToJson(const SplitAggregate& s) {
    ordered_json j;
    j["count"] = s.count;
    j["psnr"] = s.psnr;
    j["ssim"] = s.ssim;
    j["lpips_proxy"] = s.lpipsProxy;
    j["fid_proxy"] = s.fidProxy;
    j["pose_count"] = s.poseCount;
    j["pose_error"] = s.poseError;
    return j;
}

double numberOrNan(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw DataError(std::string("metric report missing field: ") + key);
    const auto& v = j.at(key);
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!v.is_number()) throw DataError(std::string("metric report field is not a number: ") + key);
    return v.get<double>();
}

SplitAggregate splitFromJson(const nlohmann::json& j) {
    SplitAggregate s;
    s.count = static_cast<int>(numberOrNan(j, "count"));
    s.psnr = numberOrNan(j, "psnr");
    s.ssim = numberOrNan(j, "ssim");
    s.lpipsProxy = numberOrNan(j, "lpips_proxy");
    s.fidProxy = numberOrNan(j, "fid_proxy");
    s.poseCount = static_cast<int>(numberOrNan(j, "pose_count"));
    s.poseError = numberOrNan(j, "pose_error");
    return s;
}

void writeText(const std::filesystem::path& path, const std::string& text) {
    writeFileBytes(path, text.data(), text.size());
}

} // namespace

void writeMetricReport(const MetricReport& report, const std::filesystem::path& jsonPath) {
    ordered_json j;
    j["region"] = report.region;
    j["overall"] = splitToJson(report.overall);
    j["frontal"] = splitToJson(report.frontal);
    j["back"] = splitToJson(report.back);
    ordered_json views = ordered_json::array();
    for (const auto& v : report.views) {
        ordered_json row;
        row["index"] = v.index;
        row["azimuth"] = v.pose.azimuth;
        row["elevation"] = v.pose.elevation;
        row["radius"] = v.pose.radius;
        row["frontal"] = v.frontal;
        row["psnr"] = v.psnr;
        row["ssim"] = v.ssim;
        row["lpips_proxy"] = v.lpipsProxy;
        row["pose_error"] = v.poseError;
        views.push_back(std::move(row));
    }
    j["views"] = std::move(views);
    writeText(jsonPath, j.dump(2) + "\n");

    std::string csv = "index,azimuth,elevation,radius,frontal,psnr,ssim,lpips_proxy,pose_error\n";
    for (const auto& v : report.views) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%d,%.6f,%.6f,%.6f,%.6f\n", v.index, v.pose.azimuth,
                      v.pose.elevation, v.pose.radius, v.frontal ? 1 : 0, v.psnr, v.ssim, v.lpipsProxy,
                      v.poseError);
        csv += buf;
    }
    std::filesystem::path csvPath = jsonPath;
    csvPath.replace_extension(".csv");
    writeText(csvPath, csv);
}

RunSummary loadRunSummary(const std::filesystem::path& jsonPath, std::string name) {
    std::vector<std::uint8_t> bytes = readFileBytes(jsonPath); // IoError when missing
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed metric report " + jsonPath.string() + ": " + e.what());
    }
    RunSummary run;
    if (name.empty()) {
        auto parent = jsonPath.parent_path().filename().string();
        run.name = parent.empty() ? jsonPath.stem().string() : parent;
    } else {
        run.name = std::move(name);
    }
    try {
        run.region = j.at("region").get<std::string>();
        run.overall = splitFromJson(j.at("overall"));
        run.frontal = splitFromJson(j.at("frontal"));
        run.back = splitFromJson(j.at("back"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed metric report " + jsonPath.string() + ": " + e.what());
    }
    return run;
}

std::string formatComparisonCsv(const std::vector<RunSummary>& runs) {
    if (runs.empty()) throw ArgumentError("comparison needs at least one evaluated run");
    std::string out = "run,frontal_psnr,frontal_ssim,frontal_lpips_proxy,frontal_fid_proxy,"
                      "back_psnr,back_ssim,back_lpips_proxy,back_fid_proxy\n";
    for (const auto& r : runs) {
        out += r.name;
        for (const auto* s : {&r.frontal, &r.back})
            for (double v : {s->psnr, s->ssim, s->lpipsProxy, s->fidProxy}) out += "," + fmt4(v);
        out += "\n";
    }
    return out;
}

std::string formatComparisonTable(const std::vector<RunSummary>& runs) {
    if (runs.empty()) throw ArgumentError("comparison needs at least one evaluated run");
    std::size_t nameWidth = 3;
    for (const auto& r : runs) nameWidth = std::max(nameWidth, r.name.size());
    const char* cols[] = {"f_psnr", "f_ssim", "f_lpips", "f_fid", "b_psnr", "b_ssim", "b_lpips", "b_fid"};
    std::string out(nameWidth, ' ');
    out.replace(0, 3, "run");
    for (const char* c : cols) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "  %10s", c);
        out += buf;
    }
    out += "\n";
    for (const auto& r : runs) {
        std::string line = r.name;
        line.resize(nameWidth, ' ');
        for (const auto* s : {&r.frontal, &r.back})
            for (double v : {s->psnr, s->ssim, s->lpipsProxy, s->fidProxy}) {
                char buf[16];
                std::snprintf(buf, sizeof buf, "  %10s", fmt4(v).c_str());
                line += buf;
            }
        out += line + "\n";
    }
    return out;
}

} // namespace orbiter360::eval
