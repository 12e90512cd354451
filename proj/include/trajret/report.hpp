#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "trajret/crossval.hpp"

namespace trajret {

inline constexpr int kReportSchemaVersion = 1;

nlohmann::json to_json(const MetricSet& m);
nlohmann::json to_json(const MethodResult& r);
/// Deterministic document: no timestamps, hosts, or thread counts.
nlohmann::json to_json(const EvalReport& r);

/// Writes the report JSON (2-space indent, trailing newline) atomically.
void write_report(const std::filesystem::path& path, const EvalReport& report);

/// Writes <stem>.roc.csv, <stem>.thresholds.csv, <stem>.ablation.csv and, when
/// present, <stem>.weights.csv next to `report_path`.
void write_report_tables(const std::filesystem::path& report_path, const EvalReport& report);

}  // namespace trajret
