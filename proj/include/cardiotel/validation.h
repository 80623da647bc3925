#pragma once

// Kit-versus-clinic agreement study: paired CSV input, difference and
// summary tables, per-metric SVG charts.

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "cardiotel/model.h"

namespace cardiotel::validation {

// Input header, matched case-insensitively.
inline constexpr std::array<std::string_view, 13> kPairedHeader = {
    "Setup", "ID", "SpO2", "Temp", "S_BP", "D_BP", "HR", "ECG", "P", "Q", "R", "S", "T"};
inline constexpr std::array<std::string_view, 12> kDifferencesHeader = {
    "ID", "SpO2", "Temp", "S_BP", "D_BP", "HR", "ECG", "P", "Q", "R", "S", "T"};
inline constexpr std::array<std::string_view, 5> kSummaryHeader = {"Metric", "Total", "Exact", "Incorrect",
                                                                   "Near"};

struct PairedReading {
    std::string patient_id;
    VitalSample kit;
    VitalSample clinic;
};

// Pairs ordered by ID, numerically when IDs are integers.
using PairedReadingSet = std::vector<PairedReading>;

bool id_less(const std::string& a, const std::string& b);

// Throws Error{parse} with row and column, Error{conflict} on a repeated
// (setup, id), Error{pairing} naming an ID that lacks a member.
PairedReadingSet load_paired_csv(std::istream& in);
PairedReadingSet load_paired_csv(const std::filesystem::path& path);

struct ValidationReport {
    std::vector<DifferenceRow> differences;
    AgreementSummary summary;
    int near_tolerance = kDefaultNearTolerance;
};

ValidationReport run_validation(const PairedReadingSet& set, int near_tolerance = kDefaultNearTolerance);

void write_differences_csv(std::ostream& out, const std::vector<DifferenceRow>& rows);
void write_summary_csv(std::ostream& out, const AgreementSummary& summary, bool include_rows);
std::string render_chart_svg(AgreementMetric metric, const AgreementCounts& counts);

// differences.csv, summary.csv and chart_<metric>.svg per metric (charts are
// skipped for an empty report). Returns the files written.
std::vector<std::filesystem::path> emit_report(const ValidationReport& report,
                                               const std::filesystem::path& out_dir);

std::vector<DifferenceRow> load_differences_csv(std::istream& in);
std::vector<DifferenceRow> load_differences_csv(const std::filesystem::path& path);

} // namespace cardiotel::validation
