#include "cardiotel/validation.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include "cardiotel/csv.h"
#include "cardiotel/error.h"

namespace cardiotel::validation {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

bool all_digits(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string where(std::size_t row, std::string_view column) {
    return "row " + std::to_string(row) + ", column " + std::string(column);
}

int parse_int_cell(const std::string& text, std::size_t row, std::string_view column) {
    int v = 0;
    const auto s = trim(text);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size())
        fail(ErrorCode::parse, where(row, column) + ": '" + text + "' is not an integer");
    return v;
}

double parse_temp_cell(const std::string& text, std::size_t row) {
    double v = 0;
    const auto s = trim(text);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
        fail(ErrorCode::parse, where(row, "Temp") + ": '" + text + "' is not a number");
    return v;
}

} // namespace

bool id_less(const std::string& a, const std::string& b) {
    const bool na = all_digits(a);
    const bool nb = all_digits(b);
    if (na && nb) {
        auto strip = [](const std::string& s) {
            const auto nz = s.find_first_not_of('0');
            return nz == std::string::npos ? std::string("0") : s.substr(nz);
        };
        const auto sa = strip(a);
        const auto sb = strip(b);
        if (sa.size() != sb.size()) return sa.size() < sb.size();
        if (sa != sb) return sa < sb;
        return a < b;
    }
    if (na != nb) return na;
    return a < b;
}

PairedReadingSet load_paired_csv(std::istream& in) {
    auto header = csv::read_record(in);
    if (!header || (header->size() == 1 && trim((*header)[0]).empty())) return {};
    if (header->size() != kPairedHeader.size())
        fail(ErrorCode::parse, "header has " + std::to_string(header->size()) + " columns, expected " +
                                   std::to_string(kPairedHeader.size()));
    for (std::size_t c = 0; c < kPairedHeader.size(); ++c) {
        if (lower(trim((*header)[c])) != lower(kPairedHeader[c]))
            fail(ErrorCode::parse, "header column " + std::to_string(c + 1) + " is '" + (*header)[c] +
                                       "', expected '" + std::string(kPairedHeader[c]) + "'");
    }

    struct Pending {
        std::optional<VitalSample> kit;
        std::optional<VitalSample> clinic;
    };
    std::map<std::string, Pending> by_id;
    std::size_t row = 1;
    while (auto rec = csv::read_record(in)) {
        ++row;
        if (rec->size() == 1 && trim((*rec)[0]).empty()) continue;
        if (rec->size() != kPairedHeader.size())
            fail(ErrorCode::parse, "row " + std::to_string(row) + " has " + std::to_string(rec->size()) +
                                       " columns, expected " + std::to_string(kPairedHeader.size()));
        const auto& f = *rec;
        const auto setup = lower(trim(f[0]));
        if (setup != "kit" && setup != "clinic")
            fail(ErrorCode::parse, where(row, "Setup") + ": '" + f[0] + "' is neither Kit nor Clinic");
        const auto id = trim(f[1]);
        if (id.empty()) fail(ErrorCode::parse, where(row, "ID") + ": empty");

        VitalSample s;
        s.patient_id = id;
        s.spo2 = parse_int_cell(f[2], row, kPairedHeader[2]);
        s.temp_f = parse_temp_cell(f[3], row);
        s.sbp = parse_int_cell(f[4], row, kPairedHeader[4]);
        s.dbp = parse_int_cell(f[5], row, kPairedHeader[5]);
        s.hr = parse_int_cell(f[6], row, kPairedHeader[6]);
        s.ecg = {parse_int_cell(f[7], row, kPairedHeader[7]),   parse_int_cell(f[8], row, kPairedHeader[8]),
                 parse_int_cell(f[9], row, kPairedHeader[9]),   parse_int_cell(f[10], row, kPairedHeader[10]),
                 parse_int_cell(f[11], row, kPairedHeader[11]), parse_int_cell(f[12], row, kPairedHeader[12])};
        try {
            validate(s);
        } catch (const Error& e) {
            fail(e.code(), "row " + std::to_string(row) + ": " + e.what());
        }

        auto& slot = setup == "kit" ? by_id[id].kit : by_id[id].clinic;
        if (slot) fail(ErrorCode::conflict, "duplicate " + f[0] + " row for ID " + id);
        slot = std::move(s);
    }

    PairedReadingSet out;
    for (auto& [id, p] : by_id) {
        if (!p.kit) fail(ErrorCode::pairing, "ID " + id + " has no Kit row");
        if (!p.clinic) fail(ErrorCode::pairing, "ID " + id + " has no Clinic row");
        out.push_back({id, std::move(*p.kit), std::move(*p.clinic)});
    }
    std::sort(out.begin(), out.end(),
              [](const PairedReading& a, const PairedReading& b) { return id_less(a.patient_id, b.patient_id); });
    return out;
}

PairedReadingSet load_paired_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path.string());
    return load_paired_csv(in);
}

ValidationReport run_validation(const PairedReadingSet& set, int near_tolerance) {
    if (near_tolerance < 0) fail(ErrorCode::validation, "tolerance must be non-negative");
    ValidationReport report;
    report.near_tolerance = near_tolerance;
    report.differences.reserve(set.size());
    for (const auto& pair : set) report.differences.push_back(compare_reading(pair.kit, pair.clinic));
    report.summary = summarize_agreement(report.differences, near_tolerance);
    return report;
}

} // namespace cardiotel::validation
