#include <charconv>
#include <fstream>
#include <sstream>

#include "cardiotel/csv.h"
#include "cardiotel/error.h"
#include "cardiotel/validation.h"

namespace cardiotel::validation {

namespace fs = std::filesystem;

namespace {

template <std::size_t N>
std::string header_line(const std::array<std::string_view, N>& cols) {
    std::vector<std::string> v(cols.begin(), cols.end());
    return csv::join(v);
}

void write_file(const fs::path& file, const std::string& content) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + file.string());
    out << content;
    if (!out.flush()) fail(ErrorCode::io, "cannot write " + file.string());
}

} // namespace

void write_differences_csv(std::ostream& out, const std::vector<DifferenceRow>& rows) {
    out << header_line(kDifferencesHeader) << '\n';
    for (const auto& r : rows) {
        out << csv::escape(r.patient_id);
        for (int v : r.values()) out << ',' << v;
        out << '\n';
    }
}

void write_summary_csv(std::ostream& out, const AgreementSummary& summary, bool include_rows) {
    out << header_line(kSummaryHeader) << '\n';
    if (!include_rows) return;
    for (auto m : kAgreementMetrics) {
        const auto& c = summary[m];
        out << csv::escape(display_name(m)) << ',' << c.total << ',' << c.exact << ',' << c.incorrect << ','
            << c.near << '\n';
    }
}

std::string render_chart_svg(AgreementMetric metric, const AgreementCounts& counts) {
    constexpr int kWidth = 360;
    constexpr int kHeight = 240;
    constexpr int kTop = 40;
    constexpr int kBottom = 200;
    constexpr int kBarWidth = 70;
    struct Bar {
        std::string_view label;
        int value;
        std::string_view colour;
    };
    const Bar bars[] = {{"Exact", counts.exact, "#2e7d32"},
                        {"Near", counts.near, "#f9a825"},
                        {"Incorrect", counts.incorrect, "#c62828"}};
    const int scale_max = std::max(1, counts.total);

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "  <title>Analysis of " << display_name(metric) << " Readings</title>\n";
    svg << "  <text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">Analysis of "
        << display_name(metric) << " Readings (n=" << counts.total << ")</text>\n";
    svg << "  <line x1=\"30\" y1=\"" << kBottom << "\" x2=\"" << kWidth - 20 << "\" y2=\"" << kBottom
        << "\" stroke=\"#333\"/>\n";
    for (int i = 0; i < 3; ++i) {
        const auto& b = bars[i];
        const int h = (kBottom - kTop) * b.value / scale_max;
        const int x = 50 + i * (kBarWidth + 30);
        svg << "  <rect x=\"" << x << "\" y=\"" << kBottom - h << "\" width=\"" << kBarWidth << "\" height=\"" << h
            << "\" fill=\"" << b.colour << "\"/>\n";
        svg << "  <text x=\"" << x + kBarWidth / 2 << "\" y=\"" << kBottom - h - 4
            << "\" text-anchor=\"middle\">" << b.value << "</text>\n";
        svg << "  <text x=\"" << x + kBarWidth / 2 << "\" y=\"" << kBottom + 16 << "\" text-anchor=\"middle\">"
            << b.label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::vector<fs::path> emit_report(const ValidationReport& report, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) fail(ErrorCode::io, "cannot create " + out_dir.string());

    std::vector<fs::path> files;
    std::ostringstream diff;
    write_differences_csv(diff, report.differences);
    files.push_back(out_dir / "differences.csv");
    write_file(files.back(), diff.str());

    const bool any = !report.differences.empty();
    std::ostringstream summary;
    write_summary_csv(summary, report.summary, any);
    files.push_back(out_dir / "summary.csv");
    write_file(files.back(), summary.str());

    if (!any) return files;
    for (auto m : kAgreementMetrics) {
        files.push_back(out_dir / ("chart_" + std::string(short_name(m)) + ".svg"));
        write_file(files.back(), render_chart_svg(m, report.summary[m]));
    }
    return files;
}

std::vector<DifferenceRow> load_differences_csv(std::istream& in) {
    auto header = csv::read_record(in);
    if (!header) return {};
    if (header->size() != kDifferencesHeader.size())
        fail(ErrorCode::parse, "differences header has the wrong column count");
    for (std::size_t c = 0; c < kDifferencesHeader.size(); ++c) {
        if ((*header)[c] != kDifferencesHeader[c]) fail(ErrorCode::parse, "unexpected column " + (*header)[c]);
    }
    std::vector<DifferenceRow> rows;
    std::size_t line = 1;
    while (auto rec = csv::read_record(in)) {
        ++line;
        if (rec->size() != kDifferencesHeader.size())
            fail(ErrorCode::parse, "line " + std::to_string(line) + ": wrong column count");
        std::array<int, 11> v{};
        for (std::size_t c = 0; c < v.size(); ++c) {
            const auto& s = (*rec)[c + 1];
            auto [p, err] = std::from_chars(s.data(), s.data() + s.size(), v[c]);
            if (s.empty() || err != std::errc() || p != s.data() + s.size() || v[c] < 0)
                fail(ErrorCode::parse, "line " + std::to_string(line) + ", column " +
                                           std::string(kDifferencesHeader[c + 1]) + ": bad difference");
        }
        rows.push_back({(*rec)[0], v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]});
    }
    return rows;
}

std::vector<DifferenceRow> load_differences_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path.string());
    return load_differences_csv(in);
}

} // namespace cardiotel::validation
