#include "cardiotel/workbook.h"

#include <charconv>
#include <cmath>
#include <fcntl.h>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "cardiotel/csv.h"
#include "cardiotel/error.h"

namespace cardiotel::recorder {

namespace fs = std::filesystem;

namespace {

std::int64_t system_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

fs::path with_suffix(const fs::path& name, const std::string& suffix) {
    return fs::path(name.string() + suffix);
}

std::string format_cell(const Cell& c) { return c ? csv::format_number(*c) : std::string(); }

std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

// Empty field is the empty marker; anything else must be a finite number.
bool parse_cell(std::string_view s, Cell& out) {
    if (s.empty()) {
        out.reset();
        return true;
    }
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return false;
    out = v;
    return true;
}

std::string row_line(std::optional<std::int64_t> index, const WorkbookRow& row) {
    std::string line;
    if (index) line += std::to_string(*index) + ",";
    line += std::to_string(row.row_ts);
    for (const auto& c : row.channels) {
        line += ',';
        line += format_cell(c);
    }
    line += '\n';
    return line;
}

void write_fd(int fd, const std::string& data, const fs::path& file) {
    std::string_view rest = data;
    while (!rest.empty()) {
        const ssize_t n = ::write(fd, rest.data(), rest.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            fail(ErrorCode::io, "write " + file.string() + " failed");
        }
        rest.remove_prefix(static_cast<std::size_t>(n));
    }
}

} // namespace

void validate(const WorkbookConfig& cfg) {
    if (cfg.data_interval_ms <= 0) fail(ErrorCode::validation, "data_interval_ms must be positive");
    if (cfg.data_rows <= 0) fail(ErrorCode::validation, "data_rows must be positive");
    if (cfg.data_channels < 1 || cfg.data_channels > kMaxChannels)
        fail(ErrorCode::validation, "data_channels must be within 1..64");
    if (cfg.orientation != "newest_last")
        fail(ErrorCode::validation, "orientation must be newest_last");
}

void to_json(nlohmann::json& j, const WorkbookConfig& c) {
    j = {{"data_interval_ms", c.data_interval_ms},
         {"data_rows", c.data_rows},
         {"data_channels", c.data_channels},
         {"orientation", c.orientation}};
}

void from_json(const nlohmann::json& j, WorkbookConfig& c) {
    c = WorkbookConfig{};
    if (j.contains("data_interval_ms")) c.data_interval_ms = j["data_interval_ms"].get<int>();
    if (j.contains("data_rows")) c.data_rows = j["data_rows"].get<int>();
    if (j.contains("data_channels")) c.data_channels = j["data_channels"].get<int>();
    if (j.contains("orientation")) c.orientation = j["orientation"].get<std::string>();
}

WorkbookConfig load_workbook_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open workbook config " + path);
    WorkbookConfig cfg;
    try {
        cfg = nlohmann::json::parse(in).get<WorkbookConfig>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::validation, "workbook config " + path + ": " + e.what());
    }
    validate(cfg);
    return cfg;
}

// --- Workbook ----------------------------------------------------------------

Workbook::Workbook(WorkbookConfig cfg, fs::path name, WorkbookOptions options)
    : cfg_(std::move(cfg)), name_(std::move(name)), options_(std::move(options)) {
    if (!options_.clock) options_.clock = system_ms;
    if (options_.compact_after <= 0) options_.compact_after = 2LL * cfg_.data_rows;
}

Workbook::Workbook(Workbook&& other) noexcept
    : cfg_(std::move(other.cfg_)), name_(std::move(other.name_)), options_(std::move(other.options_)),
      ring_(std::move(other.ring_)), next_index_(other.next_index_), journal_lines_(other.journal_lines_),
      last_ts_(other.last_ts_), journal_fd_(other.journal_fd_), archives_(std::move(other.archives_)) {
    other.journal_fd_ = -1;
}

Workbook::~Workbook() {
    if (journal_fd_ >= 0) ::close(journal_fd_);
}

fs::path Workbook::manifest_path() const { return with_suffix(name_, ".manifest.json"); }
fs::path Workbook::journal_path() const { return with_suffix(name_, ".journal.csv"); }

Workbook Workbook::open(const WorkbookConfig& cfg, const fs::path& name, WorkbookOptions options) {
    validate(cfg);
    Workbook wb(cfg, name, std::move(options));
    std::error_code ec;
    if (name.has_parent_path()) fs::create_directories(name.parent_path(), ec);

    const auto manifest = wb.manifest_path();
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        WorkbookConfig existing;
        try {
            existing = nlohmann::json::parse(in).at("settings").get<WorkbookConfig>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::io, "corrupt manifest " + manifest.string() + ": " + e.what());
        }
        if (!(existing == cfg))
            fail(ErrorCode::validation, "workbook " + name.string() + " was created with different settings");
    } else {
        nlohmann::json doc = {
            {"settings", cfg},
            {"manifest",
             {{"created_ts", wb.options_.clock()},
              {"name", name.filename().string()},
              {"journal", wb.journal_path().filename().string()},
              {"data_file", with_suffix(name, ".csv").filename().string()}}}};
        const auto tmp = with_suffix(manifest, ".tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            if (!out) fail(ErrorCode::io, "cannot write " + manifest.string());
            out << doc.dump(2) << '\n';
            if (!out.flush()) fail(ErrorCode::io, "cannot write " + manifest.string());
        }
        fs::rename(tmp, manifest);
    }

    wb.replay_journal();
    wb.journal_fd_ = ::open(wb.journal_path().c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (wb.journal_fd_ < 0) fail(ErrorCode::io, "cannot open journal " + wb.journal_path().string());
    return wb;
}

void Workbook::replay_journal() {
    const auto path = journal_path();
    std::ifstream in(path, std::ios::binary);
    if (!in) return;
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string data = ss.str();
    in.close();

    std::size_t pos = 0;
    std::size_t good_end = 0;
    while (pos < data.size()) {
        const auto nl = data.find('\n', pos);
        if (nl == std::string::npos) break;
        std::string_view line(data.data() + pos, nl - pos);
        std::vector<std::string_view> fields;
        for (std::size_t start = 0;;) {
            const auto comma = line.find(',', start);
            fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (fields.size() != static_cast<std::size_t>(cfg_.data_channels) + 2) break;
        const auto index = parse_int(fields[0]);
        const auto ts = parse_int(fields[1]);
        // The first row may carry any index (the journal is compacted);
        // after that indices must be contiguous.
        if (!index || !ts || (journal_lines_ > 0 && *index != next_index_)) break;
        WorkbookRow row{*ts, std::vector<Cell>(static_cast<std::size_t>(cfg_.data_channels))};
        bool ok = true;
        for (int c = 0; c < cfg_.data_channels && ok; ++c) ok = parse_cell(fields[static_cast<std::size_t>(c) + 2], row.channels[static_cast<std::size_t>(c)]);
        if (!ok || (last_ts_ && row.row_ts <= *last_ts_)) break;
        ring_.push_back(std::move(row));
        if (ring_.size() > static_cast<std::size_t>(cfg_.data_rows)) ring_.pop_front();
        next_index_ = *index + 1;
        last_ts_ = ts;
        ++journal_lines_;
        pos = nl + 1;
        good_end = pos;
    }
    if (good_end < data.size()) fs::resize_file(path, good_end);
}

std::int64_t Workbook::append_row(const WorkbookRow& row) {
    if (row.channels.size() != static_cast<std::size_t>(cfg_.data_channels))
        fail(ErrorCode::validation, "row has " + std::to_string(row.channels.size()) + " channels, workbook has " +
                                        std::to_string(cfg_.data_channels));
    for (const auto& c : row.channels) {
        if (c && !std::isfinite(*c)) fail(ErrorCode::validation, "cell values must be finite");
    }
    std::lock_guard lock(mu_);
    if (last_ts_ && row.row_ts <= *last_ts_)
        fail(ErrorCode::validation, "row_ts " + std::to_string(row.row_ts) + " does not follow " +
                                        std::to_string(*last_ts_));

    if (options_.rotate && ring_.size() == static_cast<std::size_t>(cfg_.data_rows)) archive_locked();

    const std::int64_t index = next_index_;
    write_fd(journal_fd_, row_line(index, row), journal_path());
    ++journal_lines_;
    ring_.push_back(row);
    if (ring_.size() > static_cast<std::size_t>(cfg_.data_rows)) ring_.pop_front();
    ++next_index_;
    last_ts_ = row.row_ts;
    if (journal_lines_ > options_.compact_after) compact_locked();
    return index;
}

void Workbook::archive_locked() {
    const auto file = with_suffix(name_, "." + std::to_string(ring_.front().row_ts) + ".csv");
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write archive " + file.string());
    write_rows_csv(out, cfg_.data_channels, {ring_.begin(), ring_.end()});
    if (!out.flush()) fail(ErrorCode::io, "cannot write archive " + file.string());
    archives_.push_back(file);
    ring_.clear();
    compact_locked();
}

void Workbook::compact_locked() {
    const auto path = journal_path();
    const auto tmp = with_suffix(path, ".tmp");
    std::string data;
    std::int64_t index = next_index_ - static_cast<std::int64_t>(ring_.size());
    for (const auto& row : ring_) data += row_line(index++, row);
    {
        const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
        if (fd < 0) fail(ErrorCode::io, "cannot write " + tmp.string());
        try {
            write_fd(fd, data, tmp);
        } catch (...) {
            ::close(fd);
            throw;
        }
        ::close(fd);
    }
    fs::rename(tmp, path);
    if (journal_fd_ >= 0) ::close(journal_fd_);
    journal_fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
    if (journal_fd_ < 0) fail(ErrorCode::io, "cannot reopen journal " + path.string());
    journal_lines_ = static_cast<std::int64_t>(ring_.size());
}

std::vector<WorkbookRow> Workbook::rows() const {
    std::lock_guard lock(mu_);
    return {ring_.begin(), ring_.end()};
}

std::size_t Workbook::size() const {
    std::lock_guard lock(mu_);
    return ring_.size();
}

std::int64_t Workbook::appended() const {
    std::lock_guard lock(mu_);
    return next_index_;
}

std::size_t Workbook::export_csv(std::ostream& out) const {
    const auto snapshot = rows();
    write_rows_csv(out, cfg_.data_channels, snapshot);
    return snapshot.size();
}

std::size_t Workbook::export_csv(const fs::path& out_path) const {
    const auto tmp = with_suffix(out_path, ".tmp");
    std::size_t n = 0;
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write " + out_path.string());
        n = export_csv(out);
        if (!out.flush()) fail(ErrorCode::io, "cannot write " + out_path.string());
    }
    fs::rename(tmp, out_path);
    return n;
}

void write_rows_csv(std::ostream& out, int channels, const std::vector<WorkbookRow>& rows) {
    std::vector<std::string> header{"ts"};
    for (int c = 1; c <= channels; ++c) header.push_back("ch" + std::to_string(c));
    out << csv::join(header) << '\n';
    for (const auto& row : rows) out << row_line(std::nullopt, row);
}

std::vector<WorkbookRow> read_rows_csv(std::istream& in, int* channels) {
    auto header = csv::read_record(in);
    if (!header || header->empty() || (*header)[0] != "ts") fail(ErrorCode::parse, "workbook CSV needs a ts header");
    const std::size_t width = header->size();
    for (std::size_t c = 1; c < width; ++c) {
        if ((*header)[c] != "ch" + std::to_string(c)) fail(ErrorCode::parse, "unexpected header column " + (*header)[c]);
    }
    if (channels) *channels = static_cast<int>(width - 1);
    std::vector<WorkbookRow> rows;
    std::size_t line = 1;
    while (auto rec = csv::read_record(in)) {
        ++line;
        if (rec->size() != width) fail(ErrorCode::parse, "line " + std::to_string(line) + ": wrong field count");
        auto ts = parse_int((*rec)[0]);
        if (!ts) fail(ErrorCode::parse, "line " + std::to_string(line) + ": bad ts");
        WorkbookRow row{*ts, std::vector<Cell>(width - 1)};
        for (std::size_t c = 1; c < width; ++c) {
            if (!parse_cell((*rec)[c], row.channels[c - 1]))
                fail(ErrorCode::parse, "line " + std::to_string(line) + ": bad cell in ch" + std::to_string(c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace cardiotel::recorder
