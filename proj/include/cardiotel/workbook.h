#pragma once

// Fixed-geometry rolling recorder: a ring of the most recent rows, a crash
// safe journal, a JSON sidecar with settings and manifest, and CSV export.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace cardiotel::recorder {

inline constexpr int kMaxChannels = 64;

struct WorkbookConfig {
    int data_interval_ms = 150;
    int data_rows = 2000;
    int data_channels = 10;
    // Only "newest_last" exists.
    std::string orientation = "newest_last";

    friend bool operator==(const WorkbookConfig&, const WorkbookConfig&) = default;
};

void validate(const WorkbookConfig& cfg);
void to_json(nlohmann::json& j, const WorkbookConfig& c);
void from_json(const nlohmann::json& j, WorkbookConfig& c);
WorkbookConfig load_workbook_config(const std::string& path);

// nullopt is the empty-cell marker.
using Cell = std::optional<double>;

struct WorkbookRow {
    std::int64_t row_ts = 0;
    std::vector<Cell> channels;

    friend bool operator==(const WorkbookRow&, const WorkbookRow&) = default;
};

struct WorkbookOptions {
    // Archive a full workbook to <name>.<first_ts>.csv and start empty,
    // instead of evicting the oldest row.
    bool rotate = false;
    // Journal lines beyond which the journal is rewritten from the ring;
    // 0 means 2 * data_rows.
    std::int64_t compact_after = 0;
    std::function<std::int64_t()> clock;
};

class Workbook {
public:
    // name is a path prefix: <name>.manifest.json and <name>.journal.csv are
    // created next to it. An existing journal is replayed, dropping a torn
    // final line, so recording resumes after the last complete row.
    static Workbook open(const WorkbookConfig& cfg, const std::filesystem::path& name,
                         WorkbookOptions options = {});

    Workbook(Workbook&&) noexcept;
    ~Workbook();

    // Index of the row in the overall append sequence. Throws
    // Error{validation} on a channel-count mismatch or a row_ts that does
    // not increase.
    std::int64_t append_row(const WorkbookRow& row);

    // Retained rows, oldest first.
    std::vector<WorkbookRow> rows() const;
    std::size_t size() const;
    std::int64_t appended() const;
    const WorkbookConfig& config() const { return cfg_; }
    const std::vector<std::filesystem::path>& archives() const { return archives_; }

    // Header ts,ch1..chN then rows oldest first. Returns rows written.
    std::size_t export_csv(std::ostream& out) const;
    std::size_t export_csv(const std::filesystem::path& out_path) const;

    std::filesystem::path manifest_path() const;
    std::filesystem::path journal_path() const;

private:
    Workbook(WorkbookConfig cfg, std::filesystem::path name, WorkbookOptions options);

    void replay_journal();
    void compact_locked();
    void archive_locked();

    WorkbookConfig cfg_;
    std::filesystem::path name_;
    WorkbookOptions options_;
    mutable std::mutex mu_;
    std::deque<WorkbookRow> ring_;
    std::int64_t next_index_ = 0;
    std::int64_t journal_lines_ = 0;
    std::optional<std::int64_t> last_ts_;
    int journal_fd_ = -1;
    std::vector<std::filesystem::path> archives_;
};

// Writes header plus rows exactly as Workbook::export_csv does.
void write_rows_csv(std::ostream& out, int channels, const std::vector<WorkbookRow>& rows);
// Parses an exported CSV back into rows. Throws Error{parse}.
std::vector<WorkbookRow> read_rows_csv(std::istream& in, int* channels = nullptr);

// "path=chN,..." with 1-based channels. Throws Error{validation} on
// duplicate paths or channels and on channels outside 1..max_channel.
std::map<std::string, int> parse_channel_map(const std::string& text, int max_channel);

// Next subscription event, or nullopt when none arrives within the timeout.
using EventSource = std::function<std::optional<nlohmann::json>(std::chrono::milliseconds)>;

// Turns a gateway subscription into workbook rows. Rows are clocked by the
// client timestamp carried in each update: every interval slot that sees
// data yields one row holding the latest value of each mapped path; paths
// never written stay empty.
class RecordingSession {
public:
    RecordingSession(Workbook& workbook, std::map<std::string, int> channel_map, EventSource source);
    ~RecordingSession();
    RecordingSession(const RecordingSession&) = delete;
    RecordingSession& operator=(const RecordingSession&) = delete;

    // Drains queued events, flushes the partial slot and joins the worker.
    // Rethrows a worker failure (e.g. subscription overflow).
    void stop();

    std::int64_t events_seen() const { return events_seen_; }

    // Feed one event directly; used by the worker and by tests.
    void consume(const nlohmann::json& event);
    void flush();

private:
    void run();
    void emit_slot_locked(std::int64_t slot_ts);

    Workbook& workbook_;
    std::map<std::string, int> channel_map_;
    EventSource source_;
    std::mutex mu_;
    std::vector<Cell> held_;
    std::optional<std::int64_t> slot_;
    std::atomic<std::int64_t> events_seen_{0};
    std::atomic<bool> stop_{false};
    std::exception_ptr error_;
    std::thread worker_;
};

} // namespace cardiotel::recorder
