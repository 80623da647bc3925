#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "cardiotel/error.h"
#include "cardiotel/workbook.h"
#include "support.h"

using namespace cardiotel;
using namespace cardiotel::recorder;
using nlohmann::json;
using testsupport::code_of;

namespace {

WorkbookConfig small(int rows, int channels = 3, int interval = 150) {
    WorkbookConfig c;
    c.data_rows = rows;
    c.data_channels = channels;
    c.data_interval_ms = interval;
    return c;
}

WorkbookOptions fixed_clock() {
    WorkbookOptions o;
    o.clock = [] { return std::int64_t{1700000000000}; };
    return o;
}

WorkbookRow row(std::int64_t ts, std::vector<Cell> cells) { return {ts, std::move(cells)}; }

json update(const std::string& path, json value, std::int64_t ts, std::int64_t seq = 0) {
    return {{"event", "update"}, {"sub", 1}, {"path", path}, {"value", value}, {"ts", ts}, {"server_ts", 0}, {"seq", seq}};
}

std::string export_string(const Workbook& wb) {
    std::ostringstream out;
    wb.export_csv(out);
    return out.str();
}

} // namespace

TEST_CASE("workbook config validation") {
    CHECK_NOTHROW(validate(WorkbookConfig{}));
    CHECK(code_of([] { validate(small(0)); }) == ErrorCode::validation);
    CHECK(code_of([] { validate(small(5, 0)); }) == ErrorCode::validation);
    CHECK(code_of([] { validate(small(5, 65)); }) == ErrorCode::validation);
    CHECK_NOTHROW(validate(small(5, 64)));
    CHECK(code_of([] { validate(small(5, 3, 0)); }) == ErrorCode::validation);
    auto c = small(5);
    c.orientation = "newest_first";
    CHECK(code_of([&] { validate(c); }) == ErrorCode::validation);

    const WorkbookConfig d;
    CHECK(d.data_interval_ms == 150);
    CHECK(d.data_rows == 2000);
    CHECK(d.data_channels == 10);

    testsupport::TempDir dir;
    testsupport::write_file(dir / "wb.json", R"({"data_rows": 50, "data_channels": 4})");
    const auto loaded = load_workbook_config((dir / "wb.json").string());
    CHECK(loaded.data_rows == 50);
    CHECK(loaded.data_channels == 4);
    CHECK(loaded.data_interval_ms == 150);
    testsupport::write_file(dir / "bad.json", R"({"data_rows": -1})");
    CHECK(code_of([&] { load_workbook_config((dir / "bad.json").string()); }) == ErrorCode::validation);
    CHECK(code_of([&] { load_workbook_config((dir / "none.json").string()); }) == ErrorCode::io);
}

TEST_CASE("manifest sidecar") {
    testsupport::TempDir dir;
    const auto name = dir / "session";
    {
        auto wb = Workbook::open(small(4), name, fixed_clock());
        CHECK(wb.manifest_path() == dir / "session.manifest.json");
        CHECK(wb.journal_path() == dir / "session.journal.csv");
    }
    const auto doc = json::parse(testsupport::read_file(dir / "session.manifest.json"));
    CHECK(doc["settings"]["data_rows"] == 4);
    CHECK(doc["settings"]["data_channels"] == 3);
    CHECK(doc["settings"]["data_interval_ms"] == 150);
    CHECK(doc["settings"]["orientation"] == "newest_last");
    CHECK(doc["manifest"]["created_ts"] == 1700000000000);
    CHECK(doc["manifest"]["journal"] == "session.journal.csv");
    CHECK(doc["manifest"]["data_file"] == "session.csv");

    CHECK(code_of([&] { Workbook::open(small(5), name); }) == ErrorCode::validation);
    CHECK_NOTHROW(Workbook::open(small(4), name));
}

TEST_CASE("append rules") {
    testsupport::TempDir dir;
    auto wb = Workbook::open(small(3), dir / "w", fixed_clock());
    CHECK(wb.append_row(row(0, {1, std::nullopt, 3})) == 0);
    CHECK(code_of([&] { wb.append_row(row(150, {1, 2})); }) == ErrorCode::validation);
    CHECK(code_of([&] { wb.append_row(row(0, {1, 2, 3})); }) == ErrorCode::validation);
    CHECK(code_of([&] { wb.append_row(row(-5, {1, 2, 3})); }) == ErrorCode::validation);
    CHECK(code_of([&] { wb.append_row(row(300, {1, std::numeric_limits<double>::infinity(), 3})); }) ==
          ErrorCode::validation);
    CHECK(wb.append_row(row(150, {4, 5, 6})) == 1);
    CHECK(wb.size() == 2);
}

TEST_CASE("oldest rows are evicted and export is newest last") {
    testsupport::TempDir dir;
    auto wb = Workbook::open(small(3, 2), dir / "w", fixed_clock());
    for (int i = 0; i < 5; ++i) wb.append_row(row(i * 150, {i, i * 0.5}));
    CHECK(wb.size() == 3);
    CHECK(wb.appended() == 5);
    CHECK(export_string(wb) == "ts,ch1,ch2\n300,2,1\n450,3,1.5\n600,4,2\n");
}

TEST_CASE("ring buffer law holds for random geometries") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        testsupport::TempDir dir;
        const int rows = 1 + static_cast<int>(rng() % 20);
        const int channels = 1 + static_cast<int>(rng() % 6);
        const int n = static_cast<int>(rng() % 70);
        WorkbookOptions opt = fixed_clock();
        opt.compact_after = 1 + static_cast<std::int64_t>(rng() % 30);
        std::vector<WorkbookRow> all;
        {
            auto wb = Workbook::open(small(rows, channels), dir / "w", opt);
            std::int64_t ts = 0;
            for (int i = 0; i < n; ++i) {
                ts += 1 + static_cast<std::int64_t>(rng() % 300);
                WorkbookRow r{ts, {}};
                for (int c = 0; c < channels; ++c) {
                    if (rng() % 5 == 0) r.channels.push_back(std::nullopt);
                    else r.channels.push_back(static_cast<double>(static_cast<int>(rng() % 20001) - 10000) / 100.0);
                }
                wb.append_row(r);
                all.push_back(r);
            }
            const std::size_t keep = std::min<std::size_t>(all.size(), static_cast<std::size_t>(rows));
            const std::vector<WorkbookRow> expected(all.end() - static_cast<std::ptrdiff_t>(keep), all.end());
            CHECK(wb.rows() == expected);

            std::istringstream in(export_string(wb));
            int parsed_channels = 0;
            CHECK(read_rows_csv(in, &parsed_channels) == expected);
            CHECK(parsed_channels == channels);
        }
        // The journal restores the same ring.
        auto reopened = Workbook::open(small(rows, channels), dir / "w", opt);
        const std::size_t keep = std::min<std::size_t>(all.size(), static_cast<std::size_t>(rows));
        CHECK(reopened.rows() == std::vector<WorkbookRow>(all.end() - static_cast<std::ptrdiff_t>(keep), all.end()));
        CHECK(reopened.appended() == n);
    }
}

TEST_CASE("export is byte stable") {
    testsupport::TempDir dir;
    auto wb = Workbook::open(small(10, 3), dir / "w", fixed_clock());
    wb.append_row(row(0, {97, 98.6, std::nullopt}));
    wb.append_row(row(150, {96, -0.25, 701}));
    const auto first = export_string(wb);
    CHECK(first == "ts,ch1,ch2,ch3\n0,97,98.6,\n150,96,-0.25,701\n");
    CHECK(export_string(wb) == first);
    CHECK(wb.export_csv(dir / "w.csv") == 2);
    CHECK(testsupport::read_file(dir / "w.csv") == first);
    CHECK_FALSE(std::filesystem::exists(dir / "w.csv.tmp"));
}

TEST_CASE("a torn journal line is dropped on reopen") {
    testsupport::TempDir dir;
    {
        auto wb = Workbook::open(small(5, 2), dir / "w", fixed_clock());
        wb.append_row(row(0, {1, 2}));
        wb.append_row(row(150, {3, 4}));
    }
    const auto journal = dir / "w.journal.csv";
    const auto good = testsupport::read_file(journal);
    testsupport::write_file(journal, good + "2,300,5");
    {
        auto wb = Workbook::open(small(5, 2), dir / "w", fixed_clock());
        CHECK(wb.size() == 2);
        CHECK(testsupport::read_file(journal) == good);
        CHECK(wb.append_row(row(300, {5, 6})) == 2);
    }
    // A garbled middle line cuts the journal there.
    testsupport::write_file(journal, good + "2,300,x,6\n3,450,7,8\n");
    auto wb = Workbook::open(small(5, 2), dir / "w", fixed_clock());
    CHECK(wb.size() == 2);
    CHECK(wb.append_row(row(300, {5, 6})) == 2);
}

TEST_CASE("rotate archives a full workbook and starts empty") {
    testsupport::TempDir dir;
    WorkbookOptions opt = fixed_clock();
    opt.rotate = true;
    auto wb = Workbook::open(small(3, 1), dir / "w", opt);
    for (int i = 0; i < 7; ++i) wb.append_row(row(i * 150, {i}));
    REQUIRE(wb.archives().size() == 2);
    CHECK(wb.archives()[0] == dir / "w.0.csv");
    CHECK(wb.archives()[1] == dir / "w.450.csv");
    CHECK(testsupport::read_file(dir / "w.0.csv") == "ts,ch1\n0,0\n150,1\n300,2\n");
    CHECK(testsupport::read_file(dir / "w.450.csv") == "ts,ch1\n450,3\n600,4\n750,5\n");
    CHECK(export_string(wb) == "ts,ch1\n900,6\n");
    CHECK(wb.appended() == 7);
}

TEST_CASE("channel map parsing") {
    auto m = parse_channel_map("/a/b=ch1,/a/c=ch3,/x=2", 10);
    CHECK(m == std::map<std::string, int>{{"/a/b", 1}, {"/a/c", 3}, {"/x", 2}});
    CHECK(parse_channel_map("", 10).empty());
    CHECK(code_of([] { parse_channel_map("/a=ch1,/b=ch1", 10); }) == ErrorCode::validation);
    CHECK(code_of([] { parse_channel_map("/a=ch1,/a=ch2", 10); }) == ErrorCode::validation);
    CHECK(code_of([] { parse_channel_map("/a=ch0", 10); }) == ErrorCode::validation);
    CHECK(code_of([] { parse_channel_map("/a=ch11", 10); }) == ErrorCode::validation);
    CHECK(code_of([] { parse_channel_map("/a=chx", 10); }) == ErrorCode::validation);
    CHECK(code_of([] { parse_channel_map("/a", 10); }) == ErrorCode::validation);
}

TEST_CASE("session slots updates by client timestamp") {
    testsupport::TempDir dir;
    auto wb = Workbook::open(small(100, 3), dir / "w", fixed_clock());
    RecordingSession session(wb, {{"/d/a", 1}, {"/d/b", 2}, {"/d/silent", 3}}, nullptr);
    session.consume({{"event", "snapshot"}, {"path", "/d/a"}, {"value", 9}, {"ts", 0}});
    session.consume({{"event", "ready"}, {"sub", 1}, {"seq", 0}});
    session.consume(update("/d/a", 1, 0));
    session.consume(update("/d/b", 10, 0));
    session.consume(update("/d/other", 5, 0));
    session.consume(update("/d/a", 2, 150));
    session.consume(update("/d/b", "AB_Normal", 160));
    session.consume(update("/d/a", 3, 600));
    session.flush();
    CHECK(session.events_seen() == 6);
    CHECK(export_string(wb) == "ts,ch1,ch2,ch3\n"
                               "0,1,10,\n"
                               "150,2,10,\n"
                               "300,2,10,\n"
                               "450,2,10,\n"
                               "600,3,10,\n");
    session.flush();
    CHECK(wb.size() == 5);
}

TEST_CASE("session stops on overflow") {
    testsupport::TempDir dir;
    auto wb = Workbook::open(small(10, 1), dir / "w", fixed_clock());
    std::vector<json> queue = {update("/p", 1, 0), {{"event", "overflow"}, {"ok", false}, {"error", "overflow"}}};
    std::mutex mu;
    RecordingSession session(wb, {{"/p", 1}}, [&](std::chrono::milliseconds) -> std::optional<json> {
        std::lock_guard lock(mu);
        if (queue.empty()) return std::nullopt;
        auto ev = queue.front();
        queue.erase(queue.begin());
        return ev;
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    CHECK(code_of([&] { session.stop(); }) == ErrorCode::overflow);
}

TEST_CASE("session stop drains queued events and flushes the last slot") {
    testsupport::TempDir dir;
    auto wb = Workbook::open(small(100, 1), dir / "w", fixed_clock());
    std::vector<json> queue;
    for (int i = 0; i < 50; ++i) queue.push_back(update("/p", i, i * 150, i + 1));
    std::mutex mu;
    std::size_t next = 0;
    RecordingSession session(wb, {{"/p", 1}}, [&](std::chrono::milliseconds) -> std::optional<json> {
        std::lock_guard lock(mu);
        if (next == queue.size()) return std::nullopt;
        return queue[next++];
    });
    session.stop();
    CHECK(session.events_seen() == 50);
    const auto rows = wb.rows();
    REQUIRE(rows.size() == 50);
    CHECK(rows.back().row_ts == 49 * 150);
    CHECK(rows.back().channels[0] == 49.0);
}

TEST_CASE("csv reader rejects malformed exports") {
    std::istringstream bad_header("time,ch1\n0,1\n");
    CHECK(code_of([&] { read_rows_csv(bad_header); }) == ErrorCode::parse);
    std::istringstream bad_cell("ts,ch1\n0,abc\n");
    CHECK(code_of([&] { read_rows_csv(bad_cell); }) == ErrorCode::parse);
    std::istringstream short_row("ts,ch1,ch2\n0,1\n");
    CHECK(code_of([&] { read_rows_csv(short_row); }) == ErrorCode::parse);
    std::istringstream ok("ts,ch1,ch2\n0,,2.5\n");
    int ch = 0;
    CHECK(read_rows_csv(ok, &ch) == std::vector<WorkbookRow>{row(0, {std::nullopt, 2.5})});
    CHECK(ch == 2);
}
