#include <doctest.h>

#include <fstream>
#include <random>
#include <thread>

#include "cardiotel/error.h"
#include "cardiotel/store.h"
#include "support.h"

using namespace cardiotel;
using namespace cardiotel::gateway;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

StoreOptions opts(std::int64_t snapshot_every = 0, std::size_t limit = 1024) {
    StoreOptions o;
    o.snapshot_every = snapshot_every;
    o.sub_buffer_limit = limit;
    return o;
}

std::vector<json> drain(Subscription& sub) {
    std::vector<json> out;
    while (auto ev = sub.pop(0ms)) out.push_back(*ev);
    return out;
}

} // namespace

TEST_CASE("path grammar") {
    CHECK(valid_path("/a"));
    CHECK(valid_path("/deviceData/dev1/Notification/Oxygen_Level"));
    CHECK_FALSE(valid_path("/"));
    CHECK_FALSE(valid_path(""));
    CHECK_FALSE(valid_path("a/b"));
    CHECK_FALSE(valid_path("/a//b"));
    CHECK_FALSE(valid_path("/a/"));
    CHECK_FALSE(valid_path("/a/b-c"));
    CHECK_FALSE(valid_path("/a/../b"));
    CHECK_FALSE(valid_path("/a b"));
    CHECK(valid_prefix("/"));
    CHECK_FALSE(valid_prefix("//"));

    CHECK(covers("/", "/x"));
    CHECK(covers("/a", "/a"));
    CHECK(covers("/a", "/a/b"));
    CHECK_FALSE(covers("/a", "/ab"));
    CHECK_FALSE(covers("/a/b", "/a"));
}

TEST_CASE("value domain") {
    CHECK_NOTHROW(check_value("AB_Normal"));
    CHECK_NOTHROW(check_value(42));
    CHECK_NOTHROW(check_value(98.6));
    CHECK_NOTHROW(check_value(std::string(kMaxValueBytes, 'x')));
    CHECK_THROWS_AS(check_value(std::string(kMaxValueBytes + 1, 'x')), Error);
    CHECK_THROWS_AS(check_value(json::object()), Error);
    CHECK_THROWS_AS(check_value(json::array()), Error);
    CHECK_THROWS_AS(check_value(true), Error);
    CHECK_THROWS_AS(check_value(nullptr), Error);
}

TEST_CASE("last writer wins with monotone seq") {
    testsupport::TempDir dir;
    PathStore store(dir.path(), opts());
    CHECK(store.last_seq() == 0);
    CHECK_FALSE(store.get("/a/b"));
    auto a1 = store.commit({{"/a/b", 1, 10}}, "device:d", 100);
    auto a2 = store.commit({{"/a/b", "two", 20}, {"/a/c", 3.5, 20}}, "user:u", 200);
    CHECK(a1[0].seq == 1);
    CHECK(a2[0].seq == 2);
    CHECK(a2[1].seq == 3);
    auto e = store.get("/a/b");
    REQUIRE(e);
    CHECK(e->value == "two");
    CHECK(e->server_ts == 200);
    CHECK(e->client_ts == 20);
    CHECK(e->writer == "user:u");
    CHECK(e->seq == 2);
    CHECK(store.entries_under("/a").size() == 2);
    CHECK(store.entries_under("/a/b").size() == 1);
    CHECK(store.entries_under("/").size() == 2);
    CHECK(store.entries_under("/x").empty());
}

TEST_CASE("a bad write rejects the whole group") {
    testsupport::TempDir dir;
    PathStore store(dir.path(), opts());
    CHECK_THROWS_AS(store.commit({{"/ok", 1, 0}, {"/bad path", 2, 0}}, "w", 0), Error);
    CHECK_THROWS_AS(store.commit({{"/ok", 1, 0}, {"/ok2", json::array(), 0}}, "w", 0), Error);
    CHECK_FALSE(store.get("/ok"));
    CHECK(store.last_seq() == 0);
}

TEST_CASE("entries_under does not leak sibling prefixes") {
    testsupport::TempDir dir;
    PathStore store(dir.path(), opts());
    store.commit({{"/a/x", 1, 0}, {"/a0", 2, 0}, {"/a_b", 3, 0}, {"/ab/y", 4, 0}, {"/a/y/z", 5, 0}}, "w", 0);
    const auto under = store.entries_under("/a");
    CHECK(under.size() == 2);
    CHECK(under.count("/a/x"));
    CHECK(under.count("/a/y/z"));
}

TEST_CASE("state survives reopen via log and snapshot") {
    testsupport::TempDir dir;
    std::map<std::string, json> expected;
    std::mt19937_64 rng(5);
    {
        PathStore store(dir.path(), opts(7));
        for (int i = 0; i < 60; ++i) {
            const std::string path = "/d/k" + std::to_string(rng() % 12);
            const json value = static_cast<std::int64_t>(rng() % 1000);
            store.commit({{path, value, i}}, "w", i);
            expected[path] = value;
        }
        CHECK(store.last_seq() == 60);
    }
    CHECK(std::filesystem::exists(dir.path() / "snapshot.json"));
    PathStore reopened(dir.path(), opts(7));
    CHECK(reopened.last_seq() == 60);
    for (const auto& [path, value] : expected) {
        auto e = reopened.get(path);
        REQUIRE(e);
        CHECK(e->value == value);
    }
    CHECK(reopened.entries_under("/").size() == expected.size());
    CHECK(reopened.commit({{"/d/new", 1, 0}}, "w", 0)[0].seq == 61);
}

TEST_CASE("a torn final log line is discarded") {
    testsupport::TempDir dir;
    {
        PathStore store(dir.path(), opts());
        store.commit({{"/a", 1, 0}, {"/b", 2, 0}}, "w", 0);
    }
    const auto log = dir.path() / "log.ndjson";
    const auto good = testsupport::read_file(log);
    {
        std::ofstream out(log, std::ios::app | std::ios::binary);
        out << R"({"seq":3,"path":"/c","val)";
    }
    {
        PathStore store(dir.path(), opts());
        CHECK(store.last_seq() == 2);
        CHECK_FALSE(store.get("/c"));
        CHECK(testsupport::read_file(log) == good);
        store.commit({{"/c", 3, 0}}, "w", 0);
    }
    PathStore again(dir.path(), opts());
    CHECK(again.last_seq() == 3);
    CHECK(again.get("/c")->value == 3);
}

TEST_CASE("log entries already in the snapshot are skipped") {
    testsupport::TempDir dir;
    std::string log_before;
    {
        PathStore store(dir.path(), opts());
        store.commit({{"/a", 1, 0}, {"/b", 2, 0}}, "w", 0);
        log_before = testsupport::read_file(dir.path() / "log.ndjson");
        store.snapshot_now();
        store.commit({{"/a", 9, 0}}, "w", 0);
    }
    // Simulate a crash between writing the snapshot and truncating the log.
    const auto log = dir.path() / "log.ndjson";
    const auto tail = testsupport::read_file(log);
    testsupport::write_file(log, log_before + tail);
    PathStore store(dir.path(), opts());
    CHECK(store.last_seq() == 3);
    CHECK(store.get("/a")->value == 9);
    CHECK(store.get("/b")->value == 2);
}

TEST_CASE("corrupt snapshot is an io error") {
    testsupport::TempDir dir;
    testsupport::write_file(dir.path() / "snapshot.json", "{not json");
    try {
        PathStore store(dir.path(), opts());
        FAIL("expected io error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::io);
    }
}

TEST_CASE("subscription delivers snapshot, ready, then live updates in seq order") {
    testsupport::TempDir dir;
    PathStore store(dir.path(), opts());
    store.commit({{"/dev/b", 2, 5}, {"/dev/a", 1, 5}, {"/other", 0, 5}}, "w", 50);
    auto sub = store.subscribe("/dev");
    store.commit({{"/dev/c", 3, 6}, {"/other", 1, 6}, {"/dev/a", 4, 7}}, "w", 60);

    const auto evs = drain(*sub);
    REQUIRE(evs.size() == 5);
    CHECK(evs[0]["event"] == "snapshot");
    CHECK(evs[0]["path"] == "/dev/a");
    CHECK(evs[1]["path"] == "/dev/b");
    CHECK(evs[2]["event"] == "ready");
    CHECK(evs[2]["seq"] == 3);
    CHECK(evs[3]["event"] == "update");
    CHECK(evs[3]["path"] == "/dev/c");
    CHECK(evs[3]["seq"] == 4);
    CHECK(evs[3]["ts"] == 6);
    CHECK(evs[3]["server_ts"] == 60);
    CHECK(evs[4]["path"] == "/dev/a");
    CHECK(evs[4]["value"] == 4);
    CHECK(evs[4]["seq"] == 6);
    for (const auto& ev : evs) CHECK(ev["sub"] == sub->id());

    store.unsubscribe(sub->id());
    store.commit({{"/dev/a", 5, 0}}, "w", 0);
    CHECK(drain(*sub).empty());
    CHECK(sub->closed());
}

TEST_CASE("a slow subscriber overflows and is closed with one event") {
    testsupport::TempDir dir;
    PathStore store(dir.path(), opts(0, 8));
    // The snapshot does not count toward the bound.
    for (int i = 0; i < 20; ++i) store.commit({{"/s/k" + std::to_string(i), i, 0}}, "w", 0);
    auto slow = store.subscribe("/s");
    auto fast = store.subscribe("/s");
    CHECK(slow->pending() == 21);
    drain(*fast);
    for (int i = 0; i < 8; ++i) store.commit({{"/s/k0", i, 0}}, "w", 0);
    CHECK_FALSE(slow->overflowed());
    CHECK(drain(*fast).size() == 8);
    store.commit({{"/s/k0", 99, 0}}, "w", 0);
    CHECK(slow->overflowed());
    const auto evs = drain(*slow);
    REQUIRE(evs.size() == 1);
    CHECK(evs[0]["event"] == "overflow");
    CHECK(evs[0]["error"] == "overflow");
    CHECK(evs[0]["sub"] == slow->id());
    CHECK(slow->closed());
    // Other subscribers are unaffected.
    CHECK(drain(*fast).size() == 1);
    CHECK_FALSE(fast->overflowed());
}

TEST_CASE("concurrent writers: every subscriber sees one total order") {
    testsupport::TempDir dir;
    PathStore store(dir.path(), opts(50, 100000));
    auto s1 = store.subscribe("/");
    auto s2 = store.subscribe("/w");
    std::vector<std::thread> writers;
    for (int w = 0; w < 4; ++w) {
        writers.emplace_back([&, w] {
            for (int i = 0; i < 200; ++i)
                store.commit({{"/w/" + std::to_string(w), i, i}, {"/w/" + std::to_string(w) + "/x", i, i}},
                             "w" + std::to_string(w), i);
        });
    }
    for (auto& t : writers) t.join();
    auto seqs = [](const std::vector<json>& evs) {
        std::vector<std::int64_t> out;
        for (const auto& ev : evs)
            if (ev["event"] == "update") out.push_back(ev["seq"].get<std::int64_t>());
        return out;
    };
    const auto e1 = drain(*s1);
    const auto e2 = drain(*s2);
    const auto q1 = seqs(e1);
    CHECK(q1 == seqs(e2));
    REQUIRE(q1.size() == 1600);
    for (std::size_t i = 0; i < q1.size(); ++i) CHECK(q1[i] == static_cast<std::int64_t>(i) + 1);
    // Group members are adjacent.
    std::size_t first_update = 0;
    while (e1[first_update]["event"] != "update") ++first_update;
    for (std::size_t i = first_update; i < e1.size(); i += 2)
        CHECK(e1[i + 1]["path"].get<std::string>() == e1[i]["path"].get<std::string>() + "/x");
}

TEST_CASE("pop waits for an event or times out") {
    testsupport::TempDir dir;
    PathStore store(dir.path(), opts());
    auto sub = store.subscribe("/p");
    CHECK((*sub->pop(0ms))["event"] == "ready");
    const auto t0 = std::chrono::steady_clock::now();
    CHECK_FALSE(sub->pop(50ms));
    CHECK(std::chrono::steady_clock::now() - t0 >= 45ms);
    std::thread writer([&] {
        std::this_thread::sleep_for(20ms);
        store.commit({{"/p/q", 1, 0}}, "w", 0);
    });
    auto ev = sub->pop(2000ms);
    writer.join();
    REQUIRE(ev);
    CHECK((*ev)["path"] == "/p/q");
}
