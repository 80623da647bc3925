#pragma once

// Path-addressed realtime tree with an append-only write log, periodic
// snapshots and prefix subscriptions.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cardiotel/net.h"

namespace cardiotel::gateway {

inline constexpr std::size_t kMaxValueBytes = 4096;

// Absolute, at least one segment, segments of [A-Za-z0-9_].
bool valid_path(std::string_view path);
// A valid path or the root "/".
bool valid_prefix(std::string_view prefix);
bool valid_segment(std::string_view segment);
bool covers(std::string_view prefix, std::string_view path);

// Throws Error{validation} unless the value is a string of at most 4 KiB,
// an integer or a decimal.
void check_value(const nlohmann::json& value);

struct TreeEntry {
    nlohmann::json value;
    std::int64_t server_ts = 0;
    std::int64_t client_ts = 0;
    std::string writer;
    std::int64_t seq = 0;
};

struct WriteAck {
    std::int64_t seq = 0;
    std::int64_t server_ts = 0;
};

struct StagedWrite {
    std::string path;
    nlohmann::json value;
    std::int64_t client_ts = 0;
};

// Bounded FIFO of subscription events. The store pushes under its lock so
// every subscriber sees seq order; consumers pop from any thread.
class Subscription {
public:
    Subscription(std::int64_t id, std::string prefix, std::size_t limit)
        : id_(id), prefix_(std::move(prefix)), limit_(limit) {}

    std::int64_t id() const { return id_; }
    const std::string& prefix() const { return prefix_; }

    // Next event, or nullopt on timeout or once closed and drained.
    std::optional<nlohmann::json> pop(std::chrono::milliseconds timeout);
    bool closed() const;
    bool overflowed() const;
    std::size_t pending() const;
    void close();

private:
    friend class PathStore;
    // Returns false and switches to the overflow state when the queue is full.
    bool push(nlohmann::json event);
    void push_unbounded(nlohmann::json event);

    std::int64_t id_;
    std::string prefix_;
    std::size_t limit_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<nlohmann::json> queue_;
    // Snapshot events at the head of the queue, exempt from the bound.
    std::size_t unbounded_ = 0;
    bool closed_ = false;
    bool overflow_ = false;
};

struct StoreOptions {
    std::size_t sub_buffer_limit = 1024;
    // Full-tree snapshot after this many logged writes; 0 disables.
    std::int64_t snapshot_every = 1000;
    bool fsync = false;
};

class PathStore {
public:
    // Opens (creating if needed) the data directory and replays snapshot
    // plus log tail. A torn final log line is truncated away.
    PathStore(std::filesystem::path dir, StoreOptions options);
    ~PathStore();
    PathStore(const PathStore&) = delete;
    PathStore& operator=(const PathStore&) = delete;

    // Appends the group to the log, applies it and fans it out, all under
    // one lock, so the group occupies consecutive seq numbers.
    std::vector<WriteAck> commit(const std::vector<StagedWrite>& writes, const std::string& writer,
                                 std::int64_t server_ts);

    std::optional<TreeEntry> get(const std::string& path) const;
    std::map<std::string, TreeEntry> entries_under(const std::string& prefix) const;

    // Queue starts with the snapshot of every path under prefix (path order)
    // and a "ready" marker, followed by live updates.
    std::shared_ptr<Subscription> subscribe(const std::string& prefix);
    void unsubscribe(std::int64_t id);

    std::int64_t last_seq() const;
    void snapshot_now();

    const std::filesystem::path& dir() const { return dir_; }

private:
    void replay();
    void write_snapshot_locked();

    std::filesystem::path dir_;
    StoreOptions options_;
    mutable std::mutex mu_;
    std::map<std::string, TreeEntry> tree_;
    std::int64_t seq_ = 0;
    std::int64_t since_snapshot_ = 0;
    net::Fd log_fd_;
    std::int64_t next_sub_id_ = 1;
    std::vector<std::shared_ptr<Subscription>> subs_;
};

nlohmann::json event_json(std::string_view kind, std::int64_t sub, const std::string& path,
                          const TreeEntry& entry);

} // namespace cardiotel::gateway
