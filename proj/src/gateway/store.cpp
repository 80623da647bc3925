#include "cardiotel/store.h"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <sys/stat.h>
#include <unistd.h>

#include "cardiotel/error.h"

namespace cardiotel::gateway {

namespace fs = std::filesystem;

namespace {

constexpr const char* kLogName = "log.ndjson";
constexpr const char* kSnapshotName = "snapshot.json";

void write_file_atomic(const fs::path& path, const std::string& content, bool sync) {
    const fs::path tmp = path.string() + ".tmp";
    net::Fd fd(::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
    if (!fd.valid()) fail(ErrorCode::io, "cannot write " + tmp.string() + ": " + std::strerror(errno));
    std::string_view rest = content;
    while (!rest.empty()) {
        const ssize_t n = ::write(fd.get(), rest.data(), rest.size());
        if (n < 0 && errno == EINTR) continue;
        if (n < 0) fail(ErrorCode::io, "write " + tmp.string() + ": " + std::strerror(errno));
        rest.remove_prefix(static_cast<std::size_t>(n));
    }
    if (sync) ::fsync(fd.get());
    fd.reset();
    fs::rename(tmp, path);
}

} // namespace

bool valid_segment(std::string_view seg) {
    return !seg.empty() && std::all_of(seg.begin(), seg.end(), [](char c) {
        return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    });
}

bool valid_path(std::string_view path) {
    if (path.size() < 2 || path.front() != '/') return false;
    path.remove_prefix(1);
    while (true) {
        const auto slash = path.find('/');
        if (!valid_segment(path.substr(0, slash))) return false;
        if (slash == std::string_view::npos) return true;
        path.remove_prefix(slash + 1);
    }
}

bool valid_prefix(std::string_view prefix) { return prefix == "/" || valid_path(prefix); }

bool covers(std::string_view prefix, std::string_view path) {
    if (prefix == "/") return true;
    if (path.size() < prefix.size() || path.substr(0, prefix.size()) != prefix) return false;
    return path.size() == prefix.size() || path[prefix.size()] == '/';
}

void check_value(const nlohmann::json& value) {
    if (value.is_string()) {
        if (value.get_ref<const std::string&>().size() > kMaxValueBytes)
            fail(ErrorCode::validation, "value exceeds 4 KiB");
        return;
    }
    if (value.is_number_integer() || value.is_number_unsigned()) return;
    if (value.is_number_float() && std::isfinite(value.get<double>())) return;
    fail(ErrorCode::validation, "value must be a string, integer or decimal");
}

nlohmann::json event_json(std::string_view kind, std::int64_t sub, const std::string& path,
                          const TreeEntry& e) {
    return {{"event", kind},      {"sub", sub},     {"path", path},     {"value", e.value},
            {"server_ts", e.server_ts}, {"ts", e.client_ts}, {"seq", e.seq}};
}

// --- Subscription ----------------------------------------------------------

std::optional<nlohmann::json> Subscription::pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    auto ev = std::move(queue_.front());
    queue_.pop_front();
    if (unbounded_ > 0) --unbounded_;
    return ev;
}

bool Subscription::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

bool Subscription::overflowed() const {
    std::lock_guard lock(mu_);
    return overflow_;
}

std::size_t Subscription::pending() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

void Subscription::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool Subscription::push(nlohmann::json event) {
    {
        std::lock_guard lock(mu_);
        if (closed_) return !overflow_;
        if (queue_.size() - unbounded_ >= limit_) {
            // Undeliverable backlog is dropped; the consumer gets one explicit
            // close event instead of a silent gap.
            overflow_ = true;
            closed_ = true;
            queue_.clear();
            unbounded_ = 0;
            queue_.push_back({{"event", "overflow"}, {"ok", false}, {"error", "overflow"}, {"sub", id_}});
        } else {
            queue_.push_back(std::move(event));
        }
    }
    cv_.notify_all();
    return !overflow_;
}

void Subscription::push_unbounded(nlohmann::json event) {
    {
        std::lock_guard lock(mu_);
        queue_.push_back(std::move(event));
        ++unbounded_;
    }
    cv_.notify_all();
}

// --- PathStore -------------------------------------------------------------

PathStore::PathStore(fs::path dir, StoreOptions options)
    : dir_(std::move(dir)), options_(options) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) fail(ErrorCode::io, "cannot create data dir " + dir_.string() + ": " + ec.message());
    replay();
    log_fd_ = net::Fd(::open((dir_ / kLogName).c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644));
    if (!log_fd_.valid()) fail(ErrorCode::io, "cannot open write log: " + std::string(std::strerror(errno)));
}

PathStore::~PathStore() {
    std::lock_guard lock(mu_);
    for (auto& s : subs_) s->close();
}

void PathStore::replay() {
    const auto snap_path = dir_ / kSnapshotName;
    if (fs::exists(snap_path)) {
        std::ifstream in(snap_path);
        nlohmann::json snap;
        try {
            snap = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::io, "corrupt snapshot " + snap_path.string() + ": " + e.what());
        }
        seq_ = snap.at("seq").get<std::int64_t>();
        const auto& meta = snap.at("meta");
        for (const auto& [path, value] : snap.at("values").items()) {
            const auto& m = meta.at(path);
            tree_[path] = TreeEntry{value, m.at("server_ts").get<std::int64_t>(),
                                    m.at("ts").get<std::int64_t>(), m.at("writer").get<std::string>(),
                                    m.at("seq").get<std::int64_t>()};
        }
    }

    const auto log_path = dir_ / kLogName;
    std::ifstream in(log_path, std::ios::binary);
    if (!in) return;
    std::string line;
    std::streamoff good_end = 0;
    bool torn = false;
    while (true) {
        const std::streamoff start = in.tellg();
        if (!std::getline(in, line)) break;
        if (in.eof()) {
            // No trailing newline: the process died mid-append.
            torn = true;
            good_end = start;
            break;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
            const auto seq = rec.at("seq").get<std::int64_t>();
            if (seq > seq_) {
                tree_[rec.at("path").get<std::string>()] =
                    TreeEntry{rec.at("value"), rec.at("server_ts").get<std::int64_t>(),
                              rec.value("ts", std::int64_t{0}), rec.at("writer").get<std::string>(), seq};
                seq_ = seq;
                ++since_snapshot_;
            }
        } catch (const nlohmann::json::exception&) {
            torn = true;
            good_end = start;
            break;
        }
        good_end = in.tellg();
    }
    in.close();
    if (torn) fs::resize_file(log_path, static_cast<std::uintmax_t>(good_end));
}

std::vector<WriteAck> PathStore::commit(const std::vector<StagedWrite>& writes,
                                        const std::string& writer, std::int64_t server_ts) {
    for (const auto& w : writes) {
        if (!valid_path(w.path)) fail(ErrorCode::validation, "malformed path '" + w.path + "'");
        check_value(w.value);
    }

    std::lock_guard lock(mu_);
    std::string block;
    std::int64_t seq = seq_;
    for (const auto& w : writes) {
        nlohmann::json rec = {{"seq", ++seq},         {"path", w.path},   {"value", w.value},
                              {"server_ts", server_ts}, {"writer", writer}, {"ts", w.client_ts}};
        block += rec.dump();
        block += '\n';
    }
    // The whole group goes to the log before any ack or fan-out.
    std::string_view rest = block;
    while (!rest.empty()) {
        const ssize_t n = ::write(log_fd_.get(), rest.data(), rest.size());
        if (n < 0 && errno == EINTR) continue;
        if (n < 0) fail(ErrorCode::io, "log append failed: " + std::string(std::strerror(errno)));
        rest.remove_prefix(static_cast<std::size_t>(n));
    }
    if (options_.fsync) ::fdatasync(log_fd_.get());

    std::vector<WriteAck> acks;
    acks.reserve(writes.size());
    for (const auto& w : writes) {
        auto& entry = tree_[w.path];
        entry = TreeEntry{w.value, server_ts, w.client_ts, writer, ++seq_};
        acks.push_back({seq_, server_ts});
        for (const auto& sub : subs_) {
            if (covers(sub->prefix(), w.path)) sub->push(event_json("update", sub->id(), w.path, entry));
        }
    }
    std::erase_if(subs_, [](const auto& s) { return s->closed(); });

    since_snapshot_ += static_cast<std::int64_t>(writes.size());
    if (options_.snapshot_every > 0 && since_snapshot_ >= options_.snapshot_every)
        write_snapshot_locked();
    return acks;
}

void PathStore::write_snapshot_locked() {
    nlohmann::json values = nlohmann::json::object();
    nlohmann::json meta = nlohmann::json::object();
    for (const auto& [path, e] : tree_) {
        values[path] = e.value;
        meta[path] = {{"server_ts", e.server_ts}, {"ts", e.client_ts}, {"writer", e.writer}, {"seq", e.seq}};
    }
    nlohmann::json snap = {{"seq", seq_}, {"values", values}, {"meta", meta}};
    write_file_atomic(dir_ / kSnapshotName, snap.dump() + "\n", options_.fsync);
    // Entries up to the watermark now live in the snapshot.
    if (::ftruncate(log_fd_.get(), 0) != 0)
        fail(ErrorCode::io, "log truncate failed: " + std::string(std::strerror(errno)));
    since_snapshot_ = 0;
}

void PathStore::snapshot_now() {
    std::lock_guard lock(mu_);
    write_snapshot_locked();
}

std::optional<TreeEntry> PathStore::get(const std::string& path) const {
    std::lock_guard lock(mu_);
    const auto it = tree_.find(path);
    if (it == tree_.end()) return std::nullopt;
    return it->second;
}

std::map<std::string, TreeEntry> PathStore::entries_under(const std::string& prefix) const {
    std::lock_guard lock(mu_);
    std::map<std::string, TreeEntry> out;
    const auto start = prefix == "/" ? tree_.begin() : tree_.lower_bound(prefix);
    for (auto it = start; it != tree_.end(); ++it) {
        if (covers(prefix, it->first)) {
            out.insert(*it);
        } else if (prefix != "/" && it->first.compare(0, prefix.size(), prefix) != 0) {
            break;
        }
    }
    return out;
}

std::shared_ptr<Subscription> PathStore::subscribe(const std::string& prefix) {
    if (!valid_prefix(prefix)) fail(ErrorCode::validation, "malformed prefix '" + prefix + "'");
    std::lock_guard lock(mu_);
    auto sub = std::make_shared<Subscription>(next_sub_id_++, prefix, options_.sub_buffer_limit);
    // The snapshot is queued outside the live-update bound.
    for (const auto& [path, entry] : tree_) {
        if (covers(prefix, path)) sub->push_unbounded(event_json("snapshot", sub->id(), path, entry));
    }
    sub->push_unbounded({{"event", "ready"}, {"sub", sub->id()}, {"seq", seq_}});
    subs_.push_back(sub);
    return sub;
}

void PathStore::unsubscribe(std::int64_t id) {
    std::lock_guard lock(mu_);
    for (auto& s : subs_) {
        if (s->id() == id) s->close();
    }
    std::erase_if(subs_, [&](const auto& s) { return s->id() == id; });
}

std::int64_t PathStore::last_seq() const {
    std::lock_guard lock(mu_);
    return seq_;
}

} // namespace cardiotel::gateway
