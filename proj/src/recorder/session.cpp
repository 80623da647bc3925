#include <set>
#include <sstream>

#include "cardiotel/error.h"
#include "cardiotel/workbook.h"

namespace cardiotel::recorder {

std::map<std::string, int> parse_channel_map(const std::string& text, int max_channel) {
    std::map<std::string, int> out;
    std::set<int> used;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.rfind('=');
        if (eq == std::string::npos || eq == 0)
            fail(ErrorCode::validation, "channel map entry '" + item + "' is not path=chN");
        const std::string path = item.substr(0, eq);
        std::string ch = item.substr(eq + 1);
        if (ch.rfind("ch", 0) == 0) ch = ch.substr(2);
        int index = 0;
        try {
            std::size_t used_chars = 0;
            index = std::stoi(ch, &used_chars);
            if (used_chars != ch.size()) throw std::invalid_argument(ch);
        } catch (const std::exception&) {
            fail(ErrorCode::validation, "channel map entry '" + item + "' has a bad channel");
        }
        if (index < 1 || index > max_channel)
            fail(ErrorCode::validation, "channel " + std::to_string(index) + " outside 1.." + std::to_string(max_channel));
        if (!used.insert(index).second)
            fail(ErrorCode::validation, "duplicate channel index ch" + std::to_string(index));
        if (!out.emplace(path, index).second) fail(ErrorCode::validation, "path " + path + " mapped twice");
    }
    return out;
}

RecordingSession::RecordingSession(Workbook& workbook, std::map<std::string, int> channel_map,
                                   EventSource source)
    : workbook_(workbook), channel_map_(std::move(channel_map)), source_(std::move(source)),
      held_(static_cast<std::size_t>(workbook.config().data_channels)) {
    std::set<int> used;
    for (const auto& [path, ch] : channel_map_) {
        if (ch < 1 || ch > workbook.config().data_channels)
            fail(ErrorCode::validation, "channel " + std::to_string(ch) + " outside the workbook");
        if (!used.insert(ch).second) fail(ErrorCode::validation, "duplicate channel index ch" + std::to_string(ch));
    }
    if (source_) worker_ = std::thread([this] { run(); });
}

RecordingSession::~RecordingSession() {
    stop_ = true;
    if (worker_.joinable()) worker_.join();
}

void RecordingSession::run() {
    try {
        while (!stop_) {
            auto ev = source_(std::chrono::milliseconds{100});
            if (ev) consume(*ev);
        }
        // Drain whatever was already queued when stop was requested.
        while (auto ev = source_(std::chrono::milliseconds{0})) consume(*ev);
    } catch (...) {
        std::lock_guard lock(mu_);
        error_ = std::current_exception();
    }
}

void RecordingSession::stop() {
    stop_ = true;
    if (worker_.joinable()) worker_.join();
    {
        std::lock_guard lock(mu_);
        if (error_) std::rethrow_exception(error_);
    }
    flush();
}

void RecordingSession::emit_slot_locked(std::int64_t slot_ts) {
    workbook_.append_row({slot_ts, held_});
}

void RecordingSession::consume(const nlohmann::json& event) {
    if (!event.is_object()) return;
    const auto kind = event.value("event", std::string{});
    if (kind == "overflow") fail(ErrorCode::overflow, "recording subscription overflowed");
    if (kind != "update") return;
    ++events_seen_;

    const auto it = channel_map_.find(event.value("path", std::string{}));
    if (it == channel_map_.end()) return;
    const auto& value = event["value"];
    const std::int64_t ts = event.value("ts", std::int64_t{0});
    const std::int64_t interval = workbook_.config().data_interval_ms;
    // Floor division so negative timestamps land on the grid too.
    std::int64_t slot = ts / interval * interval;
    if (ts < 0 && ts % interval != 0) slot -= interval;

    std::lock_guard lock(mu_);
    if (!slot_) {
        slot_ = slot;
    } else if (slot > *slot_) {
        emit_slot_locked(*slot_);
        // Silent slots between two data-bearing ones repeat the held values,
        // capped at one workbook's worth.
        const std::int64_t gap = (slot - *slot_) / interval - 1;
        const std::int64_t fill = std::min<std::int64_t>(gap, workbook_.config().data_rows);
        for (std::int64_t k = gap - fill + 1; k <= gap; ++k) emit_slot_locked(*slot_ + k * interval);
        slot_ = slot;
    }
    // Late updates (slot < current) still refresh the held value.
    auto& cell = held_[static_cast<std::size_t>(it->second - 1)];
    if (value.is_number()) {
        cell = value.get<double>();
    }
}

void RecordingSession::flush() {
    std::lock_guard lock(mu_);
    if (!slot_) return;
    emit_slot_locked(*slot_);
    slot_.reset();
}

} // namespace cardiotel::recorder
