#include "cardiotel/gateway.h"

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>

#include "cardiotel/error.h"

namespace cardiotel::gateway {

namespace {

std::string wire_code(ErrorCode code) {
    switch (code) {
    case ErrorCode::auth:
    case ErrorCode::conflict:
    case ErrorCode::overflow:
    case ErrorCode::not_found:
    case ErrorCode::validation: return std::string(to_string(code));
    default: return "validation";
    }
}

void set_from_json(GatewayConfig& cfg, const nlohmann::json& j) {
    if (j.contains("listen")) cfg.listen = j["listen"].get<std::string>();
    if (j.contains("data_dir")) cfg.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("token_store")) cfg.token_store = j["token_store"].get<std::string>();
    if (j.contains("threshold_file")) cfg.threshold_file = j["threshold_file"].get<std::string>();
    if (j.contains("sub_buffer_limit")) cfg.sub_buffer_limit = j["sub_buffer_limit"].get<std::size_t>();
    if (j.contains("session_ttl_ms")) cfg.session_ttl_ms = j["session_ttl_ms"].get<std::int64_t>();
    if (j.contains("snapshot_every")) cfg.snapshot_every = j["snapshot_every"].get<std::int64_t>();
    if (j.contains("fsync")) cfg.fsync = j["fsync"].get<bool>();
    if (j.contains("static_dir")) cfg.static_dir = j["static_dir"].get<std::string>();
    if (j.contains("password_hash")) cfg.password_hash = j["password_hash"].get<std::string>();
}

} // namespace

void apply_env_overrides(GatewayConfig& cfg, const std::function<const char*(const char*)>& getenv_fn) {
    static const std::array<std::string_view, 10> keys = {
        "listen", "data_dir", "token_store", "threshold_file", "sub_buffer_limit",
        "session_ttl_ms", "snapshot_every", "fsync", "static_dir", "password_hash"};
    nlohmann::json overrides = nlohmann::json::object();
    for (auto key : keys) {
        std::string var = "CARDIOTEL_";
        for (char c : key) var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        const char* raw = getenv_fn(var.c_str());
        if (raw == nullptr) continue;
        const std::string text = raw;
        if (key == "sub_buffer_limit" || key == "session_ttl_ms" || key == "snapshot_every") {
            try {
                overrides[std::string(key)] = std::stoll(text);
            } catch (const std::exception&) {
                fail(ErrorCode::config, var + " must be an integer");
            }
        } else if (key == "fsync") {
            overrides["fsync"] = text == "1" || text == "true";
        } else {
            overrides[std::string(key)] = text;
        }
    }
    set_from_json(cfg, overrides);
}

GatewayConfig load_gateway_config(const std::string& path) {
    GatewayConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) fail(ErrorCode::io, "cannot open config " + path);
        try {
            set_from_json(cfg, nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::config, "config " + path + ": " + e.what());
        }
    }
    apply_env_overrides(cfg, [](const char* name) { return std::getenv(name); });
    return cfg;
}

std::int64_t wall_clock_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string vitals_path(const std::string& device_id, std::string_view metric) {
    return "/deviceData/" + device_id + "/vitals/" + std::string(metric);
}

Gateway::Gateway(GatewayConfig cfg, Clock clock)
    : cfg_(std::move(cfg)), clock_(std::move(clock)),
      store_(cfg_.data_dir, StoreOptions{cfg_.sub_buffer_limit, cfg_.snapshot_every, cfg_.fsync}),
      users_(cfg_.data_dir / "users.json", hash_strength_from_string(cfg_.password_hash)),
      devices_(cfg_.token_store_path()) {
    reload_thresholds();
}

void Gateway::reload_thresholds() {
    ThresholdConfig next;
    if (!cfg_.threshold_file.empty()) next = load_thresholds(cfg_.threshold_file.string());
    std::lock_guard lock(write_mu_);
    thresholds_ = next;
}

ThresholdConfig Gateway::thresholds() {
    std::lock_guard lock(write_mu_);
    return thresholds_;
}

std::string Gateway::register_user(const std::string& name, const std::string& email,
                                   const std::string& contact, const std::string& password,
                                   const std::string& c_password) {
    return users_.register_user(name, email, contact, password, c_password, clock_());
}

SessionToken Gateway::login(const std::string& email, const std::string& password) {
    auto id = users_.verify(email, password);
    if (!id) fail(ErrorCode::auth, "invalid credentials");
    return sessions_.issue(*id, clock_(), cfg_.session_ttl_ms);
}

std::string Gateway::provision_device(const std::string& device_id) {
    return devices_.provision(device_id);
}

Gateway::Principal Gateway::authenticate(const std::string& token) {
    if (auto dev = devices_.device_for(token)) return {Principal::Kind::Device, *dev};
    if (auto user = sessions_.user_for(token, clock_())) return {Principal::Kind::User, *user};
    fail(ErrorCode::auth, "invalid or expired token");
}

void Gateway::authorize_read(const Principal& who, const std::string& path) {
    // Caregivers read everything; devices only their own namespace.
    if (who.kind == Principal::Kind::User) return;
    if (!covers("/deviceData/" + who.id, path))
        fail(ErrorCode::auth, "device may not access " + path);
}

void Gateway::authorize_write(const Principal& who, const std::string& path) {
    const std::string ns = who.kind == Principal::Kind::Device ? "/deviceData/" + who.id
                                                               : "/users/" + who.id;
    if (!covers(ns, path)) fail(ErrorCode::auth, "token may not write " + path);
}

WriteAck Gateway::set_path(const PathWrite& w) {
    const auto who = authenticate(w.token);
    if (!valid_path(w.path)) fail(ErrorCode::validation, "malformed path '" + w.path + "'");
    authorize_write(who, w.path);
    check_value(w.value);
    const std::string writer = (who.kind == Principal::Kind::Device ? "device:" : "user:") + who.id;
    std::lock_guard lock(write_mu_);
    return store_.commit({{w.path, w.value, w.ts}}, writer, clock_()).front();
}

std::optional<TreeEntry> Gateway::get_path(const std::string& path, const std::string& token) {
    const auto who = authenticate(token);
    if (!valid_path(path)) fail(ErrorCode::validation, "malformed path '" + path + "'");
    authorize_read(who, path);
    return store_.get(path);
}

std::shared_ptr<Subscription> Gateway::subscribe(const std::string& prefix, const std::string& token) {
    const auto who = authenticate(token);
    if (!valid_prefix(prefix)) fail(ErrorCode::validation, "malformed prefix '" + prefix + "'");
    authorize_read(who, prefix);
    return store_.subscribe(prefix);
}

void Gateway::unsubscribe(std::int64_t sub_id) { store_.unsubscribe(sub_id); }

WriteAck Gateway::ingest_sample(const std::string& device_token, const VitalSample& sample) {
    auto device = devices_.device_for(device_token);
    if (!device) fail(ErrorCode::auth, "unknown device token");
    validate(sample);

    const auto& e = sample.ecg;
    const std::array<nlohmann::json, 11> values = {
        sample.spo2, sample.temp_f, sample.sbp, sample.dbp, sample.hr, e.ecg_base,
        e.p,         e.q,           e.r,        e.s,        e.t};

    std::lock_guard lock(write_mu_);
    std::vector<StagedWrite> group;
    group.reserve(values.size() + kVitalMetrics.size() + 1);
    for (std::size_t i = 0; i < values.size(); ++i)
        group.push_back({vitals_path(*device, kVitalLeaves[i]), values[i], sample.ts});
    for (auto& n : alert::evaluate(*device, sample, thresholds_))
        group.push_back({std::move(n.path), std::move(n.value), sample.ts});

    const auto now = clock_();
    const auto acks = store_.commit(group, "device:" + *device, now);

    const auto statuses = classify_sample(sample, thresholds_);
    for (auto metric : kVitalMetrics)
        alerts_.on_status(*device, metric, statuses.at(metric), alert::metric_value(sample, metric), sample.ts);
    return acks.back();
}

alert::AlertEvent Gateway::acknowledge(std::int64_t alert_id, const std::string& token) {
    const auto who = authenticate(token);
    if (who.kind != Principal::Kind::User) fail(ErrorCode::auth, "only users acknowledge alerts");
    std::lock_guard lock(write_mu_);
    return alerts_.acknowledge(alert_id, who.id, clock_());
}

std::vector<alert::AlertEvent> Gateway::alerts(const std::string& token) {
    const auto who = authenticate(token);
    std::lock_guard lock(write_mu_);
    std::vector<alert::AlertEvent> out;
    for (const auto& ev : alerts_.events()) {
        if (who.kind == Principal::Kind::User || ev.device_id == who.id) out.push_back(ev);
    }
    return out;
}

void Gateway::export_alerts_csv(std::ostream& out) {
    std::lock_guard lock(write_mu_);
    alerts_.export_csv(out);
}

Gateway::Dispatch Gateway::handle(const nlohmann::json& req) {
    Dispatch d;
    try {
        if (!req.is_object() || !req.contains("op") || !req["op"].is_string())
            fail(ErrorCode::validation, "request needs an op");
        const auto op = req["op"].get<std::string>();
        const auto token = req.value("token", std::string{});
        auto str = [&](const char* key) {
            if (!req.contains(key) || !req[key].is_string())
                fail(ErrorCode::validation, std::string("missing string field ") + key);
            return req[key].get<std::string>();
        };

        if (op == "set") {
            if (!req.contains("value")) fail(ErrorCode::validation, "set needs a value");
            const auto ack = set_path({str("path"), req["value"], req.value("ts", std::int64_t{0}), token});
            d.reply = {{"ok", true}, {"seq", ack.seq}, {"server_ts", ack.server_ts}};
        } else if (op == "get") {
            auto entry = get_path(str("path"), token);
            if (entry) {
                d.reply = {{"ok", true},          {"found", true},
                           {"value", entry->value}, {"server_ts", entry->server_ts},
                           {"ts", entry->client_ts}, {"seq", entry->seq}};
            } else {
                d.reply = {{"ok", true}, {"found", false}};
            }
        } else if (op == "sub") {
            d.subscription = subscribe(str("prefix"), token);
            d.reply = {{"ok", true}, {"sub", d.subscription->id()}};
        } else if (op == "unsub") {
            authenticate(token);
            unsubscribe(req.value("sub", std::int64_t{0}));
            d.reply = {{"ok", true}};
        } else if (op == "ingest") {
            if (!req.contains("sample")) fail(ErrorCode::validation, "ingest needs a sample");
            VitalSample sample;
            try {
                sample = req["sample"].get<VitalSample>();
            } catch (const nlohmann::json::exception& e) {
                fail(ErrorCode::validation, std::string("malformed sample: ") + e.what());
            }
            const auto ack = ingest_sample(token, sample);
            d.reply = {{"ok", true}, {"seq", ack.seq}, {"server_ts", ack.server_ts}};
        } else if (op == "register") {
            const auto id = register_user(str("name"), str("email"), str("contact"), str("password"),
                                          str("c_password"));
            d.reply = {{"ok", true}, {"user_id", id}};
        } else if (op == "login") {
            const auto s = login(str("email"), str("password"));
            d.reply = {{"ok", true}, {"token", s.token}, {"user_id", s.user_id}, {"expiry_ts", s.expiry_ts}};
        } else if (op == "ack") {
            const auto ev = acknowledge(req.value("alert_id", std::int64_t{0}), token);
            d.reply = {{"ok", true}, {"alert", ev}};
        } else if (op == "alerts") {
            d.reply = {{"ok", true}, {"alerts", alerts(token)}};
        } else {
            fail(ErrorCode::validation, "unknown op '" + op + "'");
        }
    } catch (const Error& e) {
        d.subscription.reset();
        d.reply = {{"ok", false}, {"error", wire_code(e.code())}, {"message", e.what()}};
    } catch (const nlohmann::json::exception& e) {
        d.subscription.reset();
        d.reply = {{"ok", false}, {"error", "validation"}, {"message", e.what()}};
    }
    if (req.is_object() && req.contains("id")) d.reply["id"] = req["id"];
    return d;
}

} // namespace cardiotel::gateway
