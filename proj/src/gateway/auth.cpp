#include "cardiotel/auth.h"

#include <fstream>

#include <json.hpp>
#include <sodium.h>

#include "cardiotel/error.h"
#include "cardiotel/store.h"

namespace cardiotel::gateway {

namespace fs = std::filesystem;

namespace {

void ensure_sodium() {
    static const int rc = sodium_init();
    if (rc < 0) fail(ErrorCode::config, "libsodium initialisation failed");
}

std::string to_hex(const unsigned char* data, std::size_t n) {
    std::string out(n * 2 + 1, '\0');
    sodium_bin2hex(out.data(), out.size(), data, n);
    out.pop_back();
    return out;
}

void save_json_atomic(const fs::path& file, const nlohmann::json& doc) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
        out << doc.dump(2) << '\n';
        if (!out.flush()) fail(ErrorCode::io, "cannot write " + tmp.string());
    }
    fs::rename(tmp, file);
}

} // namespace

std::string random_token() {
    ensure_sodium();
    unsigned char bytes[16];
    randombytes_buf(bytes, sizeof bytes);
    return to_hex(bytes, sizeof bytes);
}

bool valid_email(const std::string& email) {
    const auto at = email.find('@');
    return at != std::string::npos && at > 0 && at + 1 < email.size() &&
           email.find('@', at + 1) == std::string::npos;
}

HashStrength hash_strength_from_string(const std::string& name) {
    if (name == "interactive") return HashStrength::Interactive;
    if (name == "min" || name == "minimal") return HashStrength::Minimal;
    fail(ErrorCode::config, "unknown password hash strength '" + name + "'");
}

std::string hash_password(const std::string& password, HashStrength strength) {
    ensure_sodium();
    const bool fast = strength == HashStrength::Minimal;
    char out[crypto_pwhash_STRBYTES];
    if (crypto_pwhash_str_alg(out, password.data(), password.size(),
                              fast ? crypto_pwhash_OPSLIMIT_MIN : crypto_pwhash_OPSLIMIT_INTERACTIVE,
                              fast ? crypto_pwhash_MEMLIMIT_MIN : crypto_pwhash_MEMLIMIT_INTERACTIVE,
                              crypto_pwhash_ALG_ARGON2ID13) != 0)
        fail(ErrorCode::io, "password hashing ran out of memory");
    return out;
}

bool verify_password(const std::string& digest, const std::string& password) {
    ensure_sodium();
    return crypto_pwhash_str_verify(digest.c_str(), password.data(), password.size()) == 0;
}

// --- UserDirectory ---------------------------------------------------------

UserDirectory::UserDirectory(fs::path file, HashStrength strength)
    : file_(std::move(file)), strength_(strength),
      dummy_digest_(hash_password(random_token(), strength)) {
    load();
}

void UserDirectory::load() {
    if (!fs::exists(file_)) return;
    std::ifstream in(file_);
    try {
        const auto doc = nlohmann::json::parse(in);
        next_id_ = doc.at("next_id").get<std::int64_t>();
        for (const auto& u : doc.at("users")) {
            UserRecord r{u.at("user_id"), u.at("name"), u.at("email"), u.at("contact"),
                         u.at("password_digest"), u.at("created_ts")};
            id_by_email_[r.email] = r.user_id;
            by_id_[r.user_id] = std::move(r);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::io, "corrupt user file " + file_.string() + ": " + e.what());
    }
}

void UserDirectory::save() const {
    nlohmann::json users = nlohmann::json::array();
    for (const auto& [id, r] : by_id_) {
        users.push_back({{"user_id", r.user_id},
                         {"name", r.name},
                         {"email", r.email},
                         {"contact", r.contact},
                         {"password_digest", r.password_digest},
                         {"created_ts", r.created_ts}});
    }
    save_json_atomic(file_, {{"next_id", next_id_}, {"users", users}});
}

std::string UserDirectory::register_user(const std::string& name, const std::string& email,
                                         const std::string& contact, const std::string& password,
                                         const std::string& c_password, std::int64_t now_ms) {
    if (name.empty() || email.empty() || contact.empty() || password.empty() || c_password.empty())
        fail(ErrorCode::validation, "all registration fields are required");
    if (!valid_email(email)) fail(ErrorCode::validation, "email is not valid");
    if (password != c_password) fail(ErrorCode::validation, "password and confirmation differ");
    if (password.size() < 8) fail(ErrorCode::validation, "password must be at least 8 characters");

    std::string digest = hash_password(password, strength_);
    std::lock_guard lock(mu_);
    if (id_by_email_.contains(email)) fail(ErrorCode::conflict, "email already registered");
    UserRecord r{"u" + std::to_string(next_id_), name, email, contact, std::move(digest), now_ms};
    ++next_id_;
    const std::string id = r.user_id;
    id_by_email_[email] = id;
    by_id_[id] = std::move(r);
    try {
        save();
    } catch (...) {
        by_id_.erase(id);
        id_by_email_.erase(email);
        --next_id_;
        throw;
    }
    return id;
}

std::optional<std::string> UserDirectory::verify(const std::string& email,
                                                 const std::string& password) const {
    std::string digest = dummy_digest_;
    std::optional<std::string> id;
    {
        std::lock_guard lock(mu_);
        if (auto it = id_by_email_.find(email); it != id_by_email_.end()) {
            id = it->second;
            digest = by_id_.at(it->second).password_digest;
        }
    }
    // Unknown emails still pay for one verification.
    const bool ok = verify_password(digest, password);
    if (!ok || !id) return std::nullopt;
    return id;
}

std::optional<UserRecord> UserDirectory::find(const std::string& user_id) const {
    std::lock_guard lock(mu_);
    auto it = by_id_.find(user_id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

// --- SessionTable ----------------------------------------------------------

SessionToken SessionTable::issue(const std::string& user_id, std::int64_t now_ms, std::int64_t ttl_ms) {
    SessionToken s{random_token(), user_id, now_ms + ttl_ms};
    std::lock_guard lock(mu_);
    sessions_[s.token] = s;
    return s;
}

std::optional<std::string> SessionTable::user_for(const std::string& token, std::int64_t now_ms) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(token);
    if (it == sessions_.end()) return std::nullopt;
    if (now_ms >= it->second.expiry_ts) {
        sessions_.erase(it);
        return std::nullopt;
    }
    return it->second.user_id;
}

// --- DeviceTokens ----------------------------------------------------------

DeviceTokens::DeviceTokens(fs::path file) : file_(std::move(file)) {
    std::lock_guard lock(mu_);
    load_locked();
}

std::string DeviceTokens::digest(const std::string& token) {
    ensure_sodium();
    unsigned char out[crypto_generichash_BYTES];
    crypto_generichash(out, sizeof out, reinterpret_cast<const unsigned char*>(token.data()),
                       token.size(), nullptr, 0);
    return to_hex(out, sizeof out);
}

void DeviceTokens::load_locked() {
    std::error_code ec;
    const auto mtime = fs::last_write_time(file_, ec);
    if (ec) return;
    std::ifstream in(file_);
    try {
        const auto doc = nlohmann::json::parse(in);
        device_by_digest_.clear();
        for (const auto& d : doc.at("devices"))
            device_by_digest_[d.at("token_digest").get<std::string>()] = d.at("device").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::io, "corrupt token store " + file_.string() + ": " + e.what());
    }
    loaded_mtime_ = mtime;
}

std::string DeviceTokens::provision(const std::string& device_id) {
    if (!valid_segment(device_id))
        fail(ErrorCode::validation, "device id must match [A-Za-z0-9_]+");
    const std::string token = random_token();
    std::lock_guard lock(mu_);
    load_locked();
    device_by_digest_[digest(token)] = device_id;
    nlohmann::json devices = nlohmann::json::array();
    for (const auto& [dig, dev] : device_by_digest_)
        devices.push_back({{"device", dev}, {"token_digest", dig}});
    save_json_atomic(file_, {{"devices", devices}});
    std::error_code ec;
    loaded_mtime_ = fs::last_write_time(file_, ec);
    return token;
}

std::optional<std::string> DeviceTokens::device_for(const std::string& token) {
    if (token.empty()) return std::nullopt;
    const auto dig = digest(token);
    std::lock_guard lock(mu_);
    if (auto it = device_by_digest_.find(dig); it != device_by_digest_.end()) return it->second;
    std::error_code ec;
    const auto mtime = fs::last_write_time(file_, ec);
    if (!ec && mtime != loaded_mtime_) {
        load_locked();
        if (auto it = device_by_digest_.find(dig); it != device_by_digest_.end()) return it->second;
    }
    return std::nullopt;
}

} // namespace cardiotel::gateway
