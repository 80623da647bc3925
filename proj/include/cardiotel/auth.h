#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>

namespace cardiotel::gateway {

// 128 bits from the system CSPRNG, hex encoded.
std::string random_token();

// One "@", non-empty local and domain parts.
bool valid_email(const std::string& email);

enum class HashStrength { Interactive, Minimal };

HashStrength hash_strength_from_string(const std::string& name);

// Salted memory-hard digest in the encoded Argon2id string form.
std::string hash_password(const std::string& password, HashStrength strength);
bool verify_password(const std::string& digest, const std::string& password);

struct UserRecord {
    std::string user_id;
    std::string name;
    std::string email;
    std::string contact;
    std::string password_digest;
    std::int64_t created_ts = 0;
};

// Registered users, persisted as JSON and rewritten atomically on change.
class UserDirectory {
public:
    UserDirectory(std::filesystem::path file, HashStrength strength);

    // Throws Error{validation} or Error{conflict}.
    std::string register_user(const std::string& name, const std::string& email,
                              const std::string& contact, const std::string& password,
                              const std::string& c_password, std::int64_t now_ms);

    // user_id when the password matches; unknown email and wrong password
    // take the same path.
    std::optional<std::string> verify(const std::string& email, const std::string& password) const;

    std::optional<UserRecord> find(const std::string& user_id) const;

private:
    void load();
    void save() const;

    std::filesystem::path file_;
    HashStrength strength_;
    std::string dummy_digest_;
    mutable std::mutex mu_;
    std::map<std::string, UserRecord> by_id_;
    std::map<std::string, std::string> id_by_email_;
    std::int64_t next_id_ = 1;
};

struct SessionToken {
    std::string token;
    std::string user_id;
    std::int64_t expiry_ts = 0;
};

class SessionTable {
public:
    SessionToken issue(const std::string& user_id, std::int64_t now_ms, std::int64_t ttl_ms);
    // user_id for a live token; expired tokens are evicted.
    std::optional<std::string> user_for(const std::string& token, std::int64_t now_ms);

private:
    std::mutex mu_;
    std::map<std::string, SessionToken> sessions_;
};

// Static per-device tokens. Only a digest of each token is stored on disk;
// the file is re-read on a lookup miss so tokens provisioned by another
// process take effect without a restart.
class DeviceTokens {
public:
    explicit DeviceTokens(std::filesystem::path file);

    std::string provision(const std::string& device_id);
    std::optional<std::string> device_for(const std::string& token);

private:
    void load_locked();
    static std::string digest(const std::string& token);

    std::filesystem::path file_;
    std::mutex mu_;
    std::map<std::string, std::string> device_by_digest_;
    std::filesystem::file_time_type loaded_mtime_{};
};

} // namespace cardiotel::gateway
